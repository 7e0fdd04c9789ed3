from services.printr import Printr
from services.version_info import LOCAL_VERSION

printr = Printr()


class Splashscreen:
    @staticmethod
    def get_pluralized_stage(count=1):
        return f"stage{'' if count == 1 else 's'}"

    @staticmethod
    def show(pipeline, problem: str, run_hash: str = ""):
        """Summary printed before training: registered stages and the ones that failed to build."""
        if printr.is_quiet():
            return
        stages = pipeline.get_stages()
        broken_stages = pipeline.get_broken_stages()

        print("")
        Printr.box_start()
        Printr.box_print(f"{Printr.BOLD}multistage {Printr.NORMAL_WEIGHT}{Printr.FAINT}v{LOCAL_VERSION}{Printr.NORMAL_WEIGHT}")
        Printr.box_print(f"problem: {Printr.clr(problem, Printr.BLUE)}")
        if run_hash:
            Printr.box_print(f"run:     {Printr.clr(run_hash[:12], Printr.GREY)}")
        Printr.box_print("")
        if stages:
            Printr.box_print(
                f"{Printr.BLUE}{Printr.BOLD}{len(stages)}{Printr.CLEAR} {Splashscreen.get_pluralized_stage(len(stages))} registered:"
            )
            Printr.box_print("")
            for k, spec in enumerate(stages):
                training = spec.training
                Printr.box_print(
                    f" 〈{Printr.BLUE}{k + 1:^5}{Printr.CLEAR}〉  {spec.selector.describe():<22} "
                    f"{Printr.FAINT}epochs {training.epochs}, lr {training.lr}, seed {training.seed}{Printr.NORMAL_WEIGHT}"
                )
        else:
            Printr.box_print(f" {Printr.clr('WARNING', Printr.YELLOW)}")
            Printr.box_print(" No functional stage is configured. Please check the `stages` section.")

        if broken_stages:
            Printr.box_print("")
            Printr.box_print(f" {Printr.clr('WARNING', Printr.YELLOW)}")
            Printr.box_print("")
            Printr.box_print(
                f"{Printr.RED}{Printr.BOLD}{len(broken_stages)}{Printr.CLEAR} "
                f"{Splashscreen.get_pluralized_stage(len(broken_stages))} could not be built:"
            )
            Printr.box_print("")
            for stage in broken_stages:
                Printr.box_print(f" 〈{Printr.RED}{stage['name']:^20}{Printr.CLEAR}〉  {stage['error']}")

        Printr.box_end()
        print("")
