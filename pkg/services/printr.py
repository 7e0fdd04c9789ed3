from typing import Literal


class Printr(object):
    _instance = None

    LILA = "\033[95m"
    BLUE = "\033[94m"
    CYAN = "\033[96m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    RED = "\033[91m"
    GREY = "\033[90m"
    CLEAR = "\033[0m"
    BOLD = "\033[1m"
    FAINT = "\033[2m"
    NORMAL_WEIGHT = "\033[22m"
    UNDERLINE = "\033[4m"
    END_UNDERLINE = "\033[24m"
    OVERLINE = "\033[53m"
    END_OVERLINE = "\033[55m"

    tags = {
        "info": BLUE,
        "warn": YELLOW,
        "err": RED,
        "green": GREEN,
        "blue": BLUE,
        "violet": LILA,
        "grey": GREY,
    }

    CHANNEL = Literal["main", "error", "warning", "info"]
    VERBOSITY = Literal["quiet", "normal", "verbose"]

    # NOTE this is a singleton class
    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(Printr, cls).__new__(cls)

            cls.verbosity: Printr.VERBOSITY = "normal"
            cls.use_colors: bool = True
            cls.history: list[tuple[str, str]] = []
        return cls._instance

    def set_verbosity(self, verbosity: VERBOSITY):
        self.verbosity = verbosity

    def set_colors(self, enabled: bool):
        self.use_colors = enabled

    def is_quiet(self) -> bool:
        return self.verbosity == "quiet"

    def is_verbose(self) -> bool:
        return self.verbosity == "verbose"

    def print(self, text, output_channel: CHANNEL = "main", tags=None):
        self.history.append((output_channel, str(text)))
        # keep the history bounded for long training runs
        if len(self.history) > 2000:
            del self.history[:1000]

        if output_channel == "info" and not self.is_verbose():
            return
        if output_channel == "main" and self.is_quiet():
            return

        color = self.tags.get(tags) if isinstance(tags, str) else None
        if color and self.use_colors:
            print(self.clr(text, color))
        else:
            print(text)

    def print_err(self, text):
        self.print(text, output_channel="error", tags="err")

    def print_warn(self, text):
        self.print(text, output_channel="warning", tags="warn")

    def print_info(self, text):
        self.print(text, output_channel="info", tags="grey")

    @staticmethod
    def clr(text, color_format):
        return f"{color_format}{text}{Printr.CLEAR}"

    @staticmethod
    def box_start():
        print(f"{Printr.CYAN}⎡{Printr.OVERLINE}{'⑊' * 78}{Printr.END_OVERLINE}⎤")
        print(f"⎢{Printr.CLEAR}")

    @staticmethod
    def box_end():
        print(f"{Printr.CYAN}⎢")
        print(f"⎣{Printr.UNDERLINE}{'⑊' * 78}{Printr.END_UNDERLINE}⎦{Printr.CLEAR}")

    @staticmethod
    def box_print(text):
        print(f"{Printr.CYAN}⎜{Printr.CLEAR}  {text}")
