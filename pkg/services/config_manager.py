import copy
import os
import yaml
from exceptions import ConfigError
from services.artifact_store import digest
from services.printr import Printr

SYSTEM_CONFIG_PATH = "configs/system"
EXPERIMENT_CONFIG_PATH = "configs"
DEFAULT_CONFIG = "defaults.yaml"
CONFIG_SUFFIXES = (".yaml", ".yml", ".json")

# flag name -> path into the merged config
FLAG_PATHS = {
    "seed": ("dataset", "seed"),
    "count": ("dataset", "count"),
    "workers": ("dataset", "workers"),
    "problem": ("problem", "tag"),
    "pool": ("problem", "pool"),
    "stride": ("problem", "stride"),
    "ell": ("basis", "ell"),
}

# stage inputs whose window size follows --pool / --stride
POOLED_INPUTS = ("max_pool", "steady_pooled_kappa")
POOL_FLAGS = ("pool", "stride")


def deep_merge(source: dict, updates: dict) -> dict:
    """Recursively merges `updates` into `source` (in place) and returns it."""
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(source.get(key), dict):
            deep_merge(source[key], value)
        else:
            source[key] = copy.deepcopy(value)
    return source


def get_value(config: dict, section: str, key: str, default, kind=float):
    """`config[section][key]` converted to `kind`; a bad value names the offending field."""
    node = config.get(section) or {}
    if not isinstance(node, dict):
        raise ConfigError(f"config section '{section}' must be a mapping")
    value = node.get(key, default)
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{section}.{key}: expected true or false, got {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got {value!r}") from e


class ConfigManager:
    def __init__(self, app_root_path: str):
        self.printr = Printr()
        self.system_config_path = os.path.join(app_root_path, SYSTEM_CONFIG_PATH)
        self.experiment_config_path = os.path.join(app_root_path, EXPERIMENT_CONFIG_PATH)

    def __read_config_file(self, config_file: str) -> dict:
        if not os.path.isfile(config_file):
            raise ConfigError(f"config file not found: {config_file}")
        with open(config_file, "r", encoding="UTF-8") as stream:
            try:
                parsed_config = yaml.safe_load(stream)
            except yaml.YAMLError as e:
                mark = getattr(e, "problem_mark", None)
                where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
                problem = getattr(e, "problem", None) or str(e)
                raise ConfigError(f"could not parse {config_file}{where}: {problem}") from e
        if parsed_config is None:
            return {}
        if not isinstance(parsed_config, dict):
            raise ConfigError(f"{config_file} must hold a mapping at the top level")
        return parsed_config

    def resolve(self, config_name: str) -> str:
        """A path, or the name of a shipped experiment config (`steady2`, `smoke.yaml`, ...)."""
        if os.path.isfile(config_name):
            return config_name
        candidates = [os.path.join(self.experiment_config_path, config_name)]
        candidates += [os.path.join(self.experiment_config_path, config_name + suffix) for suffix in CONFIG_SUFFIXES]
        for candidate in candidates:
            if os.path.isfile(candidate):
                return candidate
        raise ConfigError(f"config file not found: {config_name}")

    def load_defaults(self) -> dict:
        return self.__read_config_file(os.path.join(self.system_config_path, DEFAULT_CONFIG))

    def load(self, config_name: str | None = None, overrides: dict | None = None) -> dict:
        """System defaults, then the experiment config, then flag overrides (flags win)."""
        config = self.load_defaults()
        if config_name:
            path = self.resolve(config_name)
            self.printr.print_info(f"loading config {path}")
            deep_merge(config, self.__read_config_file(path))
        for flag, value in (overrides or {}).items():
            if value is None:
                continue
            if flag not in FLAG_PATHS:
                raise ConfigError(f"unknown override '{flag}'")
            section, key = FLAG_PATHS[flag]
            node = config.setdefault(section, {})
            if not isinstance(node, dict):
                raise ConfigError(f"config section '{section}' must be a mapping")
            node[key] = value
            if flag in POOL_FLAGS:
                self.apply_pool_flag(config, flag, value)
        return config

    @staticmethod
    def apply_pool_flag(config: dict, flag: str, value: int):
        """--pool / --stride also size the pooled stage inputs and the steady pooled variant."""
        steady = config.setdefault("steady", {})
        if isinstance(steady, dict):
            steady[flag] = value
        for stage in config.get("stages") or []:
            stage_input = stage.get("input") if isinstance(stage, dict) else None
            if isinstance(stage_input, dict) and stage_input.get("type") in POOLED_INPUTS:
                stage_input[flag] = value

    def write(self, file_path: str, content: dict):
        with open(file_path, "w", encoding="UTF-8") as stream:
            yaml.safe_dump(content, stream, sort_keys=True)

    @staticmethod
    def config_hash(config: dict) -> str:
        return digest(config)
