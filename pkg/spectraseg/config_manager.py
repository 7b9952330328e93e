import copy
import json
import collections.abc
from loguru import logger
from pathlib import Path
from spectraseg import utils as sps_utils
from spectraseg.keywords import ConfigKW, LoaderParamsKW

PATH_DEFAULT_CONFIG = Path(sps_utils.__spectraseg_dir__, "spectraseg", "config", "config_default.json")

# Legacy name -> current name, applied at any nesting level
RENAMED_KEYS = {'log_directory': ConfigKW.PATH_OUTPUT,
                'workers': LoaderParamsKW.N_WORKERS,
                'jobs': ConfigKW.N_JOBS}


def update(d, u):
    """Merge ``u`` into ``d`` section by section.

    Nested mappings are merged recursively; any other value of ``u`` replaces the one in ``d``, except that a
    scalar never replaces a whole section.

    Args:
        d (dict): Base dictionary, modified in place.
        u (dict): Overriding dictionary.

    Returns:
        dict: ``d`` after the merge.
    """
    for key, value in u.items():
        current = d.get(key)
        is_section = isinstance(current, collections.abc.Mapping)
        if isinstance(value, collections.abc.Mapping):
            d[key] = update(current if is_section else {}, value)
        elif not is_section:
            d[key] = value
    return d


def added_keys(user, merged, prefix=""):
    """``section:key`` names present in ``merged`` but not set by ``user``."""
    names = []
    for key, value in merged.items():
        name = prefix + key
        if key not in user:
            names.append(name)
        elif isinstance(value, collections.abc.Mapping):
            sub = user[key] if isinstance(user[key], collections.abc.Mapping) else {}
            names += added_keys(sub, value, name + ": ")
    return names


def rename_legacy_keys(config):
    """Rename the keys listed in ``RENAMED_KEYS`` in place, recursively."""
    for key in list(config):
        if isinstance(config[key], collections.abc.Mapping):
            rename_legacy_keys(config[key])
        if key in RENAMED_KEYS:
            logger.warning(f"Configuration key '{key}' is deprecated, use '{RENAMED_KEYS[key]}'")
            config[RENAMED_KEYS[key]] = config.pop(key)
    return config


def load_json(config_path):
    with open(config_path, "r") as fhandle:
        return json.load(fhandle)


def check_config_path(path_config):
    """Raise unless ``path_config`` is an existing ``.json`` file."""
    path = Path(path_config).absolute()
    if path.is_dir():
        raise IsADirectoryError(f"Configuration path is a directory, not a file: {path}")
    if not path.exists():
        raise ValueError(f"Configuration file does not exist: {path}")
    if path.suffix in ('.yaml', '.yml'):
        raise ValueError(f"YAML configuration files are not supported, convert {path} to JSON")
    if path.suffix != '.json':
        raise ValueError(f"Configuration file must be a .json file: {path}")


class ConfigurationManager(object):
    """User configuration merged over the package defaults.

    Args:
        path_context (str): JSON configuration file. If None, only the package defaults are used.

    Attributes:
        config_default (dict): ``spectraseg/config/config_default.json``.
        context_original (dict): Configuration as read from ``path_context``.
        config_updated (dict): Defaults with the user configuration merged over them.
    """
    def __init__(self, path_context=None):
        self.path_context = path_context
        if path_context is not None:
            check_config_path(path_context)
        self.config_default = load_json(PATH_DEFAULT_CONFIG)
        self.context_original = load_json(path_context) if path_context is not None else {}
        user = rename_legacy_keys(copy.deepcopy(self.context_original))
        self.config_updated = update(copy.deepcopy(self.config_default), user)
        if self.config_updated[ConfigKW.DEBUGGING]:
            defaults = added_keys(user, self.config_updated)
            logger.info(f"Default values used for {len(defaults)} keys:")
            for name in defaults:
                logger.info(f"    {name}")

    def get_config(self):
        return self.config_updated
