import os
import sys
import json
import hashlib
import subprocess
import numpy as np
from enum import Enum
from loguru import logger
from pathlib import Path

CACHE_ENV = 'SPECTRASEG_CACHE'


class Metavar(Enum):
    """This class is used to display intuitive input types via the metavar field of argparse."""

    file = "<file>"
    str = "<str>"
    folder = "<folder>"
    int = "<int>"
    list = "<list>"
    float = "<float>"

    def __str__(self):
        return self.value


class ArgParseException(Exception):
    pass


def get_arguments(parser, args):
    """Get arguments from function input or command line.

    Arguments:
        parser (argparse.ArgumentParser): ArgumentParser object
        args (list): either a list of arguments or None. The list
            should be formatted like this:
            ["synth", "--seed", "7", "--out", "SOME_DIR"]
    """
    try:
        args = parser.parse_args(args)
    except SystemExit as e:
        if e.code != 0:  # Calling `--help` raises SystemExit with 0 exit code (i.e. not an ArgParseException)
            raise ArgParseException('Error parsing args')
        else:
            sys.exit(0)

    return args


def check_exe(name):
    """Ensure that a program exists.

    Args:
        name (str): Name or path to program.
    Returns:
        str or None: path of the program or None
    """
    for path in os.environ.get("PATH", "").split(os.pathsep):
        exe_file = Path(path.strip('"'), name)
        if exe_file.is_file() and os.access(exe_file, os.X_OK):
            return str(exe_file)
    return None


def _run_git(*args):
    p = subprocess.Popen(["git", *args], stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                         cwd=__spectraseg_dir__)
    output, _ = p.communicate()
    if p.returncode == 0:
        return output.decode().strip()
    return None


def _git_info(commit_env='SPECTRASEG_COMMIT', branch_env='SPECTRASEG_BRANCH'):
    """Get spectraseg version info from GIT.

    Returns:
        str, str, str, str: installation type, commit, branch, version.
    """
    commit = os.getenv(commit_env, "unknown")
    branch = os.getenv(branch_env, "unknown")
    if check_exe("git") and Path(__spectraseg_dir__, ".git").is_dir():
        commit = _run_git("rev-parse", "HEAD") or commit
        branch = _run_git("rev-parse", "--abbrev-ref", "HEAD") or branch

    install_type = 'git' if commit != 'unknown' else 'package'

    path_version = Path(__spectraseg_dir__, 'spectraseg', 'version.txt')
    with path_version.open() as f:
        version = f.read().strip()

    return install_type, commit, branch, version


def _version_string():
    install_type, commit, branch, version = _git_info()
    if install_type == "package":
        return version
    return f"{install_type}-{branch}-{commit}"


__spectraseg_dir__ = Path(__file__).resolve().parent.parent
__version__ = _version_string()


def init_spectraseg():
    """Initialize spectraseg for typical terminal usage."""
    logger.info('\nspectraseg ({})\n'.format(__version__))


def get_cache_dir():
    """Directory for intermediate artifacts (preprocessed cubes, superpixel maps).

    Returns:
        Path or None: the directory named by ``SPECTRASEG_CACHE``, created on demand, or None if unset.
    """
    path_cache = os.getenv(CACHE_ENV)
    if not path_cache:
        return None
    path_cache = Path(path_cache)
    path_cache.mkdir(parents=True, exist_ok=True)
    return path_cache


def file_sha256(path):
    sha256_hash = hashlib.sha256()
    with open(path, "rb") as f:
        for byte_block in iter(lambda: f.read(4096), b""):
            sha256_hash.update(byte_block)
    return sha256_hash.hexdigest()


def save_json(obj, path):
    """Write ``obj`` as indented JSON with sorted keys so reruns are byte-identical."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fhandle:
        json.dump(obj, fhandle, indent=2, sort_keys=True, default=_json_default)
        fhandle.write("\n")


def load_json(path):
    with open(path, "r") as fhandle:
        return json.load(fhandle)


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def display_selected_model_spec(kind, modality, spec):
    """Display in terminal the selected model and its parameters.

    Args:
        kind (str): Spatial granularity of the model.
        modality (str): Input modality.
        spec (dict): Build specification of the network.
    """
    logger.info(f'Selected architecture: {kind} / {modality}, with the following parameters:')
    for k in sorted(spec):
        logger.info(f'\t{k}: {spec[k]}')
