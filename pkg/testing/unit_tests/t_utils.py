from pathlib import Path
from spectraseg.utils import init_spectraseg
from testing.common_testing_util import remove_tmp_dir, path_repo_root, path_temp, path_data_testing_tmp, \
    generate_dataset

__test_dir__ = Path(path_repo_root, 'testing/unit_tests')
__data_testing_dir__ = path_data_testing_tmp
__tmp_dir__ = path_temp

init_spectraseg()


def create_tmp_dir(generate_data_testing=False, **overrides):
    """Create a temporary directory for unit test outputs.

    1. Remove the ``tmp`` directory if it exists.
    2. Optionally write the synthetic testing dataset to ``tmp/data_testing``.

    Any data files created during testing go into the ``tmp`` directory, which is created/removed for each test.

    Args:
        generate_data_testing (bool): Write the synthetic dataset.
        overrides: SynthConfig fields for the generated dataset.

    Returns:
        DatasetIndex or None: index of the generated dataset.
    """
    remove_tmp_dir()
    Path(path_temp).mkdir(parents=True)
    if generate_data_testing:
        return generate_dataset(__data_testing_dir__, **overrides)
    return None
