import pytest
import os
from pathlib import Path
import shutil

import ialora_hub.data_preprocessing as dp


def pytest_configure(config):
    """
    Creates global data used in tests

    Creates global data used in tests. Contains:

    - data_folder_path: Directory storing temporary test data (deleted after testing)
    - result_folder_path: Directory storing temporary result data (deleted after
      testing)
    - case_study_folder_path: Directory storing a temporary experiment
      configuration (deleted after testing)
    - golden_folder_path: Directory containing frozen reference files
    - root_folder_path: root directory

    :param config: Configuration for pytest
    """
    config.data_folder_path = Path("tests/test_data_tmp")
    config.result_folder_path = Path("tests/test_results_tmp")
    config.case_study_folder_path = Path("tests/test_case_tmp")
    config.golden_folder_path = Path("tests/golden")
    config.root_folder_path = Path(".")


@pytest.fixture(autouse=True)
def setup_before_tests(request):
    """
    Fixture to make test directories and clean-up after test

    Creates directories required for testing and deletes these directories after
    testing.

    :param request: request containing settings for testing
    """
    # Create Folders
    data_folder_path = request.config.data_folder_path
    result_folder_path = request.config.result_folder_path
    case_study_folder_path = request.config.case_study_folder_path

    for folder in (data_folder_path, result_folder_path, case_study_folder_path):
        if not os.path.exists(folder):
            os.makedirs(folder)

    # Create experiment configuration
    dp.create_experiment_templates(case_study_folder_path)

    # Yield control back to the test functions
    yield

    # Clean up after testing (deletes folders again)
    for folder in (data_folder_path, result_folder_path, case_study_folder_path):
        if os.path.exists(folder) and os.path.isdir(folder):
            shutil.rmtree(folder)
