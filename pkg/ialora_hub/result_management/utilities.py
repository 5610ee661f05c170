import os
from pathlib import Path


def create_unique_folder_name(path: Path, name: str) -> Path:
    """
    Creates a unique folder name, in case the specified name already exists in
    the given path.

    The unique folder name is either the given folder name if the folder did not
    exist yet in the given path, or the given folder name with an added suffix
    (_1, _2, _3, etc.).

    :param Path path: path to check
    :param str name: folder name
    :return: path to the folder with the unique folder name
    :rtype: Path
    """
    path = Path(path)
    folder_path = path / name
    counter = 1
    while folder_path.is_dir():
        folder_path = path / f"{name}_{counter}"
        counter += 1
    return folder_path


def create_save_folder(save_path: Path):
    """
    Creates a new folder at save_path, including missing parents

    :param Path save_path: path at which the folder is created
    """
    os.makedirs(save_path, exist_ok=True)


def to_builtin(value):
    """
    Converts numpy scalars and arrays inside nested dicts and lists to plain
    python values
    """
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if hasattr(value, "tolist"):
        return value.tolist()
    return value
