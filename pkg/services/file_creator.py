from os import path, makedirs


class FileCreator:
    def __init__(self, root_dir: str, subdir: str):
        """Creates the given subdirectory below the root dir if it doesn't exist yet.
        Use get_full_file_path to address files within the subdirectory afterwards.
        """

        self.file_dir: str = path.join(root_dir, subdir)
        if not path.exists(self.file_dir):
            makedirs(self.file_dir)

    def get_full_file_path(self, file_name: str) -> str:
        return path.join(self.file_dir, file_name)

    def has_file(self, file_name: str) -> bool:
        return path.isfile(self.get_full_file_path(file_name))
