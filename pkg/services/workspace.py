import os
from services.artifact_store import digest, read_json
from services.file_creator import FileCreator
from services.printr import Printr
from services.version_info import VersionInfo

WORKSPACE_ENV = "MSSTAGE_WORKSPACE"
DEFAULT_WORKSPACE = "workspace"
ARTIFACT_KINDS = ("basis", "data", "runs")
MANIFEST = "manifest.json"

printr = Printr()


class Workspace:
    """Directory tree `basis/<hash>`, `data/<hash>`, `runs/<hash>`; the hash covers everything that shaped an artifact."""

    def __init__(self, root_dir: str | None = None):
        self.root_dir = root_dir or os.environ.get(WORKSPACE_ENV) or os.path.join(".", DEFAULT_WORKSPACE)

    @staticmethod
    def key(kind: str, inputs: dict) -> str:
        if kind not in ARTIFACT_KINDS:
            raise ValueError(f"unknown artifact kind '{kind}'")
        return digest({"kind": kind, "layout": VersionInfo().get_package_versions()["layout"], **inputs})

    def directory(self, kind: str, artifact_hash: str) -> str:
        return os.path.join(self.root_dir, kind, artifact_hash)

    def prepare(self, kind: str, artifact_hash: str) -> FileCreator:
        return FileCreator(os.path.join(self.root_dir, kind), artifact_hash)

    def is_complete(self, kind: str, artifact_hash: str) -> bool:
        """A finished artifact has a readable manifest from a compatible layout."""
        manifest_path = os.path.join(self.directory(kind, artifact_hash), MANIFEST)
        if not os.path.isfile(manifest_path):
            return False
        VersionInfo().check_layout(read_json(manifest_path), manifest_path)
        return True

    def lookup(self, kind: str, inputs: dict) -> tuple[str, bool]:
        """(hash, cache hit) for the given inputs."""
        artifact_hash = self.key(kind, inputs)
        hit = self.is_complete(kind, artifact_hash)
        if hit:
            printr.print_info(f"{kind}/{artifact_hash[:12]} found in workspace")
        return artifact_hash, hit

    def latest(self, kind: str) -> str | None:
        """Hash of the most recently written complete artifact of a kind."""
        parent = os.path.join(self.root_dir, kind)
        if not os.path.isdir(parent):
            return None
        candidates = [
            entry
            for entry in os.listdir(parent)
            if os.path.isfile(os.path.join(parent, entry, MANIFEST))
        ]
        if not candidates:
            return None
        return max(candidates, key=lambda entry: os.path.getmtime(os.path.join(parent, entry, MANIFEST)))
