from importlib import metadata
from packaging import version
from exceptions import StaleArtifactError

LOCAL_VERSION = "0.4.0"
WORKSPACE_LAYOUT_VERSION = "1.0"
TRACKED_PACKAGES = ["numpy", "scipy", "torch", "PyYAML"]


class VersionInfo:
    _instance = None

    # NOTE this is a singleton class
    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(VersionInfo, cls).__new__(cls)

            cls.layout_version = version.parse(WORKSPACE_LAYOUT_VERSION)
        return cls._instance

    def get_package_versions(self) -> dict[str, str]:
        versions = {"multistage": LOCAL_VERSION, "layout": WORKSPACE_LAYOUT_VERSION}
        for package in TRACKED_PACKAGES:
            try:
                versions[package] = metadata.version(package)
            except metadata.PackageNotFoundError:
                versions[package] = "missing"
        return versions

    def check_layout(self, manifest: dict, source: str):
        """Rejects artifacts written by a workspace layout with another major version."""
        written = manifest.get("versions", {}).get("layout")
        if written is None:
            raise StaleArtifactError(f"{source}: manifest carries no layout version")
        try:
            written_version = version.parse(written)
        except version.InvalidVersion as e:
            raise StaleArtifactError(f"{source}: unreadable layout version ({e})") from e

        if written_version.major != self.layout_version.major:
            raise StaleArtifactError(
                f"{source}: written by layout {written}, this build reads {WORKSPACE_LAYOUT_VERSION}"
            )
