"""Multi-task learning with structured hinge losses for F1 and AUC, solved by ADMM."""

from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"
