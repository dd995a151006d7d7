"""Transfer-capability engine: deterministic ATC by continuation power flow
and probabilistic ATC by a low-rank polynomial surrogate over correlated
renewable and load uncertainties."""

from importlib import resources

__version__ = "0.1.0"


def data_path(name: str):
    """Path to a bundled case or scenario file (context manager not needed;
    files live on disk in an installed or editable tree)."""
    return resources.files(__package__) / "data" / name


def read_data(name: str) -> str:
    return (resources.files(__package__) / "data" / name).read_text()
