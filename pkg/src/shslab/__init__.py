"""shslab: segmented switched-linear grid models, probing design, and
residual-based contingency detection for PV-battery distribution feeders."""

from importlib import resources

__version__ = "0.1.0"


def data_path(name: str):
    """Path to a bundled data document (e.g. 'paper6bus.json')."""
    return resources.files(__package__).joinpath("data", name)
