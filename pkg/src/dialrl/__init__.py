"""Word-level dialogue policy workbench."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def toy_schema_path() -> Path:
    """Path to the bundled two-domain toy schema."""
    return Path(resources.files("dialrl").joinpath("data/toy_schema.json"))


def toy_database_path() -> Path:
    """Path to the bundled toy entity database (8 hotels, 6 restaurants)."""
    return Path(resources.files("dialrl").joinpath("data/toy_database.json"))
