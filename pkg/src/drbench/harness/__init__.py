"""Config-driven command line front end: runs, manifests and reports."""

from .cli import main
from .config import OUTPUT_ROOT_ENV, LoadedConfig, bundled_config, load_config
from .figures import row_percentages
from .manifest import MANIFEST_NAME
from .report import build_report, comparison_table

__all__ = [
    "MANIFEST_NAME", "OUTPUT_ROOT_ENV", "LoadedConfig", "build_report", "bundled_config", "comparison_table", "load_config",
    "main", "row_percentages",
]
