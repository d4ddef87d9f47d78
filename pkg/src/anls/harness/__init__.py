from .config import ConfigError, ExperimentConfig, parse_config, emit_config
from .output import RunRecord, emit_csv, emit_json, read_csv_table, read_json_table
from .thresholds import THRESHOLDS, THRESHOLDS_VERSION

__all__ = [
    "ConfigError", "ExperimentConfig", "parse_config", "emit_config",
    "RunRecord", "emit_csv", "emit_json", "read_csv_table", "read_json_table",
    "THRESHOLDS", "THRESHOLDS_VERSION",
]
