"""Cost-aware DOP planning, elastic execution simulation, and tuning advice."""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
