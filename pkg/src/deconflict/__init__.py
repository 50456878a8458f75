"""Aircraft conflict resolution by speed and heading control, deterministic and robust."""
__version__ = "0.1.0"
