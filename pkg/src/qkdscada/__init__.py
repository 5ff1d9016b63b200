"""Co-simulation engine for QKD-secured SCADA control chains."""

__version__ = "0.1.0"
