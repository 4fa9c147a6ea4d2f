"""Industry- and firm-level product spaces for powertrain diversification analysis."""

__version__ = "0.1.0"
