"""Grey-box RC thermal model identification and transfer for
smart-thermostat time series."""

__version__ = "0.1.0"

from . import baselines, estimators, fleet, harness, rcnet, timeseries  # noqa: F401
