"""Heterogeneous-radar place recognition: 4D and spinning radar scans are
mapped into one RCS polar BEV representation and described with a
rotation-robust optimal-transport aggregation."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, DataError, HetRadarError,  # noqa: E402
                     NumericalError)
from .scan_model import FourDScan, PolarGrid, PolarImage, SpinningScan  # noqa: E402

__all__ = ["ConfigError", "ConvergenceError", "DataError", "FourDScan", "HetRadarError",
           "NumericalError", "PolarGrid", "PolarImage", "SpinningScan", "__version__"]
