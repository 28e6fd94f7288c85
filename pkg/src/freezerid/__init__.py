"""Grey-box identification of ultra-low temperature freezer heat dynamics."""
from .model import DEFAULT_TRUTH, PARAM_NAMES, Dataset, InputSeries, ThermalParams, ValidationError

__version__ = "0.1.0"
__all__ = ["DEFAULT_TRUTH", "PARAM_NAMES", "Dataset", "InputSeries", "ThermalParams", "ValidationError"]
