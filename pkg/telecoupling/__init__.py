"""
Telecoupling - measure how land-use change in one region harms people downwind.
"""

__version__ = "0.1.0"
__author__ = "Daniel Kim"
__email__ = "daniel@example.com"

from .errors import TelecouplingError, InputError, SpecificationError, EstimationError
from .models import City, CityRegistry, ColumnRole, PanelTable, SynthConfig, WindSampleTable
from .aoe import ScoreParams, ScoreMatrix, WindBin, WindBins
from .econometrics import DesignSpec, FitResult
from .shiftshare import ShiftShareDesign, PlaceboResult
from .accounting import CoefficientTable, DamageLedger, VslParams

__all__ = [
    "TelecouplingError",
    "InputError",
    "SpecificationError",
    "EstimationError",
    "City",
    "CityRegistry",
    "ColumnRole",
    "PanelTable",
    "SynthConfig",
    "WindSampleTable",
    "ScoreParams",
    "ScoreMatrix",
    "WindBin",
    "WindBins",
    "DesignSpec",
    "FitResult",
    "ShiftShareDesign",
    "PlaceboResult",
    "CoefficientTable",
    "DamageLedger",
    "VslParams",
]
