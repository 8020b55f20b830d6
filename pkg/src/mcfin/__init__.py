"""Precision-parameterized Monte Carlo engine for derivative pricing and risk.

Paths are generated from a keyed counter-based generator, so every result is
a pure function of its key and does not depend on the thread count. Each
estimator runs in double, single or bfloat16-mixed precision.
"""

from .numerics import PrecisionMode
from .prng import StreamKey
from .sde import MarketModel, Scheme, TimeGrid, basket_model, simulate_paths
from .pricing import (BasketCall, EstimatorResult, Forward, MaxOfNCall, UpAndInPut, VanillaCall, VanillaPut,
                      mc_price, qmc_price)

__version__ = "0.1.0"

__all__ = [
    "PrecisionMode",
    "StreamKey",
    "MarketModel",
    "Scheme",
    "TimeGrid",
    "basket_model",
    "simulate_paths",
    "BasketCall",
    "EstimatorResult",
    "Forward",
    "MaxOfNCall",
    "UpAndInPut",
    "VanillaCall",
    "VanillaPut",
    "mc_price",
    "qmc_price",
]
