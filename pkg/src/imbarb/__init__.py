"""imbarb — battery energy arbitrage in single-price imbalance settlement.

Subpackages cover price-data handling, the battery MDP environment, a small
dense-network engine with compiled kernels, DQN and categorical
distributional-DQN trainers, a threshold rule-based baseline, constrained
policy distillation through a differentiable projection layer, and a
backtesting/evaluation harness.  The ``imbarb`` CLI chains them.
"""

from imbarb._kernels import BACKEND_NAME

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "__version__"]
