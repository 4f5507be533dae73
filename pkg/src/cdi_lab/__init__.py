"""Coming down from infinity for Lambda-coalescents.

Compute the speed v(t) of a measure Lambda, simulate the block-counting
chain exactly, and compare the two by Monte Carlo.
"""

__version__ = "0.1.0"

from .errors import CdiLabError  # noqa: E402
from .measure import LambdaSpec, integrate, load_measure, normalize, nu_integrate, truncate  # noqa: E402
from .rates import RateRow, cdi_classify, gamma_b, lambda_bk, merger_distribution  # noqa: E402
from .speed import (PsiEvaluator, SpeedTable, build_speed_table, psi,  # noqa: E402
                    truncation_speed_ratio, v)
from .simulate import BlockCountPath, hitting_time, simulate_path, tree_length  # noqa: E402

__all__ = [
    "CdiLabError", "LambdaSpec", "integrate", "load_measure", "normalize", "nu_integrate",
    "truncate", "RateRow", "cdi_classify", "gamma_b", "lambda_bk", "merger_distribution",
    "PsiEvaluator", "SpeedTable", "build_speed_table", "psi", "truncation_speed_ratio", "v",
    "BlockCountPath", "hitting_time", "simulate_path", "tree_length",
]
