# /src/numerics/stats.py
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import betainc

from ..core.errors import DataError

logger = logging.getLogger(__name__)


class Alternative(str, Enum):
    MEAN_A_LESS = "MeanALess"
    MEAN_A_GREATER = "MeanAGreater"


@dataclass(frozen=True)
class TTestResult:
    t_stat: float
    df: float
    p_value: float
    degenerate: bool = False


@dataclass(frozen=True)
class Describe:
    n: int
    mean: float
    var: float  # sample variance, ddof=1

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


def percentile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation percentile, rank = q * (n - 1) on the sorted values."""
    if len(values) == 0:
        raise DataError("percentile of an empty list")
    if not 0.0 <= q <= 1.0:
        raise DataError(f"percentile fraction must lie in [0, 1] (got {q})")
    return float(np.quantile(np.asarray(values, dtype=float), q, method="linear"))


def describe(values: Sequence[float]) -> Describe:
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        raise DataError(f"Need at least 2 values for a sample variance (got {arr.size})")
    return Describe(n=int(arr.size), mean=float(arr.mean()), var=float(arr.var(ddof=1)))


def student_t_cdf(t: float, df: float) -> float:
    """P(T <= t) for Student's t with df degrees of freedom, via the regularized incomplete beta."""
    if df <= 0:
        raise DataError(f"degrees of freedom must be > 0 (got {df})")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return 1.0 - tail if t > 0 else tail


def welch_t_test_one_sided(a: Sequence[float], b: Sequence[float], alternative: Alternative,
                           pooled: bool = False) -> TTestResult:
    """
    One-sided two-sample t-test of mean(a) against mean(b).

    Welch statistic and Welch–Satterthwaite df by default; `pooled=True` gives the
    equal-variance Student test. The p-value is the probability of a statistic at
    least as extreme in the direction of `alternative`. Two constant, equal samples
    are degenerate: t=0, p=0.5 with the degenerate flag set.
    """
    da, db = describe(a), describe(b)
    diff = da.mean - db.mean
    if pooled:
        df = float(da.n + db.n - 2)
        pooled_var = ((da.n - 1) * da.var + (db.n - 1) * db.var) / df
        se2 = pooled_var * (1.0 / da.n + 1.0 / db.n)
    else:
        va, vb = da.var / da.n, db.var / db.n
        se2 = va + vb
        denom = (va * va / (da.n - 1) if va else 0.0) + (vb * vb / (db.n - 1) if vb else 0.0)
        df = se2 * se2 / denom if denom > 0 else float(da.n + db.n - 2)

    if se2 == 0.0:
        if diff == 0.0:
            logger.debug("t-test on two constant, equal samples; returning degenerate p=0.5")
            return TTestResult(0.0, df, 0.5, degenerate=True)
        t = math.copysign(math.inf, diff)
    else:
        t = diff / math.sqrt(se2)

    cdf = student_t_cdf(t, df)
    p = cdf if alternative == Alternative.MEAN_A_LESS else 1.0 - cdf
    return TTestResult(float(t), float(df), float(min(1.0, max(0.0, p))))
