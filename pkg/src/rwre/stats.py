"""Small statistics helpers shared by the experiment modules."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_se: float
    r2: float
    n: int

    def slope_ci(self, level=0.95):
        if self.n <= 2 or not np.isfinite(self.slope_se):
            return (-math.inf, math.inf)
        t = stats.t.ppf(0.5 + level / 2, self.n - 2)
        return (float(self.slope - t * self.slope_se), float(self.slope + t * self.slope_se))


def fit_line(x, y):
    """Ordinary least squares ``y = slope * x + intercept`` with R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need at least two points")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise ValueError("x values are all equal")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    sst = np.sum((y - ym) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / sst if sst > 0 else 1.0
    if len(x) > 2:
        se = math.sqrt(np.sum(resid ** 2) / (len(x) - 2) / sxx)
    else:
        se = math.inf
    return LineFit(float(slope), float(intercept), float(se), float(r2), len(x))


def normal_ci(samples, level=0.95, axis=0):
    """Mean, standard error and normal-approximation CI along ``axis``."""
    a = np.asarray(samples, dtype=float)
    n = a.shape[axis]
    mean = a.mean(axis=axis)
    se = a.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.full_like(mean, np.inf)
    z = stats.norm.ppf(0.5 + level / 2)
    return mean, se, (mean - z * se, mean + z * se)


def clopper_pearson(k, n, level=0.95):
    """Exact binomial confidence interval for ``k`` successes out of ``n``."""
    if n == 0:
        return (0.0, 1.0)
    a = 1 - level
    lo = 0.0 if k == 0 else stats.beta.ppf(a / 2, k, n - k + 1)
    hi = 1.0 if k == n else stats.beta.ppf(1 - a / 2, k + 1, n - k)
    return (float(lo), float(hi))
