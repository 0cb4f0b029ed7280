"""Log-log regressions used for exponents, convergence orders and decay rates."""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import stats
from sklearn.linear_model import LinearRegression

from src.utils.errors import IllConditionedFitError


@dataclass(frozen=True)
class PowerLawFit:
    """y ~ constant * x**exponent fitted in log-log coordinates."""

    exponent: float
    constant: float
    stderr: float
    confidence_interval: Tuple[float, float]
    r_squared: float
    n_samples: int
    decades: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.constant * np.asarray(x, dtype=float) ** self.exponent

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "constant": self.constant,
            "stderr": self.stderr,
            "confidence_interval": list(self.confidence_interval),
            "r_squared": self.r_squared,
            "n_samples": self.n_samples,
            "decades": self.decades,
        }


def fit_power_law(x: np.ndarray, y: np.ndarray, min_samples: int = 3,
                  min_decades: float = 0.0, confidence: float = 0.95,
                  weights: Optional[np.ndarray] = None) -> PowerLawFit:
    """
    Least-squares fit of log y = log C + p log x.

    Args:
        x: positive abscissae
        y: positive ordinates
        min_samples: minimum number of usable pairs
        min_decades: minimum dynamic range of x in decades
        confidence: level of the two-sided confidence interval on p
        weights: optional sample weights

    Returns:
        PowerLawFit with exponent p and constant C
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    keep = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    if weights is not None:
        weights = np.asarray(weights, dtype=float).ravel()[keep]
    x, y = x[keep], y[keep]
    if x.size < min_samples:
        raise IllConditionedFitError(f"need at least {min_samples} positive samples, got {x.size}")
    decades = float(np.log10(x.max() / x.min())) if x.size else 0.0
    if decades < min_decades:
        raise IllConditionedFitError(
            f"dynamic range {decades:.2f} decades is below the required {min_decades:.2f}")

    lx, ly = np.log(x), np.log(y)
    model = LinearRegression()
    model.fit(lx[:, None], ly, sample_weight=weights)
    slope = float(model.coef_[0])
    intercept = float(model.intercept_)

    residuals = ly - model.predict(lx[:, None])
    dof = max(x.size - 2, 1)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    stderr = float(np.sqrt(np.sum(residuals ** 2) / dof / sxx)) if sxx > 0 else float("inf")
    half = float(stats.t.ppf(0.5 + confidence / 2.0, dof)) * stderr
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(residuals ** 2)) / ss_tot if ss_tot > 0 else 1.0

    return PowerLawFit(
        exponent=slope,
        constant=float(np.exp(intercept)),
        stderr=stderr,
        confidence_interval=(slope - half, slope + half),
        r_squared=r2,
        n_samples=int(x.size),
        decades=decades,
    )


def geometric_rate(values: np.ndarray) -> Optional[float]:
    """
    Ratio q of a geometric sequence v_j ~ C q^j fitted by linear regression of
    log v_j on j. Returns None when fewer than three positive entries exist.
    """
    values = np.asarray(values, dtype=float)
    j = np.arange(values.size, dtype=float)
    keep = np.isfinite(values) & (values > 0)
    if keep.sum() < 3:
        return None
    model = LinearRegression().fit(j[keep][:, None], np.log(values[keep]))
    return float(np.exp(model.coef_[0]))
