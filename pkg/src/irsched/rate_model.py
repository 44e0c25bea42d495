"""Gaussian model of the rate at which decoding first succeeds.

The rate ``R = k / N`` of first successful decoding is modelled as
``Normal(mu, sigma)``; the blocklength ``N`` then has the reciprocal-Gaussian
density. Everything here is a pure function of immutable values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import erfc, ndtri

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


class FittingError(ValueError):
    """Raised when empirical samples cannot support a probit fit."""


def q(x):
    """Standard Gaussian upper tail, ``P(Z > x)``.

    Evaluated through ``erfc`` so the far right tail keeps full relative
    precision (no ``1 - cdf`` cancellation).
    """
    out = 0.5 * erfc(np.asarray(x, dtype=float) / _SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def q_inv(p):
    """Inverse of :func:`q`."""
    out = -ndtri(np.asarray(p, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RateModel:
    mu: float
    sigma: float
    k: int

    def __post_init__(self):
        if not (self.sigma > 0 and self.mu > 0):
            raise ValueError(f"need mu > 0 and sigma > 0, got mu={self.mu}, sigma={self.sigma}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.mu / self.sigma <= 3:
            raise ValueError(
                f"mu/sigma = {self.mu / self.sigma:.3g} <= 3: too much mass at non-positive rates"
            )
        object.__setattr__(self, "k", int(self.k))

    def z(self, n):
        """Standardised rate ``(k/n - mu)/sigma`` at blocklength ``n``."""
        return (self.k / np.asarray(n, dtype=float) - self.mu) / self.sigma

    def success_probability(self, n):
        """``P(N <= n)``: decoding has succeeded by cumulative blocklength ``n``."""
        return q(self.z(n))

    def failure_probability(self, n):
        """``P(N > n)``, computed directly so it keeps precision when tiny."""
        return q(-self.z(n))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RateModel":
        return cls(mu=float(d["mu"]), sigma=float(d["sigma"]), k=int(d["k"]))


@dataclass(frozen=True)
class EmpiricalBlocklengths:
    samples: tuple
    k: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.size and (np.any(s != np.round(s)) or np.any(s < self.k)):
            raise ValueError("samples must be integers no smaller than k")
        object.__setattr__(self, "samples", tuple(int(v) for v in s))

    def rates(self) -> np.ndarray:
        return self.k / np.asarray(self.samples, dtype=float)


def blocklength_density(model: RateModel, n):
    """Reciprocal-Gaussian density of the blocklength of first success."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0):
        raise ValueError("blocklength must be positive")
    z = model.z(n)
    out = model.k / (n * n * model.sigma * _SQRT2PI) * np.exp(-0.5 * z * z)
    return float(out) if out.ndim == 0 else out


def interval_success_probability(model: RateModel, n1, n2):
    """Probability that decoding first succeeds in ``(n1, n2]``."""
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    if np.any(n1 <= 0) or np.any(n1 > n2):
        raise ValueError("need 0 < n1 <= n2")
    z1, z2 = model.z(n1), model.z(n2)
    # difference of the smaller tails avoids cancellation near 1
    out = np.where(z2 > 0, q(z2) - q(z1), q(-z1) - q(-z2))
    return float(out) if np.ndim(out) == 0 else out


def empirical_ccdf(rates) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rate values and ``P(R >= r)`` at each of them."""
    r = np.sort(np.asarray(rates, dtype=float))
    values, first = np.unique(r, return_index=True)
    return values, 1.0 - first / r.size


def probit_regression(rates, trim=(0.01, 0.99)) -> tuple[float, float, float]:
    """Least-squares line through ``(r, Q^-1(ccdf(r)))``.

    Returns ``(slope, intercept, r_squared)``. Only c.c.d.f. values inside
    ``trim`` take part.
    """
    lo, hi = trim
    if not 0 < lo < hi < 1:
        raise ValueError(f"trim bounds must satisfy 0 < lo < hi < 1, got {trim}")
    values, ccdf = empirical_ccdf(rates)
    if values.size < 2:
        raise FittingError("degenerate samples: all rates are equal")
    keep = (ccdf >= lo) & (ccdf <= hi)
    if keep.sum() < 10:
        raise FittingError(f"only {int(keep.sum())} points survive trimming to {trim}; need 10")
    x = values[keep]
    y = q_inv(ccdf[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - resid @ resid / np.sum((y - y.mean()) ** 2)
    return float(slope), float(intercept), float(r2)


def fit(samples: EmpiricalBlocklengths, trim=(0.01, 0.99)) -> RateModel:
    """Fit ``(mu, sigma)`` by probit regression on the rate c.c.d.f."""
    if len(samples.samples) < 100:
        raise FittingError(f"need at least 100 samples, got {len(samples.samples)}")
    slope, intercept, _ = probit_regression(samples.rates(), trim)
    if slope <= 0:
        raise FittingError("fitted probit slope is not positive")
    return RateModel(mu=-intercept / slope, sigma=1.0 / slope, k=samples.k)


def read_samples_csv(path: str | Path, k: int) -> EmpiricalBlocklengths:
    """Read a one-column CSV with header ``n_s``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "n_s" not in reader.fieldnames:
            raise ValueError(f"{path}: expected a header row with column 'n_s'")
        try:
            values = [int(row["n_s"]) for row in reader]
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: non-integer sample ({exc})") from None
    if not values:
        raise ValueError(f"{path}: no samples")
    return EmpiricalBlocklengths(tuple(values), k)


def write_samples_csv(path: str | Path, samples: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_s"])
        w.writerows([int(v)] for v in samples)


def model_to_json(model: RateModel) -> str:
    return json.dumps(model.to_dict())
