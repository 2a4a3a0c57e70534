"""Negative binomial family in the mean/dispersion parametrization.

``var(y) = mu + mu**2 / phi`` with a log link; ``phi = inf`` is the
Poisson limit and is accepted everywhere a dispersion is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NBFamily:
    phi: float

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError(f"phi must be positive, got {self.phi}")

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.isinf(self.phi):
            return mu
        return mu + mu * mu / self.phi

    def weights(self, mu):
        """IRLS weights ``mu**2 / var(mu)`` for the log link."""
        mu = np.asarray(mu, dtype=float)
        if np.isinf(self.phi):
            return mu
        return mu / (1.0 + mu / self.phi)

    def logpmf(self, y, mu):
        return nb_logpmf(y, mu, self.phi)

    def deviance(self, y, mu):
        return nb_deviance(y, mu, self.phi)


def _stirlerr(z):
    """log Gamma(z) minus its Stirling approximation."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    big = z >= 15.0
    zb = z[big]
    zi = 1.0 / zb
    zi2 = zi * zi
    out[big] = zi * (1 / 12 - zi2 * (1 / 360 - zi2 * (1 / 1260 - zi2 / 1680)))
    zs = z[~big]
    out[~big] = gammaln(zs) - ((zs - 0.5) * np.log(zs) - zs + _HALF_LOG_2PI)
    return out


def _check_positive(name, value):
    if np.any(~(np.asarray(value) > 0)):
        raise ValueError(f"{name} must be positive")


def nb_logpmf(y, mu, phi):
    """Log probability mass of NB(mean ``mu``, dispersion ``phi``) at ``y``.

    The log-gamma ratio is expanded around Stirling's formula so that the
    result stays accurate for very large ``phi`` (where the naive
    ``gammaln(y + phi) - gammaln(phi)`` loses all precision) and for ``y``
    up to about 1e6.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    _check_positive("mu", mu)
    _check_positive("phi", phi)
    if np.any(y < 0):
        raise ValueError("y must be non-negative")
    poisson_part = xlogy(y, mu) - gammaln(y + 1.0)
    if np.isinf(phi):
        return poisson_part - mu
    phi = float(phi)
    y_b, mu_b = np.broadcast_arrays(y, mu)
    ratio = ((phi - 0.5) * np.log1p(y_b / phi)
             + y_b * np.log1p((y_b - mu_b) / (phi + mu_b))
             - y_b
             + _stirlerr(phi + y_b) - _stirlerr(np.full(y_b.shape, phi)))
    out = ratio + poisson_part - phi * np.log1p(mu_b / phi)
    return out if out.ndim else float(out)


def unit_deviance(y, mu, phi):
    """Per-observation deviance ``2 * (loglik(y; y) - loglik(y; mu))``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    # xlogy gives the analytic y = 0 limit of y * log(y / mu)
    sat = xlogy(y, y) - xlogy(y, mu)
    if np.isinf(phi):
        return 2.0 * (sat - (y - mu))
    return 2.0 * (sat - (y + phi) * np.log1p((y - mu) / (mu + phi)))


def nb_deviance(y, mu, phi) -> float:
    """Total NB deviance against the saturated model with the same ``phi``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ValueError(f"length mismatch: y {y.shape} vs mu {mu.shape}")
    _check_positive("mu", mu)
    _check_positive("phi", phi)
    return float(np.maximum(unit_deviance(y, mu, phi), 0.0).sum())


def sample_nb(mu, phi, rng: np.random.Generator, size=None):
    """Draw from NB(mu, phi) as a Gamma-Poisson mixture.

    theta ~ Gamma(shape=phi, rate=phi/mu), then y ~ Poisson(theta).
    """
    _check_positive("mu", mu)
    _check_positive("phi", phi)
    mu = np.asarray(mu, dtype=float)
    if np.isinf(phi):
        theta = np.broadcast_to(mu, size) if size is not None else mu
    else:
        theta = rng.gamma(shape=phi, scale=mu / phi, size=size)
    draws = rng.poisson(theta)
    return draws if np.ndim(draws) else int(draws)
