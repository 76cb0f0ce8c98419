"""Noise-prediction interfaces and analytic reference denoisers.

A denoiser maps (y_t, t) to an estimate of the standard-normal noise that was
mixed into y_t. The analytic implementations here are exact for their stated
priors and back the test oracles; a network-backed denoiser is reached through
the wire client instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from patchdepth.diffusion import DiffusionSchedule


@runtime_checkable
class Denoiser(Protocol):
    def predict_eps(self, y_t, t: int): ...


@dataclass(frozen=True)
class GaussianPrior:
    """Independent per-pixel Gaussian prior; mean/var broadcast over the grid."""

    mean: np.ndarray | float
    var: np.ndarray | float

    def __post_init__(self):
        if np.any(np.asarray(self.var) <= 0):
            raise ValueError("prior variance must be strictly positive")


class ZeroDenoiser:
    """Predicts zero noise everywhere; protocol and trajectory test stub."""

    def predict_eps(self, y_t, t):
        return np.zeros_like(np.asarray(y_t, dtype=np.float64))


class GaussianDenoiser:
    """Exact MMSE noise predictor for a per-pixel Gaussian prior.

    For y_t = sqrt(ab)*y0 + sqrt(1-ab)*eps with y0 ~ N(mu, var):
        E[y0 | y_t] = mu + sqrt(ab)*var / (ab*var + 1 - ab) * (y_t - sqrt(ab)*mu)
        eps_hat     = (y_t - sqrt(ab) * E[y0 | y_t]) / sqrt(1 - ab)
    """

    def __init__(self, prior: GaussianPrior, sched: DiffusionSchedule):
        self.prior = prior
        self.sched = sched

    def posterior_mean(self, y_t, t):
        ab = self.sched.abar(t)
        mu = np.asarray(self.prior.mean, dtype=np.float64)
        var = np.asarray(self.prior.var, dtype=np.float64)
        gain = np.sqrt(ab) * var / (ab * var + 1.0 - ab)
        return mu + gain * (np.asarray(y_t) - np.sqrt(ab) * mu)

    def predict_eps(self, y_t, t):
        ab = self.sched.abar(t)
        if ab >= 1.0:
            return np.zeros_like(np.asarray(y_t, dtype=np.float64))
        return (np.asarray(y_t) - np.sqrt(ab) * self.posterior_mean(y_t, t)) / np.sqrt(1.0 - ab)


def fit_gaussian_prior(observed_values, sigma_y: float, var_floor: float = 1e-4) -> GaussianPrior:
    """Scalar Gaussian prior fitted to observed pixels of a degraded image.

    The observation noise variance is subtracted from the empirical variance,
    floored so the prior stays proper.
    """
    vals = np.asarray(observed_values, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("no observed values to fit a prior to")
    var = max(float(vals.var()) - sigma_y * sigma_y, var_floor)
    return GaussianPrior(mean=float(vals.mean()), var=var)
