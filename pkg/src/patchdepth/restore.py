"""Masked diffusion null-space restoration of degraded depth images.

The degradation operator is a binary per-pixel selection, so its pseudo-inverse
is itself and the range-space correction reduces to a per-pixel blend between
the prediction and the observation. A rectangular boundary mask confines every
clean estimate to the patch support; an optional "vanilla" mode drops the mask
for ablation runs.

Observation-noise handling: each sampling step blends the observation in with
weight lambda and replaces the step's noise terms on observed pixels by a
single fresh draw of std gamma, chosen so the propagated observation noise
plus the injected noise exactly meets the schedule's budget 1 - alpha_bar at
the target step. With sigma_y = 0 this reduces to forward-noising the known
pixels (lambda = 1, gamma = full budget).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from patchdepth.camera import BoundaryMask, DepthImage
from patchdepth.diffusion import DiffusionSchedule, ddim_sigma, predict_clean


class RestorationError(RuntimeError):
    """Sampling failure; carries the 1-based step index where it occurred."""

    def __init__(self, message, step=None, timestep=None):
        if step is not None:
            message = f"step k={step} (t={timestep}): {message}"
        super().__init__(message)
        self.step = step
        self.timestep = timestep


@dataclass(frozen=True)
class MaskOperator:
    """Binary diagonal observation operator over the pixel grid.

    Idempotent and self-pseudo-inverse: applying it twice, or applying the
    pseudo-inverse, is the same as applying it once.
    """

    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=bool))

    def apply(self, x):
        return np.where(self.omega, x, 0.0)

    pseudo_inverse = apply  # binary diagonal: A+ == A

    @property
    def count(self):
        return int(self.omega.sum())


@dataclass
class RestorationProblem:
    """Degraded observation plus the operators needed to restore it."""

    y_tilde: DepthImage
    operator: MaskOperator
    mask: BoundaryMask
    sigma_y: float = 0.16

    def __post_init__(self):
        if self.sigma_y < 0:
            raise ValueError("sigma_y must be non-negative")
        if self.operator.omega.shape != self.y_tilde.values.shape:
            raise ValueError("operator and image shapes differ")
        if self.mask.grid.shape != self.y_tilde.values.shape:
            raise ValueError("mask and image shapes differ")
        if (self.operator.omega & ~self.mask.grid).any():
            raise ValueError("observed pixels extend outside the boundary mask")
        if np.any(self.y_tilde.values[~self.operator.omega] != 0.0):
            raise ValueError("y_tilde must be zero outside the observed set")

    @property
    def observed(self):
        return self.y_tilde.values


@dataclass
class RestorationResult:
    y0: np.ndarray
    residual_trace: list = field(default_factory=list)  # per-step max |A y0_hat - y~| over omega
    lambda_trace: list = field(default_factory=list)
    gamma_trace: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    seed: int = 0
    mode: str = "masked"
    wall_clock: float = 0.0
    mask: BoundaryMask | None = None


def range_null_correct(y0_pred, problem: RestorationProblem, lambda_t: float):
    """Blend the observation into the prediction on observed pixels.

    Observed pixels become (1 - lambda)*prediction + lambda*observation;
    unobserved pixels pass through. lambda = 1 pins the observation exactly.
    """
    if not (0.0 <= lambda_t <= 1.0):
        raise ValueError(f"lambda_t must lie in [0, 1], got {lambda_t}")
    y0_pred = np.asarray(y0_pred, dtype=np.float64)
    blended = (1.0 - lambda_t) * y0_pred + lambda_t * problem.observed
    return np.where(problem.operator.omega, blended, y0_pred)


def apply_boundary(y, mask: BoundaryMask):
    """Zero everything outside the boundary mask, exactly."""
    return np.where(mask.grid, np.asarray(y, dtype=np.float64), 0.0)


def sigma_scale(alpha_bar_prev: float, sigma_y: float, s_tot: float):
    """Observation blend weight and observed-pixel noise std for one step.

    s_tot is the total noise budget sqrt(1 - alpha_bar) at the target step.
    lambda = min(1, s_tot / (sqrt(ab_prev) * sigma_y)) (1 when sigma_y == 0);
    gamma^2 = max(0, s_tot^2 - ab_prev * lambda^2 * sigma_y^2), i.e. whatever
    budget the propagated observation noise leaves unfilled.
    """
    if sigma_y < 0:
        raise ValueError("sigma_y must be non-negative")
    if not (0 < alpha_bar_prev <= 1):
        raise ValueError("alpha_bar_prev must lie in (0, 1]")
    if sigma_y == 0.0:
        lam = 1.0
    else:
        lam = min(1.0, s_tot / (np.sqrt(alpha_bar_prev) * sigma_y))
    gamma_sq = max(0.0, s_tot * s_tot - alpha_bar_prev * lam * lam * sigma_y * sigma_y)
    return lam, float(np.sqrt(gamma_sq))


def _check_finite(arr, what, step, timestep):
    if not np.isfinite(arr).all():
        raise RestorationError(f"{what} contains non-finite values", step=step, timestep=timestep)


def restore_patch(problem: RestorationProblem, denoiser, sched: DiffusionSchedule,
                  mode: str = "masked", seed: int = 0) -> RestorationResult:
    """Run the full reverse-sampling restoration loop.

    Per step: predict the clean image from the denoiser output, blend the
    observation in (weight from sigma_scale), zero outside the boundary mask
    (masked mode only), then take the reverse step with the standard noise
    terms on unobserved pixels and a fresh gamma-std draw on observed ones.
    The final clean estimate is clipped to [0, 1] and returned with per-step
    diagnostics. The RNG is counter-based, so runs are reproducible per seed.
    """
    if mode not in ("masked", "vanilla"):
        raise ValueError(f"mode must be 'masked' or 'vanilla', got {mode!r}")
    started = time.perf_counter()
    omega = problem.operator.omega
    shape = problem.observed.shape
    rng = np.random.Generator(np.random.Philox(seed))
    result = RestorationResult(y0=np.zeros(shape), seed=seed, mode=mode, mask=problem.mask)

    y = rng.standard_normal(shape)
    y0_hat = None
    for k in range(sched.steps, 0, -1):
        t = int(sched.tau[k - 1])
        try:
            eps_hat = np.asarray(denoiser.predict_eps(y, t), dtype=np.float64)
        except RestorationError:
            raise
        except Exception as exc:
            raise RestorationError(f"denoiser failed: {exc}", step=k, timestep=t) from exc
        if eps_hat.shape != shape:
            raise RestorationError(
                f"denoiser returned shape {eps_hat.shape}, expected {shape}", step=k, timestep=t
            )
        _check_finite(eps_hat, "denoiser output", k, t)

        y0_pred = predict_clean(y, eps_hat, t, sched)
        ab_prev = sched.abar(sched.tau_prev(k))
        s_tot = float(np.sqrt(1.0 - ab_prev))
        lam, gamma = sigma_scale(ab_prev, problem.sigma_y, s_tot)
        y0_hat = range_null_correct(y0_pred, problem, lam)
        if mode == "masked":
            y0_hat = apply_boundary(y0_hat, problem.mask)
            assert not y0_hat[~problem.mask.grid].any(), "outside-mask pixels must stay exactly 0"

        result.lambda_trace.append(lam)
        result.gamma_trace.append(gamma)
        if omega.any():
            result.residual_trace.append(float(np.abs(y0_hat[omega] - problem.observed[omega]).max()))

        sigma_k = ddim_sigma(k, sched)
        radicand = 1.0 - ab_prev - sigma_k * sigma_k
        if radicand < 0:
            result.diagnostics.append(f"step k={k}: direction radicand {radicand:.3e} clamped to 0")
            radicand = 0.0
        noise = rng.standard_normal(shape)
        y_unobs = np.sqrt(ab_prev) * y0_hat + np.sqrt(radicand) * eps_hat + sigma_k * noise
        y_obs = np.sqrt(ab_prev) * y0_hat + gamma * noise
        y = np.where(omega, y_obs, y_unobs)
        _check_finite(y, "sample", k, t)

    y0 = np.clip(y0_hat, 0.0, 1.0)
    result.y0 = y0
    result.wall_clock = time.perf_counter() - started
    return result


def denormalize(result: RestorationResult, image: DepthImage):
    """Map a restored [0, 1] grid back to metric depth inside the boundary mask.

    Pixels outside the mask are undefined and returned as NaN.
    """
    if image.z_min is None or image.z_max is None:
        raise ValueError("image lacks a normalization record")
    if result.mask is None:
        raise ValueError("result carries no boundary mask")
    metric = image.z_min + result.y0 * (image.z_max - image.z_min)
    out = np.full_like(metric, np.nan)
    out[result.mask.grid] = metric[result.mask.grid]
    return out
