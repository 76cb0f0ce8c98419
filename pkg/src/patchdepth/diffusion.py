"""Diffusion schedule and the accelerated (DDIM) sampling step.

All schedule math runs in float64: the cumulative signal-retention product
over 1000 steps loses too much precision at float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear beta schedule with cumulative products and a sub-step sequence.

    tau holds the K retained timesteps in increasing order, tau[-1] == T;
    sampling walks tau from the top down and finishes at t = 0, where the
    signal retention alpha_bar(0) is defined as exactly 1.
    """

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    tau: np.ndarray
    eta: float

    @property
    def steps(self):
        """Number of sampling steps (length of tau)."""
        return len(self.tau)

    def abar(self, t: int) -> float:
        """alpha_bar at timestep t, with abar(0) := 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def tau_prev(self, k: int) -> int:
        """Timestep reached by sampling step k (1-based index into tau); 0 for k == 1."""
        return 0 if k == 1 else int(self.tau[k - 2])


def build_schedule(T=1000, beta_start=1e-4, beta_end=0.02, K=100, eta=0.85) -> DiffusionSchedule:
    """Linear beta in [beta_start, beta_end] over T steps, K retained sub-steps.

    tau picks round(T*k/K) for k = 1..K, deduplicated; the top retained step is
    always T.
    """
    if not (0 < beta_start < beta_end < 1):
        raise ValueError("need 0 < beta_start < beta_end < 1")
    if not (1 <= K <= T):
        raise ValueError("need 1 <= K <= T")
    if not (0 <= eta <= 1):
        raise ValueError("eta must lie in [0, 1]")
    beta = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.cumprod(1.0 - beta)
    tau = np.array(sorted({int(round(T * k / K)) for k in range(1, K + 1)}), dtype=np.int64)
    tau = tau[tau >= 1]
    sched = DiffusionSchedule(T=T, beta=beta, alpha_bar=alpha_bar, tau=tau, eta=eta)
    assert sched.tau[-1] == T
    return sched


def q_sample(y0, t, noise, sched: DiffusionSchedule):
    """Forward-noise a clean grid to timestep t: sqrt(ab)*y0 + sqrt(1-ab)*eps."""
    ab = sched.abar(t)
    return np.sqrt(ab) * np.asarray(y0) + np.sqrt(1.0 - ab) * np.asarray(noise)


def predict_clean(y_t, eps_hat, t, sched: DiffusionSchedule):
    """Invert q_sample given a noise estimate: (y_t - sqrt(1-ab)*eps) / sqrt(ab)."""
    ab = sched.abar(t)
    return (np.asarray(y_t) - np.sqrt(1.0 - ab) * np.asarray(eps_hat)) / np.sqrt(ab)


def ddim_sigma(k: int, sched: DiffusionSchedule) -> float:
    """Stochasticity std for sampling step k (eta-scaled ancestral-equivalent)."""
    t = int(sched.tau[k - 1])
    ab_t = sched.abar(t)
    ab_prev = sched.abar(sched.tau_prev(k))
    return sched.eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)


def ddim_step(y_t, y0_hat, eps_hat, k, sched: DiffusionSchedule, rng, diagnostics=None):
    """One reverse sampling step from tau_k toward tau_{k-1} (0 when k == 1).

    y_prev = sqrt(ab_prev) * y0_hat + sqrt(1 - ab_prev - sigma^2) * eps_hat
             + sigma * eps. A negative direction radicand (float rounding only)
    clamps to zero; the event is appended to diagnostics when given.
    """
    ab_prev = sched.abar(sched.tau_prev(k))
    sigma = ddim_sigma(k, sched)
    radicand = 1.0 - ab_prev - sigma * sigma
    if radicand < 0:
        if diagnostics is not None:
            diagnostics.append(f"step k={k}: direction radicand {radicand:.3e} clamped to 0")
        radicand = 0.0
    noise = rng.standard_normal(np.shape(y_t)) if sigma > 0 else 0.0
    return np.sqrt(ab_prev) * np.asarray(y0_hat) + np.sqrt(radicand) * np.asarray(eps_hat) + sigma * noise


def dump_schedule(sched: DiffusionSchedule) -> str:
    """Human-readable schedule table (debugging aid)."""
    lines = [
        f"T={sched.T} eta={sched.eta!r} steps={sched.steps}",
        "tau=" + ",".join(str(int(t)) for t in sched.tau),
        "t beta alpha_bar",
    ]
    lines += [
        f"{t + 1} {float(sched.beta[t])!r} {float(sched.alpha_bar[t])!r}" for t in range(sched.T)
    ]
    return "\n".join(lines) + "\n"


def ddim_sample(denoiser, shape, sched: DiffusionSchedule, rng):
    """Full unconditional reverse run from pure noise; returns the final clean estimate."""
    y = rng.standard_normal(shape)
    for k in range(sched.steps, 0, -1):
        t = int(sched.tau[k - 1])
        eps_hat = np.asarray(denoiser.predict_eps(y, t), dtype=np.float64)
        y0_hat = predict_clean(y, eps_hat, t, sched)
        y = ddim_step(y, y0_hat, eps_hat, k, sched, rng)
    return y
