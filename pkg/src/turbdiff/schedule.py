"""Variance schedules for the noising chain and their respaced sub-schedules.

A full schedule holds the per-step variances beta_1..beta_T with the derived
alpha_t = 1 - beta_t and the running product alpha_bar_t.  A respaced
schedule evaluates a T-step-trained model on K <= T steps by picking an
evenly spaced subsequence of the original timesteps and recomputing
effective betas from alpha_bar ratios, so the marginal at the final step is
preserved exactly (telescoping product).

Indexing is 1-based to match the usual chain notation: ``beta[t - 1]`` is
the variance of step t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-process variances and derived signal-retention products."""

    T: int
    beta: np.ndarray        # (T,), beta[t-1] in (0, 1)
    alpha: np.ndarray       # 1 - beta
    alpha_bar: np.ndarray   # cumulative product of alpha, strictly decreasing

    def alpha_bar_at(self, t) -> np.ndarray:
        """alpha_bar_t for 1-based step t (int or int array)."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"step {t} outside [1, {self.T}]")
        return self.alpha_bar[t - 1]


@dataclass(frozen=True)
class RespacedSchedule:
    """K-step inference sub-schedule of a T-step training schedule."""

    steps: np.ndarray            # (K,) strictly increasing ints in [1, T], ends at T
    beta_prime: np.ndarray       # (K,), 1 - abar[t_k]/abar[t_{k-1}]
    alpha_bar_prime: np.ndarray  # (K,), abar[t_k]

    @property
    def K(self) -> int:
        return len(self.steps)

    def alpha_bar_at(self, k) -> np.ndarray:
        """alpha_bar'_k for 1-based respaced step k."""
        k = np.asarray(k)
        if np.any(k < 1) or np.any(k > self.K):
            raise ValueError(f"respaced step {k} outside [1, {self.K}]")
        return self.alpha_bar_prime[k - 1]


def linear_schedule(T: int, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly interpolated variances, inclusive of both endpoints.

    The endpoint defaults are the standard linear schedule used with
    T = 1000 training steps.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def respace(s: NoiseSchedule, K: int) -> RespacedSchedule:
    """Pick K evenly spaced steps of ``s`` (always including T) and fold the
    skipped variances into effective betas via alpha_bar ratios."""
    if not (1 <= K <= s.T):
        raise ValueError(f"K must be in [1, {s.T}], got {K}")
    if K == 1:
        steps = np.array([s.T], dtype=np.int64)
    else:
        steps = np.round(np.linspace(1, s.T, K)).astype(np.int64)
    abar = s.alpha_bar[steps - 1]
    prev = np.concatenate([[1.0], abar[:-1]])
    beta_prime = 1.0 - abar / prev
    return RespacedSchedule(steps=steps, beta_prime=beta_prime,
                            alpha_bar_prime=abar)
