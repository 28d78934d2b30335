"""Forward noising, the conditional reverse sampler, and truncated-start
restoration.

All functions here operate on plain numpy arrays (no gradient tracking):
the forward process is closed-form, and sampling treats the denoiser as a
black-box callable ``denoise_fn(y, x, t) -> eps_hat`` where ``y`` and ``x``
are (B, C, H, W) arrays and ``t`` is the original-schedule timestep (int or
per-item int array).  Images inside the diffusion processes live in
[-1, 1]; use :func:`to_signed` / :func:`to_unit` at the storage boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng
from .schedule import NoiseSchedule, RespacedSchedule


def to_signed(img01: np.ndarray) -> np.ndarray:
    """Map [0, 1] storage range to the [-1, 1] model range."""
    return 2.0 * np.asarray(img01, dtype=np.float64) - 1.0


def to_unit(img: np.ndarray) -> np.ndarray:
    """Map model range back to clipped [0, 1] storage range."""
    return np.clip((np.asarray(img, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


@dataclass
class SampleTrace:
    """Bookkeeping for one reverse run: cost and optional snapshots."""

    nfe: int = 0
    start_step: int = 0
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)


def _bar_coefs(s, t, ndim: int):
    """sqrt(abar_t) and sqrt(1 - abar_t), broadcastable against an
    ``ndim``-dimensional batch when ``t`` is a per-item array."""
    abar = s.alpha_bar_at(t)
    if np.ndim(abar) > 0 and ndim > 1:
        abar = abar.reshape((-1,) + (1,) * (ndim - 1))
    return np.sqrt(abar), np.sqrt(1.0 - abar)


def q_sample(y0: np.ndarray, t, eps: np.ndarray,
             s: NoiseSchedule | RespacedSchedule) -> np.ndarray:
    """Closed-form marginal: sqrt(abar_t) * y0 + sqrt(1 - abar_t) * eps.

    ``t`` is 1-based on the schedule's own grid (original steps for a full
    schedule, respaced index k for a respaced one) and may be an int or a
    per-item int array matching the leading dimension of ``y0``.
    """
    y0 = np.asarray(y0)
    eps = np.asarray(eps)
    if y0.shape != eps.shape:
        raise ValueError(f"q_sample: shape mismatch {y0.shape} vs {eps.shape}")
    ca, cb = _bar_coefs(s, t, y0.ndim)
    return ca * y0 + cb * eps


def q_step(y_prev: np.ndarray, t, eps: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """One forward step: sqrt(1 - beta_t) * y_{t-1} + sqrt(beta_t) * eps."""
    y_prev = np.asarray(y_prev)
    eps = np.asarray(eps)
    if y_prev.shape != eps.shape:
        raise ValueError(f"q_step: shape mismatch {y_prev.shape} vs {eps.shape}")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > s.T):
        raise ValueError(f"q_step: step {t} outside [1, {s.T}]")
    beta = s.beta[t - 1]
    if np.ndim(beta) > 0 and y_prev.ndim > 1:
        beta = beta.reshape((-1,) + (1,) * (y_prev.ndim - 1))
    return np.sqrt(1.0 - beta) * y_prev + np.sqrt(beta) * eps


def posterior_mean(y_t: np.ndarray, eps_hat: np.ndarray, k: int,
                   s: RespacedSchedule) -> np.ndarray:
    """Reverse-step mean from the predicted noise at respaced step k:

        (y_t - beta'_k / sqrt(1 - abar'_k) * eps_hat) / sqrt(1 - beta'_k)
    """
    y_t = np.asarray(y_t)
    eps_hat = np.asarray(eps_hat)
    if y_t.shape != eps_hat.shape:
        raise ValueError(f"posterior_mean: shape mismatch {y_t.shape} vs {eps_hat.shape}")
    if not (1 <= k <= s.K):
        raise ValueError(f"posterior_mean: step {k} outside [1, {s.K}]")
    bk = s.beta_prime[k - 1]
    abark = s.alpha_bar_prime[k - 1]
    return (y_t - (bk / np.sqrt(1.0 - abark)) * eps_hat) / np.sqrt(1.0 - bk)


def reverse_step(y_t: np.ndarray, x: np.ndarray, k: int, denoise_fn,
                 s: RespacedSchedule, rng: Rng | None = None,
                 z: np.ndarray | None = None) -> np.ndarray:
    """One conditional ancestral step k -> k-1 on the respaced grid.

    The denoiser is evaluated at the original timestep ``steps[k-1]``.  For
    k > 1 Gaussian noise with variance beta'_k is added, drawn from ``rng``
    unless an explicit ``z`` is supplied; the final step (k == 1) is
    deterministic.
    """
    if not (1 <= k <= s.K):
        raise ValueError(f"reverse_step: step {k} outside [1, {s.K}]")
    eps_hat = denoise_fn(y_t, x, int(s.steps[k - 1]))
    mean = posterior_mean(y_t, eps_hat, k, s)
    if k == 1:
        return mean
    if z is None:
        if rng is None:
            raise ValueError("reverse_step: need rng or explicit z for k > 1")
        z = rng.gauss(y_t.shape)
    return mean + np.sqrt(s.beta_prime[k - 1]) * z


def restore(x: np.ndarray, denoise_fn, s: RespacedSchedule, t1: int,
            rng: Rng, noise_start: bool = False, snapshot_every: int = 0,
            stream_offset: int = 0) -> tuple[np.ndarray, SampleTrace]:
    """Truncated-start conditional sampling.

    Initializes ``y`` at respaced step ``t1`` by noising the degraded input
    ``x`` itself (the coarse structure of ``x`` survives, so only ``t1``
    reverse steps are needed), then runs ancestral steps down to 1.  With
    ``noise_start=True`` (allowed only when ``t1 == K``) the chain starts
    from pure Gaussian noise instead: classic full sampling.

    ``x`` must be (B, C, H, W) in model range.  Noise for batch item i at
    reverse step k comes from the keyed child stream
    ``rng.stream(stream_offset + i).stream(k)`` (the initializing draw uses
    key 0), so each item's result is independent of batch composition and
    chains with different ``t1`` share the noise of their common suffix of
    steps.  Returns the restored batch and a :class:`SampleTrace` whose
    ``nfe`` equals the number of reverse steps.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"restore: x must be (B, C, H, W), got {x.shape}")
    if not (1 <= t1 <= s.K):
        raise ValueError(f"restore: t1 must be in [1, {s.K}], got {t1}")
    if noise_start and t1 != s.K:
        raise ValueError(f"restore: noise_start requires t1 == K == {s.K}")
    bsz = x.shape[0]
    item_shape = x.shape[1:]
    rngs = [rng.stream(stream_offset + i) for i in range(bsz)]

    def draw(key: int):
        return np.stack([r.stream(key).gauss(item_shape) for r in rngs])

    if noise_start:
        y = draw(0)
    else:
        y = q_sample(x, t1, draw(0), s)

    trace = SampleTrace(nfe=0, start_step=t1)
    for k in range(t1, 0, -1):
        z = draw(k) if k > 1 else None
        y = reverse_step(y, x, k, denoise_fn, s, z=z)
        trace.nfe += 1
        if snapshot_every and (k == 1 or (t1 - k) % snapshot_every == 0):
            trace.snapshots.append((int(s.steps[k - 1]), y.copy()))
    return y, trace


def restore_batched(x: np.ndarray, denoise_fn, s: RespacedSchedule, t1: int,
                    rng: Rng, noise_start: bool = False,
                    batch_size: int = 64) -> tuple[np.ndarray, SampleTrace]:
    """Run :func:`restore` over a large item set in memory-bounded chunks.

    Per-item noise streams are indexed globally, so the result for item i is
    identical no matter how the set is chunked.
    """
    x = np.asarray(x)
    out = np.empty_like(x)
    trace = SampleTrace(nfe=0, start_step=t1)
    for lo in range(0, x.shape[0], batch_size):
        hi = min(lo + batch_size, x.shape[0])
        out[lo:hi], tr = restore(x[lo:hi], denoise_fn, s, t1, rng,
                                 noise_start=noise_start, stream_offset=lo)
        trace.nfe = tr.nfe
    return out, trace
