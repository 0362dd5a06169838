"""Finite-difference statistics of a denoising latent trajectory.

A latent is a (H, W, C) float32 grid. Across consecutive denoising steps
the trajectory z_T, z_{T-1}, ... defines discrete derivatives:

    first difference   d1[k] = z[k] - z[k+1]          (newer minus older)
    n-th difference    dn    = d(n-1) applied again

so the n-th difference at the newest step equals the alternating binomial
combination sum_j (-1)^j C(n, j) z[newest - j]. The third difference acts
as a discrete acceleration of the trajectory and drives the patch-size
scheduler: its spatial spread is summarized by a per-patch population
standard deviation followed by a percentile across patches.

Latents stay float32; difference fields, std, and percentile accumulate in
float64 so the recursive and closed-form routes agree to ~1e-15 relative
and patch statistics do not lose mass to cancellation.
"""

from collections import deque
from math import comb

import numpy as np

from .errors import ValidationError
from .kernels import per_patch_std as _kernel_std
from .kernels import window_combine

__all__ = [
    "as_latent",
    "first_difference",
    "TrajectoryWindow",
    "nth_difference",
    "per_patch_std",
    "percentile",
]


def as_latent(data, divisors=()):
    """Validate and return a (H, W, C) float32 latent grid.

    ``divisors`` lists patch edges that must divide both H and W.
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 3:
        raise ValidationError(f"latent must be (H, W, C), got shape {arr.shape}")
    h, w, c = arr.shape
    if min(h, w, c) < 1:
        raise ValidationError(f"latent dims must be >= 1, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError("latent contains non-finite values")
    for d in divisors:
        if h % d or w % d:
            raise ValidationError(f"latent {h}x{w} not divisible by patch edge {d}")
    return arr


def first_difference(a, b):
    """Elementwise a - b, the displacement between consecutive latents."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    return (a - b).astype(np.float32, copy=False)


class TrajectoryWindow:
    """Ring buffer of the most recent (timestep, latent) pairs, newest last.

    Timestep indices must be strictly decreasing (denoising runs from high
    t to low t) and all latents must share one shape.
    """

    def __init__(self, capacity=4):
        if capacity < 1:
            raise ValidationError("window capacity must be >= 1")
        self.capacity = capacity
        self._entries = deque(maxlen=capacity)

    def __len__(self):
        return len(self._entries)

    @property
    def shape(self):
        return self._entries[-1][1].shape if self._entries else None

    def push(self, timestep, latent):
        latent = as_latent(latent)
        if self._entries:
            last_t, last_z = self._entries[-1]
            if timestep >= last_t:
                raise ValidationError(
                    f"timesteps must strictly decrease, got {timestep} after {last_t}"
                )
            if latent.shape != last_z.shape:
                raise ValidationError(
                    f"latent shape {latent.shape} differs from window shape {last_z.shape}"
                )
        self._entries.append((int(timestep), latent))

    def entries(self):
        """Oldest-to-newest list of (timestep, latent) pairs."""
        return list(self._entries)

    def newest(self, k):
        """The k most recent latents, oldest first."""
        if k > len(self._entries):
            raise ValidationError(f"window holds {len(self._entries)} entries, need {k}")
        return [z for _, z in list(self._entries)[-k:]]


def nth_difference(window, n, method="closed"):
    """n-th order finite difference at the window's newest entry, float64.

    ``method="closed"`` evaluates the alternating binomial form in one
    pass; ``method="recursive"`` repeatedly applies first differences.
    Both operate in float64 and agree to rounding error.
    """
    if n not in (1, 2, 3):
        raise ValidationError(f"difference order must be 1, 2, or 3, got {n}")
    if len(window) < n + 1:
        raise ValidationError(
            f"order-{n} difference needs a window of {n + 1} latents, have {len(window)}"
        )
    latents = window.newest(n + 1)  # oldest first
    shape = latents[0].shape
    if method == "recursive":
        seq = [z.astype(np.float64) for z in latents]
        for _ in range(n):
            seq = [seq[i + 1] - seq[i] for i in range(len(seq) - 1)]
        return seq[-1]
    if method == "closed":
        # newest-first coefficients: (-1)^j * C(n, j)
        coeffs = np.array([(-1.0) ** j * comb(n, j) for j in range(n + 1)])
        stack = np.stack([z.reshape(-1) for z in reversed(latents)]).astype(np.float64)
        return window_combine(stack, coeffs).reshape(shape)
    raise ValidationError(f"unknown method {method!r}")


def per_patch_std(field, patch_edge):
    """Population std of each non-overlapping patch, channels pooled.

    Returns a float64 grid of shape (H/patch_edge, W/patch_edge); entry
    (i, j) is the std over the patch_edge**2 * C values of patch (i, j).
    """
    field = np.asarray(field)
    if field.ndim != 3:
        raise ValidationError(f"field must be (H, W, C), got shape {field.shape}")
    h, w, _ = field.shape
    if patch_edge < 1 or h % patch_edge or w % patch_edge:
        raise ValidationError(f"patch edge {patch_edge} does not divide {h}x{w}")
    return _kernel_std(field, patch_edge)


def percentile(values, rho):
    """Linear-interpolation percentile of ``values`` at fraction ``rho``.

    Sorts ascending and evaluates rank r = rho * (len - 1), interpolating
    between the two closest ranks. rho=0 is the minimum, rho=1 the maximum.
    """
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValidationError("percentile of empty input")
    if not 0.0 <= rho <= 1.0:
        raise ValidationError(f"rho must be in [0, 1], got {rho}")
    srt = np.sort(arr)
    rank = rho * (srt.size - 1)
    lo = int(np.floor(rank))
    hi = min(lo + 1, srt.size - 1)
    frac = rank - lo
    return float(srt[lo] + frac * (srt[hi] - srt[lo]))
