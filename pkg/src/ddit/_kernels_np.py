"""NumPy fallback for the compiled kernel core.

Same signatures and semantics as ``ddit._kernels``; selected by
``ddit.kernels`` when the extension is unavailable or disabled.
"""

import numpy as np


def per_patch_std(field, edge):
    """Population std per non-overlapping edge x edge patch of a (H, W, C) grid.

    Spatial and channel elements are pooled, so each patch contributes
    edge*edge*C values to one output cell. Accumulation is in float64.
    """
    h, w, c = field.shape
    gh, gw = h // edge, w // edge
    blocks = field.reshape(gh, edge, gw, edge, c)
    blocks = blocks.transpose(0, 2, 1, 3, 4).reshape(gh, gw, edge * edge * c)
    return blocks.astype(np.float64, copy=False).std(axis=-1)


def window_combine(stack, coeffs):
    """Linear combination sum_k coeffs[k] * stack[k] over a (K, M) float64 stack."""
    return coeffs @ stack
