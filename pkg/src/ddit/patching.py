"""Patch extraction, embedding math, and cross-size weight construction.

These are the NumPy reference implementations of the patch pipeline: the
transformer in ``ddit.model`` performs the same operations on tensors,
and the weight-construction routines here (pseudo-inverse embedder init,
upsampled de-embedder init, positional-grid interpolation) produce the
arrays the model is initialized from.

Conventions, fixed so weight files are reproducible byte for byte:
  * patches are non-overlapping squares, enumerated row-major over the grid;
  * each patch flattens in (row, col, channel) order;
  * all resampling is align-corners bilinear (endpoints map to endpoints).
"""

import numpy as np

from .errors import NumericError, ValidationError

# Condition-number guard for the pseudo-inverse construction. Bilinear
# upsampling matrices are far better conditioned than this in practice.
MAX_PROJECTION_CONDITION = 1e8


def patchify(z, edge):
    """Split a (H, W, C) grid into flattened edge x edge patches, (N, edge^2*C)."""
    z = np.asarray(z)
    if z.ndim != 3:
        raise ValidationError(f"expected (H, W, C) grid, got shape {z.shape}")
    h, w, c = z.shape
    if edge < 1 or h % edge or w % edge:
        raise ValidationError(f"patch edge {edge} does not divide {h}x{w}")
    gh, gw = h // edge, w // edge
    tiles = z.reshape(gh, edge, gw, edge, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(gh * gw, edge * edge * c))


def depatchify(patches, edge, height, width):
    """Exact inverse of :func:`patchify` for a (H, W, C) target grid."""
    patches = np.asarray(patches)
    if patches.ndim != 2:
        raise ValidationError(f"expected (N, edge^2*C) patches, got shape {patches.shape}")
    n, flat = patches.shape
    if edge < 1 or height % edge or width % edge:
        raise ValidationError(f"patch edge {edge} does not divide {height}x{width}")
    gh, gw = height // edge, width // edge
    if n != gh * gw:
        raise ValidationError(f"expected {gh * gw} patches for {height}x{width}, got {n}")
    if flat % (edge * edge):
        raise ValidationError(f"patch length {flat} is not a multiple of edge^2 = {edge * edge}")
    c = flat // (edge * edge)
    tiles = patches.reshape(gh, gw, edge, edge, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(height, width, c))


def embed(patches, weights, bias, pos=None, ident=None, extra=None):
    """Reference token embedding: W . patch + b, plus optional additive terms.

    ``weights`` has shape (edge, edge, C, d) and is applied in the flattened
    (row, col, channel) order; ``pos`` is per-token (N, d); ``ident`` and
    ``extra`` are single d-vectors broadcast over tokens.
    """
    patches = np.asarray(patches)
    weights = np.asarray(weights)
    e1, e2, c, d = weights.shape
    if e1 != e2:
        raise ValidationError(f"embedder weights must be square patches, got {weights.shape}")
    flat = e1 * e2 * c
    if patches.ndim != 2 or patches.shape[1] != flat:
        raise ValidationError(
            f"patch length {patches.shape} incompatible with embedder patch size {e1}x{e2}x{c}"
        )
    tokens = patches @ weights.reshape(flat, d) + np.asarray(bias).reshape(d)
    if pos is not None:
        pos = np.asarray(pos)
        if pos.shape != tokens.shape:
            raise ValidationError(f"positional grid shape {pos.shape} != tokens {tokens.shape}")
        tokens = tokens + pos
    if ident is not None:
        tokens = tokens + np.asarray(ident).reshape(d)
    if extra is not None:
        tokens = tokens + np.asarray(extra).reshape(d)
    return tokens


def bilinear_resize(grid, out_h, out_w=None):
    """Align-corners bilinear resize of a (H, W, C) grid to (out_h, out_w, C).

    Sample position i of an output axis of length k maps to source
    coordinate i * (n - 1) / (k - 1); a length-1 output samples the source
    center. Corners are therefore preserved exactly.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[:, :, None]
        squeeze = True
    else:
        squeeze = False
    if grid.ndim != 3:
        raise ValidationError(f"expected 2-D or 3-D grid, got shape {grid.shape}")
    if out_w is None:
        out_w = out_h
    if out_h < 1 or out_w < 1:
        raise ValidationError("target size must be >= 1x1")

    h, w, _ = grid.shape
    rows = _sample_coords(h, out_h)
    cols = _sample_coords(w, out_w)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None, None]
    fc = (cols - c0)[None, :, None]

    top = grid[r0][:, c0] * (1 - fc) + grid[r0][:, c1] * fc
    bot = grid[r1][:, c0] * (1 - fc) + grid[r1][:, c1] * fc
    out = top * (1 - fr) + bot * fr
    return out[:, :, 0] if squeeze else out


def _sample_coords(n_src, n_dst):
    if n_dst == 1:
        return np.array([(n_src - 1) / 2.0])
    return np.arange(n_dst) * (n_src - 1) / (n_dst - 1)


def resize_matrix(src_edge, dst_edge):
    """Matrix form of align-corners bilinear resize on a square single channel.

    Returns R of shape (dst_edge^2, src_edge^2) with vec(resize(x)) = R vec(x)
    for row-major flattened x. Built column by column from basis grids, which
    keeps it exactly consistent with :func:`bilinear_resize`.
    """
    mat = np.zeros((dst_edge * dst_edge, src_edge * src_edge))
    for idx in range(src_edge * src_edge):
        basis = np.zeros(src_edge * src_edge)
        basis[idx] = 1.0
        out = bilinear_resize(basis.reshape(src_edge, src_edge), dst_edge, dst_edge)
        mat[:, idx] = out.reshape(-1)
    return mat


def init_pseudo_inverse(base_weights, base_bias, m):
    """Embedder weights for patch edge p*m that replicate the base embedder.

    Let U be the bilinear upsampling matrix from p to p*m patches. The new
    weights are chosen as pinv(U^T) applied spatially to the base weights,
    which enforces  embed_m(upsample(x)) == embed_1(x)  for every base-size
    patch x (U has full column rank, so U^T pinv(U^T) is the identity on
    base patch space). The bias is copied unchanged.
    """
    base_weights = np.asarray(base_weights, dtype=np.float64)
    p, p2, c, d = base_weights.shape
    if p != p2:
        raise ValidationError(f"base embedder weights must be square, got {base_weights.shape}")
    if m < 1:
        raise ValidationError(f"multiplier must be >= 1, got {m}")
    if m == 1:
        return base_weights.copy(), np.array(base_bias, copy=True)

    up = resize_matrix(p, p * m)  # ((pm)^2, p^2)
    gram_cond = np.linalg.cond(up.T @ up)
    if not np.isfinite(gram_cond) or gram_cond > MAX_PROJECTION_CONDITION:
        raise NumericError(
            f"bilinear projection p={p} -> {p * m} is ill-conditioned "
            f"(condition number {gram_cond:.3e})"
        )
    proj = np.linalg.pinv(up.T)  # ((pm)^2, p^2)
    new_w = np.einsum("ts,scd->tcd", proj, base_weights.reshape(p * p, c, d))
    return new_w.reshape(p * m, p * m, c, d), np.array(base_bias, copy=True)


def init_upsampled_deembedder(base_weights, base_bias, m):
    """De-embedder weights for patch edge p*m as bilinear upsamples of the base.

    Each hidden unit's p x p x C output patch is upsampled to p*m, and so is
    the bias patch; composed with the pseudo-inverse embedder this keeps the
    embed -> de-embed pathway approximately size-independent at init.
    """
    base_weights = np.asarray(base_weights, dtype=np.float64)
    d, p, p2, c = base_weights.shape
    if p != p2:
        raise ValidationError(f"base de-embedder weights must be square, got {base_weights.shape}")
    if m < 1:
        raise ValidationError(f"multiplier must be >= 1, got {m}")
    if m == 1:
        return base_weights.copy(), np.array(base_bias, copy=True)

    up = resize_matrix(p, p * m)  # ((pm)^2, p^2)
    new_w = np.einsum("ts,dsc->dtc", up, base_weights.reshape(d, p * p, c))
    new_b = bilinear_resize(np.asarray(base_bias, dtype=np.float64), p * m, p * m)
    return new_w.reshape(d, p * m, p * m, c), new_b


def interpolate_pos(base_grid, m):
    """Positional grid for multiplier m: align-corners resize of the base grid.

    The base grid is (H/p, W/p, d); the result is (H/(p*m), W/(p*m), d).
    """
    base_grid = np.asarray(base_grid)
    gh, gw, _ = base_grid.shape
    if m < 1 or gh % m or gw % m:
        raise ValidationError(f"multiplier {m} does not divide the {gh}x{gw} positional grid")
    return bilinear_resize(base_grid, gh // m, gw // m)
