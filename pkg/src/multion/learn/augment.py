"""Map preprocessing for the networks and random-shift augmentation."""

from __future__ import annotations

import numpy as np


def _bins(n_in: int, n_out: int) -> list[tuple[int, int]]:
    # adaptive pooling windows: [floor(i*n/m), ceil((i+1)*n/m))
    return [((i * n_in) // n_out, -((-(i + 1) * n_in) // n_out)) for i in range(n_out)]


def downsample_map(tensor: np.ndarray, m_in: int = 24) -> np.ndarray:
    """(C, M, M) map tensor -> (m_in, m_in, C) uint8 by adaptive max-pooling.

    Works in both directions: when M < m_in each output cell covers one or
    two input cells.
    """
    C, H, W = tensor.shape
    t = tensor.astype(np.uint8, copy=False)
    rows = _bins(H, m_in)
    cols = _bins(W, m_in)
    tmp = np.stack([t[:, a:b, :].max(axis=1) for a, b in rows], axis=1)  # (C, m_in, W)
    out = np.stack([tmp[:, :, a:b].max(axis=2) for a, b in cols], axis=2)  # (C, m_in, m_in)
    return np.ascontiguousarray(out.transpose(1, 2, 0))


def shift_offsets(batch: int, pad: int, rng: np.random.Generator) -> np.ndarray:
    """(batch, 2) crop offsets (ox, oy), each in [0, 2*pad]."""
    return rng.integers(0, 2 * pad + 1, size=(batch, 2))


def augment_shift(x: np.ndarray, pad: int, rng: np.random.Generator | None = None, offsets: np.ndarray | None = None) -> np.ndarray:
    """Replicate-pad each (H, W, C) image by ``pad`` then crop back to (H, W).

    ``x`` is (B, H, W, C). Every channel of an image moves together. Pass
    ``offsets`` to reuse a shift (e.g. for the next observation).
    """
    if pad < 0:
        raise ValueError("pad must be non-negative")
    if pad == 0:
        return x.copy()
    B, H, W, _ = x.shape
    if offsets is None:
        offsets = shift_offsets(B, pad, rng if rng is not None else np.random.default_rng())
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="edge")
    out = np.empty_like(x)
    for i, (ox, oy) in enumerate(offsets):
        out[i] = padded[i, oy : oy + H, ox : ox + W]
    return out


def shift_actions(actions: np.ndarray, offsets: np.ndarray, pad: int, size: int) -> np.ndarray:
    """Move normalized (u, v) goals with the image content.

    Cropping at offset o moves content by (pad - o) cells on a ``size`` grid.
    """
    delta = (pad - offsets).astype(actions.dtype) / size
    return np.clip(actions + delta, 0.0, 1.0)
