"""Pure-numpy kernels, used when the compiled extension is unavailable.

All functions take C-contiguous float64 arrays. ``offsets`` is an int64 array of
length B+1 delimiting B consecutive row segments (one segment per cloud).
"""
import numpy as np


def pairwise_sqdist(X, Y):
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def segment_max(H, offsets):
    """Per-segment column max and the (global) row index attaining it.

    Ties resolve to the first row, matching the compiled kernel.
    """
    B = len(offsets) - 1
    vals = np.empty((B, H.shape[1]), dtype=np.float64)
    arg = np.empty((B, H.shape[1]), dtype=np.int64)
    for b in range(B):
        s, e = offsets[b], offsets[b + 1]
        idx = np.argmax(H[s:e], axis=0)
        arg[b] = idx + s
        vals[b] = H[idx + s, np.arange(H.shape[1])]
    return vals, arg


def segment_max_backward(grad, argmax, n_rows):
    out = np.zeros((n_rows, grad.shape[1]), dtype=np.float64)
    cols = np.broadcast_to(np.arange(grad.shape[1]), argmax.shape)
    # each (row, col) pair is hit at most once: segments are disjoint
    out[argmax.ravel(), cols.ravel()] = grad.ravel()
    return out
