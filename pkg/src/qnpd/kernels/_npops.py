"""Pure NumPy implementations of the per-iteration hot kernels.

All functions take and return flat float64 arrays; images are row-major
(h, w) and gradient fields are interleaved per pixel, i.e. element
2*p is the horizontal and 2*p + 1 the vertical forward difference at
pixel p.
"""

import numpy as np
from scipy import ndimage


def grad2d(x, h, w):
    """Forward differences with Neumann boundary (last row/col diff = 0)."""
    img = x.reshape(h, w)
    out = np.zeros((h, w, 2))
    out[:, :-1, 0] = img[:, 1:] - img[:, :-1]
    out[:-1, :, 1] = img[1:, :] - img[:-1, :]
    return out.reshape(-1)


def div2d(y, h, w):
    """Adjoint of grad2d (negative divergence)."""
    field = y.reshape(h, w, 2)
    out = np.zeros((h, w))
    out[:, 1:] += field[:, :-1, 0]
    out[:, :-1] -= field[:, :-1, 0]
    out[1:, :] += field[:-1, :, 1]
    out[:-1, :] -= field[:-1, :, 1]
    return out.reshape(-1)


def project_groups_l2(v, radius, gsize):
    """Project each consecutive group of gsize entries onto the l2 ball."""
    groups = v.reshape(-1, gsize)
    norms = np.sqrt(np.sum(groups * groups, axis=1))
    scale = np.ones_like(norms)
    outside = norms > radius
    scale[outside] = radius / norms[outside]
    return (groups * scale[:, None]).reshape(-1)


def kl_sum(b, z, floor=0.0):
    """Kullback-Leibler data term sum(z - b*log(z)); b = 0 terms contribute z.

    With floor > 0, z is clamped to floor inside the log and the number of
    clamped (b > 0) entries is returned; with floor = 0 a nonpositive z at a
    b > 0 entry yields +inf.
    """
    pos = b > 0.0
    zp = z[pos]
    n_floored = 0
    if floor > 0.0:
        n_floored = int(np.count_nonzero(zp < floor))
        zp = np.maximum(zp, floor)
    elif np.any(zp <= 0.0):
        return np.inf, 0
    value = float(np.sum(z)) - float(np.dot(b[pos], np.log(zp)))
    return value, n_floored


def kl_grad_factor(b, z, floor=0.0):
    """Componentwise 1 - b/z factor of the KL gradient, with optional floor."""
    n_floored = 0
    if floor > 0.0:
        n_floored = int(np.count_nonzero((b > 0.0) & (z < floor)))
        z = np.maximum(z, floor)
    out = np.ones_like(z)
    pos = b > 0.0
    out[pos] -= b[pos] / z[pos]
    return out, n_floored


def convolve2d_wrap(x, kernel, h, w):
    """Periodic 2-d convolution with an odd-sized kernel."""
    return ndimage.convolve(x.reshape(h, w), kernel, mode="wrap").reshape(-1)


def correlate2d_wrap(x, kernel, h, w):
    """Adjoint of convolve2d_wrap (periodic correlation)."""
    return ndimage.correlate(x.reshape(h, w), kernel, mode="wrap").reshape(-1)
