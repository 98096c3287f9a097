"""Pure-numpy twin of the compiled spline kernels in ``_kernels.pyx``."""
import numpy as np


def _weights(t, deriv):
    s = 1.0 - t
    if deriv == 0:
        return (
            s**3 / 6.0,
            (3.0 * t**3 - 6.0 * t**2 + 4.0) / 6.0,
            (-3.0 * t**3 + 3.0 * t**2 + 3.0 * t + 1.0) / 6.0,
            t**3 / 6.0,
        )
    if deriv == 1:
        return (
            -(s**2) / 2.0,
            (3.0 * t**2 - 4.0 * t) / 2.0,
            (-3.0 * t**2 + 2.0 * t + 1.0) / 2.0,
            t**2 / 2.0,
        )
    return (s, 3.0 * t - 2.0, -3.0 * t + 1.0, t)


def _locate(u, n, periodic):
    fl = np.floor(u)
    i = fl.astype(np.intp)
    if periodic:
        t = u - fl
        idx = [np.mod(i - 1 + k, n) for k in range(4)]
    else:
        i = np.clip(i, 0, n - 2)
        t = u - i
        idx = [i + k for k in range(4)]
    return idx, t


def eval_1d(coef, u, n, periodic, deriv):
    idx, t = _locate(np.asarray(u, dtype=float), n, periodic)
    w = _weights(t, deriv)
    out = np.zeros((len(t), coef.shape[1]))
    for k in range(4):
        out += w[k][:, None] * coef[idx[k]]
    return out


def eval_2d(coef, u, v, nu, nv, per_u, per_v, du, dv):
    iu, tu = _locate(np.asarray(u, dtype=float), nu, per_u)
    iv, tv = _locate(np.asarray(v, dtype=float), nv, per_v)
    wu = _weights(tu, du)
    wv = _weights(tv, dv)
    out = np.zeros((len(tu), coef.shape[2]))
    for a in range(4):
        for b in range(4):
            out += (wu[a] * wv[b])[:, None] * coef[iu[a], iv[b]]
    return out
