"""Pure numpy versions of the loop kernels.

Used when the compiled extension is unavailable or ``DPCDR_PURE_PYTHON=1``.
"""

import numpy as np


def dirac_rk4(theta_d0, theta_g0, m, tau, h, n_steps):
    d = np.array(theta_d0, dtype=np.float64)
    g = np.array(theta_g0, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    out_d = np.empty((n_steps + 1, d.shape[0]))
    out_g = np.empty_like(out_d)
    out_d[0], out_g[0] = d, g
    hh, h6 = 0.5 * h, h / 6.0
    # overflow is left to the caller's finiteness check, matching the compiled loop
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            k1d = m - g - tau * d
            k1g = d
            d2 = d + hh * k1d
            g2 = g + hh * k1g
            k2d = m - g2 - tau * d2
            k2g = d2
            d2 = d + hh * k2d
            g2 = g + hh * k2g
            k3d = m - g2 - tau * d2
            k3g = d2
            d2 = d + h * k3d
            g2 = g + h * k3g
            k4d = m - g2 - tau * d2
            k4g = d2
            d = d + h6 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
            g = g + h6 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
            out_d[k], out_g[k] = d, g
    return out_d, out_g


def grouped_sq_norms(a, d, groups, n_groups, bias_weight):
    a = np.asarray(a, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    groups = np.asarray(groups)
    same = groups[:, None] == groups[None, :]
    pair = (a @ a.T + bias_weight) * (d @ d.T) * same
    return np.bincount(groups, weights=pair.sum(axis=1), minlength=n_groups)


def loo_ranks(scores, pos_col, item_ids):
    scores = np.asarray(scores, dtype=np.float64)
    rows = np.arange(scores.shape[0])
    sp = scores[rows, pos_col][:, None]
    ip = item_ids[rows, pos_col][:, None]
    ahead = (scores > sp) | ((scores == sp) & (item_ids < ip))
    return 1 + ahead.sum(axis=1).astype(np.int64)
