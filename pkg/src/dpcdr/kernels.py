"""Kernel backend selection.

The compiled extension ``dpcdr._kernels`` is used when it was built; otherwise
(or when ``DPCDR_PURE_PYTHON=1``) the numpy implementations are used. Both
expose the same three functions with the same argument conventions.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("DPCDR_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def dirac_rk4(theta_d0, theta_g0, m, tau: float, h: float, n_steps: int, impl=None):
    """Integrate the controlled Dirac-GAN system with classic RK4.

    Returns ``(theta_d, theta_g)`` arrays of shape ``(n_steps + 1, dim)``.
    """
    impl = impl or _impl
    return impl.dirac_rk4(
        np.ascontiguousarray(theta_d0, dtype=np.float64),
        np.ascontiguousarray(theta_g0, dtype=np.float64),
        np.ascontiguousarray(m, dtype=np.float64),
        float(tau),
        float(h),
        int(n_steps),
    )


def grouped_sq_norms(a, d, groups, n_groups: int, bias_weight: float = 1.0, impl=None):
    """Per-group squared norm of a dense layer's summed per-row gradients.

    Row ``k`` contributes the weight gradient ``outer(a[k], d[k])`` and the
    bias gradient ``d[k]``; rows sharing a group id are summed before taking
    the norm. ``bias_weight=0`` drops the bias part.
    """
    impl = impl or _impl
    return impl.grouped_sq_norms(
        np.ascontiguousarray(a, dtype=np.float64),
        np.ascontiguousarray(d, dtype=np.float64),
        np.ascontiguousarray(groups, dtype=np.int64),
        int(n_groups),
        float(bias_weight),
    )


def loo_ranks(scores, pos_col, item_ids, impl=None):
    """1-based rank of the held-out positive in each candidate row.

    Ties are broken by ascending item id.
    """
    impl = impl or _impl
    return impl.loo_ranks(
        np.ascontiguousarray(scores, dtype=np.float64),
        np.ascontiguousarray(pos_col, dtype=np.int64),
        np.ascontiguousarray(item_ids, dtype=np.int64),
    )
