import numpy as np
import pytest

from dpcdr import kernels, _kernels_py
from dpcdr.dataio import make_eval_split
from dpcdr.synth import SynthSpec, generate_synthetic, raw_synthetic

try:
    from dpcdr import _kernels as _kernels_ext
except ImportError:  # extension not built
    _kernels_ext = None

IMPLS = [pytest.param(_kernels_py, id="python")]
if _kernels_ext is not None:
    IMPLS.append(pytest.param(_kernels_ext, id="cython"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(params=IMPLS)
def impl(request):
    return request.param


@pytest.fixture(scope="session")
def small_pair():
    """120 users, 200 source and ~110 target items; enough unrated items for 99 negatives."""
    spec = SynthSpec(n_users=120, n_items_src=200, n_items_tgt=120, n_latent_clusters=4, positives_per_user_tgt=8, seed=1)
    pair = generate_synthetic(spec)
    return pair, make_eval_split(pair, seed=1)


@pytest.fixture(scope="session")
def toy_pair():
    spec = SynthSpec(
        n_users=30, n_items_src=20, n_items_tgt=20, n_latent_clusters=2,
        positives_per_user_src=5, positives_per_user_tgt=5, noise_flip_prob=0.0, seed=0,
    )
    return raw_synthetic(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def backend_name():
    return kernels.BACKEND
