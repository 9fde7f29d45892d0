import numpy as np
import pytest

from renyidistill._accel import HAVE_NUMBA, using_backend
from renyidistill.design import Layer, Partitioning, SparseDesign

BACKENDS = ["numpy"] + (["numba"] if HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    with using_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def group_design(p, g=10):
    rows = np.arange(p * g)
    return SparseDesign.from_coo(p * g, p, rows, rows // g, np.ones(p * g))


def full_layer(d):
    xi = np.full(d.n, -1, dtype=np.int64)
    xi[d.indices] = d.col_ids
    return Layer(xi, (xi >= 0).astype(np.int8))


def single_layer(d):
    return Partitioning((full_layer(d),))


def random_sparse_design(rng, n, p, density=0.05):
    """Random design whose every column touches at least one row."""
    rows, cols = [], []
    for j in range(p):
        k = max(1, rng.binomial(n, density))
        r = rng.choice(n, size=k, replace=False)
        rows.append(r)
        cols.append(np.full(k, j))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return SparseDesign.from_coo(n, p, rows, cols, rng.standard_normal(rows.size) + 0.1)


TEST_TABLE_P = 200


@pytest.fixture(scope="session")
def table_dir(tmp_path_factory):
    """Exact null tables at ``p = TEST_TABLE_P`` for the schedules the harness tests use."""
    from renyidistill.rtest import build_null_table, table_filename

    out = tmp_path_factory.mktemp("tables")
    for top in (1, 2, 4, 8, 32):
        build_null_table(top, 200_000, 100 + top, "order_statistics", TEST_TABLE_P).save(
            out / table_filename(top, "order_statistics", TEST_TABLE_P))
    return str(out)
