import numpy as np
import pytest

from ecgi.apsim import SpatioTemporalField
from ecgi.metrics import MetricsReport, evaluate
from ecgi.ops import TemporalGrid


def field(data, tau=0.1):
    data = np.asarray(data, dtype=float)
    return SpatioTemporalField(data, TemporalGrid(tau, data.shape[1]))


def rand_field(rng, v=6, t=9):
    return field(rng.normal(size=(v, t)) + 0.5)


def test_perfect_reconstruction():
    rng = np.random.default_rng(0)
    f = rand_field(rng)
    m = evaluate(f, f)
    assert m.re == 0.0
    assert np.isclose(m.cc, 1.0)
    assert m.mse == 0.0
    assert m.n == f.data.size


def test_re_definition():
    rng = np.random.default_rng(1)
    ref = rand_field(rng)
    est = rand_field(rng)
    m = evaluate(ref, est)
    expect = (np.linalg.norm(est.data - ref.data)
              / np.linalg.norm(ref.data))
    assert np.isclose(m.re, expect, rtol=1e-12)


def test_mse_definition():
    rng = np.random.default_rng(2)
    ref = rand_field(rng)
    est = rand_field(rng)
    m = evaluate(ref, est)
    assert np.isclose(m.mse, ((est.data - ref.data) ** 2).mean(),
                      rtol=1e-12)


def test_identity_re_mse():
    # RE^2 * sum||u||^2 == N * MSE
    rng = np.random.default_rng(3)
    for _ in range(50):
        ref = rand_field(rng)
        est = rand_field(rng)
        m = evaluate(ref, est)
        lhs = m.re ** 2 * (ref.data ** 2).sum()
        rhs = m.n * m.mse
        assert np.isclose(lhs, rhs, rtol=1e-10)


def test_cc_affine_invariance():
    # CC is invariant to positive per-field affine maps a*u + b
    rng = np.random.default_rng(4)
    for _ in range(20):
        ref = rand_field(rng)
        est = rand_field(rng)
        base = evaluate(ref, est).cc
        a = float(rng.uniform(0.5, 3.0))
        b = float(rng.uniform(-2.0, 2.0))
        scaled = field(a * est.data + b, ref.grid.tau)
        assert np.isclose(evaluate(ref, scaled).cc, base, atol=1e-10)


def test_cc_anticorrelation():
    rng = np.random.default_rng(5)
    ref = rand_field(rng)
    flipped = field(-ref.data, ref.grid.tau)
    assert np.isclose(evaluate(ref, flipped).cc, -1.0)


def test_cc_pooled_over_nodes():
    # hand-built two-node case: per-node temporal mean-centering, node
    # sums pooled into one quotient
    ref = field([[0.0, 1.0, 2.0], [1.0, 3.0, 5.0]])
    est = field([[1.0, 2.0, 4.0], [0.0, 2.0, 7.0]])
    rc = ref.data - ref.data.mean(axis=1, keepdims=True)
    ec = est.data - est.data.mean(axis=1, keepdims=True)
    expect = (rc * ec).sum() / np.sqrt((rc ** 2).sum() * (ec ** 2).sum())
    assert np.isclose(evaluate(ref, est).cc, expect, rtol=1e-12)


def test_constant_reference_row_skipped_with_warning():
    ref = field([[1.0, 1.0, 1.0], [0.0, 1.0, 2.0]])
    est = field([[0.9, 1.1, 1.0], [0.1, 1.2, 1.9]])
    with pytest.warns(UserWarning):
        m = evaluate(ref, est)
    assert np.isfinite(m.cc)


def test_shape_mismatch_rejected():
    rng = np.random.default_rng(6)
    with pytest.raises(ValueError):
        evaluate(rand_field(rng, 5, 8), rand_field(rng, 5, 9))


def test_zero_reference_rejected():
    z = field(np.zeros((3, 4)))
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        evaluate(z, rand_field(rng, 3, 4))


def test_csv_row_format():
    m = MetricsReport(re=0.125, cc=0.5, mse=0.03125, n=100)
    row = m.csv_row()
    assert row.split(",")[-1] == "100"
    assert row.startswith("0.125,0.5,0.03125")
