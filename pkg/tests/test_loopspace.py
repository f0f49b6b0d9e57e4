import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabiflow.loopspace import (
    Loop,
    LoopMultiplier,
    TangentVector,
    derivative_matrix,
    l2_norm,
    l2r_distance,
    l2r_norm,
    linf_norm,
    loop_from_csv,
    loop_from_json,
    loop_to_csv,
    loop_to_json,
    mean,
    resample_samples,
    time_derivative,
    w12_norm,
)

TAU = 2 * np.pi


def circle(N=64, r=1.0, k=1):
    return Loop.from_function(lambda t: r * np.stack([np.cos(TAU * k * t), np.sin(TAU * k * t)], 1), N)


def random_loop(seed, N=32, d=2, modes=5):
    rng = np.random.default_rng(seed)
    t = np.arange(N) / N
    x = np.zeros((N, d))
    for k in range(modes):
        x += np.outer(np.cos(TAU * k * t), rng.standard_normal(d)) + np.outer(np.sin(TAU * k * t), rng.standard_normal(d))
    return Loop(x)


def test_norm_examples():
    assert l2_norm(Loop.constant([0.0, 0.0], 16)) == 0.0
    assert l2_norm(circle()) == pytest.approx(1.0, abs=1e-12)
    a = -3.7
    v = Loop.from_function(lambda t: np.stack([a * np.cos(TAU * t), 0 * t], 1), 64)
    assert l2_norm(v) == pytest.approx(abs(a) / np.sqrt(2), abs=1e-12)


def test_derivative_examples():
    assert np.abs(time_derivative(Loop.constant([1.0, 2.0], 16)).samples).max() < 1e-12
    d = time_derivative(circle())
    t = np.arange(64) / 64
    expect = np.stack([-TAU * np.sin(TAU * t), TAU * np.cos(TAU * t)], 1)
    assert np.abs(d.samples - expect).max() < 1e-10
    v = Loop.from_function(lambda t: np.stack([np.cos(TAU * 3 * t), 0 * t], 1), 64)
    assert np.abs(time_derivative(v).samples[:, 0]).max() == pytest.approx(6 * np.pi, abs=1e-10)


def test_w12_and_mean():
    c = np.array([0.3, -1.2])
    assert w12_norm(Loop.constant(c, 16)) == pytest.approx(np.linalg.norm(c))
    assert np.allclose(mean(Loop.constant(c, 16)), c)
    assert np.abs(mean(circle())).max() < 1e-12
    assert w12_norm(circle()) == pytest.approx(1 + TAU, abs=1e-9)


def test_loop_invariants_rejected():
    with pytest.raises(ValueError):
        Loop(np.zeros((7, 2)))
    with pytest.raises(ValueError):
        Loop(np.zeros((6, 2)))
    with pytest.raises(ValueError):
        Loop(np.zeros((16, 3)))


def test_modes_roundtrip():
    v = random_loop(1)
    assert np.allclose(Loop.from_modes(v.modes).samples, v.samples, rtol=1e-12, atol=1e-12)


def test_derivative_matrix_antisymmetric():
    D = derivative_matrix(16)
    assert np.abs(D + D.T).max() < 1e-12


def test_resample_is_exact_for_band_limited():
    v = random_loop(2, N=32, modes=5)
    up = resample_samples(v.samples, 64)
    assert np.allclose(up[::2], v.samples, atol=1e-12)
    assert np.allclose(resample_samples(up, 32), v.samples, atol=1e-12)


def test_additive_vs_quadratic():
    w = TangentVector(circle().samples, 2.0)
    assert l2r_norm(w) == pytest.approx(3.0)
    assert l2r_norm(w, "quadratic") == pytest.approx(np.sqrt(5.0))
    assert linf_norm(circle(r=2.0)) == pytest.approx(2.0)


def test_serialization_roundtrip(tmp_path):
    v = random_loop(3)
    loop_to_csv(v, tmp_path / "v.csv")
    loop_to_json(v, tmp_path / "v.json")
    assert np.array_equal(loop_from_csv(tmp_path / "v.csv").samples, v.samples)
    assert np.array_equal(loop_from_json(tmp_path / "v.json").samples, v.samples)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_parseval(seed):
    v = random_loop(seed)
    from_modes = np.sqrt(np.sum(np.abs(v.modes) ** 2))
    assert l2_norm(v) == pytest.approx(from_modes, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_reversal_negates_derivative(seed):
    v = random_loop(seed)
    idx = (-np.arange(v.N)) % v.N
    rev = Loop(v.samples[idx])
    assert np.allclose(time_derivative(rev).samples, -time_derivative(v).samples[idx], atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["additive", "quadratic"]))
def test_distance_is_metric(seed, kind):
    rng = np.random.default_rng(seed)
    a, b, c = (LoopMultiplier(random_loop(seed + i), float(rng.standard_normal())) for i in range(3))
    d = lambda x, y: l2r_distance(x, y, kind)  # noqa: E731
    assert d(a, a) == 0
    assert d(a, b) == pytest.approx(d(b, a), rel=1e-12)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
