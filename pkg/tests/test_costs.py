import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import e
from mcons.costs import (
    CostStack,
    NodeCost,
    NoiseModel,
    cost_value,
    euclidean_grad,
    load_dataset,
    noisy_grad,
    partition_dataset,
    random_quadratics,
    riemannian_grad,
    save_dataset,
    synthetic_samples,
)
from mcons.manifolds import Euclidean, Grassmann, ManifoldPoint, Sphere, TangentVector, log
from mcons.oracles import fd_gradient_check

S2 = Sphere(3)
S3 = Sphere(4)
G32 = Grassmann(3, 2)


def test_node_cost_validation():
    with pytest.raises(ValueError, match="unknown cost kind"):
        NodeCost("huber", np.ones((2, 3)))
    with pytest.raises(ValueError, match="finite"):
        NodeCost("eigvec", [[np.nan, 1.0, 0.0]])
    with pytest.raises(ValueError):
        NodeCost("quadratic", (np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2)))
    c = NodeCost("eigvec", [[1.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        c.data[0, 0] = 2.0
    with pytest.raises(ValueError, match="dimension"):
        cost_value(c, ManifoldPoint(S3, e(4, 0)))


def test_cost_value_examples():
    c = NodeCost("eigvec", [[1.0, 0.0, 0.0]])
    assert cost_value(c, ManifoldPoint(S2, e(3, 0))) == pytest.approx(-1.0, abs=1e-15)
    assert cost_value(c, ManifoldPoint(S2, e(3, 1))) == 0.0
    p = NodeCost("pca", [[1.0, 0.0, 0.0]])
    assert cost_value(p, ManifoldPoint(G32, np.eye(3)[:, :2])) == pytest.approx(-0.5, abs=1e-15)


def test_riemannian_grad_examples():
    c = NodeCost("eigvec", [[1.0, 0.0, 0.0]])
    x1 = ManifoldPoint(S2, e(3, 0))
    assert np.all(riemannian_grad(c, x1).coords == 0)
    x = ManifoldPoint(S2, (e(3, 0) + e(3, 1)) / math.sqrt(2))
    g = riemannian_grad(c, x)
    # project -2 (z^T x) z = -sqrt(2) e1 onto the tangent plane
    assert np.allclose(g.coords, -(e(3, 0) - e(3, 1)) / math.sqrt(2), atol=1e-15)
    toward = log(x, x1).coords
    assert float(np.sum(g.coords * toward)) < 0


@pytest.mark.parametrize("kind,m", [("eigvec", S3), ("pca", Grassmann(7, 3)), ("quadratic", Euclidean(4, 2))])
def test_riemannian_grad_matches_finite_differences(kind, m, rng):
    if kind == "quadratic":
        c = random_quadratics(1, 4, 2, 3)[0]
    else:
        c = NodeCost(kind, rng.standard_normal((6, m.ambient_rows)))
    for _ in range(5):
        x = ManifoldPoint(m, m.random_point(rng))
        err = fd_gradient_check(
            lambda X: cost_value(c, ManifoldPoint(m, X, check=False)),
            lambda X: riemannian_grad(c, ManifoldPoint(m, X, check=False)).coords,
            x, directions=20, stream=rng,
        )
        assert err <= 1e-5


def test_quadratic_cost_minimum():
    (c,) = random_quadratics(1, 3, 1, 0)
    H, off = c.data
    E = Euclidean(3)
    x = ManifoldPoint(E, off)
    assert cost_value(c, x) == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(riemannian_grad(c, x).coords, 0, atol=1e-12)


# -- noise ---------------------------------------------------------------------


def test_noisy_grad_examples():
    rng = np.random.default_rng(0)
    c = NodeCost("eigvec", rng.standard_normal((5, 4)))
    x = ManifoldPoint(S3, S3.random_point(rng))
    exact = riemannian_grad(c, x).coords
    assert np.array_equal(noisy_grad(c, x, NoiseModel.from_seed(0.0, 1, 2), 0).coords, exact)
    sigma, draws = 0.5, 10_000
    noise = NoiseModel.from_seed(sigma, 1, 2)
    samples = np.stack([noisy_grad(c, x, noise, 1).coords for _ in range(draws)])
    assert np.linalg.norm(samples.mean(axis=0) - exact) <= 5 * sigma / math.sqrt(draws) * math.sqrt(4)
    M = samples - exact
    assert np.max(np.sum(M * M, axis=(1, 2))) <= 100 * sigma**2 * 4
    assert np.max(np.abs(np.sum(M * x.coords, axis=(1, 2)))) < 1e-12


def test_noise_streams_are_independent_per_node():
    rng = np.random.default_rng(0)
    c = NodeCost("eigvec", rng.standard_normal((5, 4)))
    x = ManifoldPoint(S3, S3.random_point(rng))
    noise = NoiseModel.from_seed(1.0, 3, 2)
    a, b = noisy_grad(c, x, noise, 0).coords, noisy_grad(c, x, noise, 1).coords
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        NoiseModel(-1.0, [])


# -- datasets ------------------------------------------------------------------


def test_partition_examples():
    Z = np.arange(30.0).reshape(10, 3)
    (only,) = partition_dataset(Z, 1, 0)
    assert sorted(map(tuple, only.data)) == sorted(map(tuple, Z))
    parts = partition_dataset(Z, 10, 0)
    assert all(p.num_samples == 1 for p in parts)
    with pytest.raises(ValueError):
        partition_dataset(Z, 0, 0)


@given(n=st.integers(1, 40), N=st.integers(1, 12), seed=st.integers(0, 10_000))
def test_partition_preserves_multiset(n, N, seed):
    N = min(N, n)
    Z = np.random.default_rng(seed).integers(-3, 3, (n, 2)).astype(float)
    parts = partition_dataset(Z, N, seed)
    union = np.concatenate([p.data for p in parts])
    assert sorted(map(tuple, union)) == sorted(map(tuple, Z))
    assert [p.data.tobytes() for p in parts] == [q.data.tobytes() for q in partition_dataset(Z, N, seed)]


def test_synthetic_samples_have_exact_spectrum():
    Z, U, lam = synthetic_samples(6, 40, 0.5, 3)
    Cov = Z.T @ Z / 40
    assert np.allclose(Cov, (U * lam) @ U.T, atol=1e-13)
    assert np.allclose(np.sort(np.linalg.eigvalsh(Cov))[::-1], 0.5 ** np.arange(6), atol=1e-13)
    with pytest.raises(ValueError):
        synthetic_samples(6, 5, 0.5, 3)


def test_dataset_roundtrip(tmp_path):
    Z = np.random.default_rng(0).standard_normal((7, 3))
    save_dataset(Z, tmp_path / "z.txt")
    assert np.array_equal(load_dataset(tmp_path / "z.txt"), Z)
    (tmp_path / "bad.txt").write_text("1 nan\n")
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "bad.txt")


# -- stacks and sums -----------------------------------------------------------


@pytest.mark.parametrize("kind,m", [("eigvec", S3), ("pca", Grassmann(6, 2))])
def test_sum_consistency_and_linearity(kind, m, rng):
    Z = rng.standard_normal((25, m.ambient_rows))
    parts = partition_dataset(Z, 4, 1, kind=kind)
    whole = NodeCost(kind, Z)
    A = Z.T @ Z
    x = ManifoldPoint(m, m.random_point(rng))
    X = x.coords
    central = -float(np.trace(X.T @ A @ X)) * (1.0 if kind == "eigvec" else 0.5)
    assert sum(cost_value(c, x) for c in parts) == pytest.approx(central, abs=1e-10)
    assert cost_value(whole, x) == pytest.approx(central, abs=1e-10)
    gsum = sum(riemannian_grad(c, x).coords for c in parts)
    assert np.allclose(gsum, riemannian_grad(whole, x).coords, atol=1e-10)


def test_pca_rotation_invariance(rng):
    m = Grassmann(6, 3)
    c = NodeCost("pca", rng.standard_normal((10, 6)))
    W = m.random_point(rng)
    O = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    x, xo = ManifoldPoint(m, W), ManifoldPoint(m, W @ O)
    assert cost_value(c, xo) == pytest.approx(cost_value(c, x), abs=1e-10)
    assert riemannian_grad(c, xo).norm() == pytest.approx(riemannian_grad(c, x).norm(), abs=1e-10)


def test_cost_stack_matches_node_costs(rng):
    m = S3
    parts = partition_dataset(rng.standard_normal((12, 4)), 3, 0)
    stack = CostStack(parts, m)
    X = np.stack([m.random_point(rng) for _ in range(3)])
    vals = stack.local_values(X)
    for i, c in enumerate(parts):
        x = ManifoldPoint(m, X[i])
        assert vals[i] == pytest.approx(cost_value(c, x), abs=1e-13)
        assert np.allclose(stack.local_rgrad(X)[i], riemannian_grad(c, x).coords, atol=1e-13)
        assert np.allclose(stack.local_egrad(X)[i], euclidean_grad(c, X[i]), atol=1e-13)
    mean = np.mean([[cost_value(c, ManifoldPoint(m, X[j])) for c in parts] for j in range(3)], axis=1)
    assert np.allclose(stack.global_values(X), mean, atol=1e-13)
    assert np.allclose(stack.data_matrix(), sum(c.gram for c in parts), atol=1e-13)


def test_cost_stack_rejects_mixed_kinds():
    with pytest.raises(ValueError):
        CostStack([NodeCost("eigvec", [[1.0, 0, 0]]), NodeCost("pca", [[1.0, 0, 0]])], S2)
    with pytest.raises(ValueError):
        CostStack([NodeCost("eigvec", [[1.0, 0]])], S2)


def test_minibatch_is_unbiased(rng):
    m = S3
    parts = partition_dataset(rng.standard_normal((12, 4)), 3, 0)
    stack = CostStack(parts, m)
    X = np.stack([m.random_point(rng) for _ in range(3)])
    streams = [np.random.default_rng(s) for s in range(3)]
    avg = np.mean([stack.minibatch_rgrad(X, streams) for _ in range(20_000)], axis=0)
    assert np.allclose(avg, stack.local_rgrad(X), atol=0.15)
