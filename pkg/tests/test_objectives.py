import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hetskel.autodiff import Tensor, gradient_check
from hetskel.checks import model_suites
from hetskel.errors import DegenerateBatchError, NonFiniteError, ShapeError
from hetskel.objectives import (
    LossConfig,
    consistency_loss,
    covariance_term,
    mse,
    total_loss,
    variance_term,
    vc,
    vc_loss,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.tuples(st.integers(2, 6), st.integers(1, 6))


# scalar oracles written as explicit loops


def variance_oracle(z, gamma=1.0, eps=1e-4, inside=False):
    n, d = z.shape
    total = 0.0
    for j in range(d):
        mean = sum(z[i, j] for i in range(n)) / n
        var = sum((z[i, j] - mean) ** 2 for i in range(n)) / (n - 1)
        std = (var + eps) ** 0.5 if inside else var**0.5
        total += max(0.0, gamma - std) if inside else max(0.0, gamma - std + eps)
    return total / d


def covariance_oracle(z):
    n, d = z.shape
    means = [sum(z[i, j] for i in range(n)) / n for j in range(d)]
    total = 0.0
    for a in range(d):
        for b in range(d):
            if a != b:
                c = sum((z[i, a] - means[a]) * (z[i, b] - means[b]) for i in range(n)) / (n - 1)
                total += c * c
    return total / d


def mse_oracle(a, b):
    n, d = a.shape
    return sum((a[i, j] - b[i, j]) ** 2 for i in range(n) for j in range(d)) / (n * d)


def consistency_oracle(z, zf, ordered=False):
    total = sum(mse_oracle(z[s], zf[s]) for s in z)
    pairs = itertools.permutations(z, 2) if ordered else itertools.combinations(z, 2)
    return total + sum(mse_oracle(z[a], z[b]) for a, b in pairs)


def sets(rng, n, d):
    z = {s: rng.normal(size=(n, d)) for s in "JCS"}
    zf = {s: rng.normal(size=(n, d)) for s in "JCS"}
    return z, zf


def tensors(dct):
    return {k: Tensor(v) for k, v in dct.items()}


# consistency


def test_consistency_of_identical_sets_is_zero(rng):
    m = rng.normal(size=(4, 5))
    z = {s: Tensor(m) for s in "JCS"}
    assert consistency_loss(z, dict(z)).item() == 0.0


def test_consistency_single_unit_offset():
    base = np.random.default_rng(0).normal(size=(3, 7))
    z = {s: Tensor(base) for s in "JCS"}
    zf = dict(z)
    z = dict(z)
    zf["J"] = Tensor(base - 1.0)
    assert consistency_loss(z, zf).item() == pytest.approx(1.0, rel=1e-12)


@given(dims, seeds, st.booleans())
def test_consistency_matches_oracle(shape, seed, ordered):
    z, zf = sets(np.random.default_rng(seed), *shape)
    got = consistency_loss(tensors(z), tensors(zf), ordered_pairs=ordered).item()
    assert got == pytest.approx(consistency_oracle(z, zf, ordered), rel=1e-12)


def test_ordered_pairs_double_the_pair_sum(rng):
    z, _ = sets(rng, 4, 3)
    zt = tensors(z)
    unordered = consistency_loss(zt, dict(zt)).item()
    ordered = consistency_loss(zt, dict(zt), ordered_pairs=True).item()
    assert ordered == pytest.approx(2 * unordered, rel=1e-12)


def test_term_counts_per_stream_subset(rng):
    z, zf = sets(rng, 4, 3)
    only_j = consistency_loss({"J": Tensor(z["J"])}, {"J": Tensor(zf["J"])}).item()
    assert only_j == pytest.approx(mse_oracle(z["J"], zf["J"]), rel=1e-12)
    two = consistency_loss(tensors({k: z[k] for k in "JC"}), tensors({k: zf[k] for k in "JC"})).item()
    expected = mse_oracle(z["J"], zf["J"]) + mse_oracle(z["C"], zf["C"]) + mse_oracle(z["J"], z["C"])
    assert two == pytest.approx(expected, rel=1e-12)


def test_consistency_shape_errors(rng):
    with pytest.raises(ShapeError):
        mse(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        consistency_loss({"J": Tensor(np.zeros((2, 2)))}, {"C": Tensor(np.zeros((2, 2)))})


# variance


def test_variance_hinge_inactive():
    z = np.array([[0.0, 10.0], [3.0, -10.0]])
    assert variance_term(Tensor(z)).item() == 0.0


def test_variance_worked_example():
    z = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert variance_term(Tensor(z), gamma=1.0, eps=1e-4).item() == pytest.approx(0.50005, rel=1e-12)


@given(dims, seeds, st.booleans())
def test_variance_matches_oracle(shape, seed, inside):
    z = np.random.default_rng(seed).normal(scale=0.8, size=shape)
    got = variance_term(Tensor(z), 1.0, 1e-4, inside).item()
    assert got == pytest.approx(variance_oracle(z, 1.0, 1e-4, inside), rel=1e-12, abs=1e-15)


@given(dims, seeds, st.floats(-50, 50))
def test_variance_is_translation_invariant(shape, seed, shift):
    z = np.random.default_rng(seed).normal(size=shape)
    col = np.random.default_rng(seed + 1).integers(shape[1])
    moved = z.copy()
    moved[:, col] += shift
    assert variance_term(Tensor(moved)).item() == pytest.approx(variance_term(Tensor(z)).item(), rel=1e-9, abs=1e-9)


def test_variance_needs_two_rows():
    with pytest.raises(DegenerateBatchError):
        variance_term(Tensor(np.zeros((1, 3))))


# covariance


def test_covariance_of_orthogonal_columns_is_zero():
    z = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    assert covariance_term(Tensor(z)).item() == 0.0


def test_covariance_worked_example():
    assert covariance_term(Tensor([[1.0, 1.0], [-1.0, -1.0]])).item() == 4.0


@given(dims, seeds)
def test_covariance_matches_oracle(shape, seed):
    z = np.random.default_rng(seed).normal(size=shape)
    assert covariance_term(Tensor(z)).item() == pytest.approx(covariance_oracle(z), rel=1e-12, abs=1e-15)


@given(dims, seeds)
def test_covariance_invariances(shape, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=shape)
    base = covariance_term(Tensor(z)).item()
    shifted = covariance_term(Tensor(z + rng.normal(size=shape[1]) * 10)).item()
    permuted = covariance_term(Tensor(z[rng.permutation(shape[0])])).item()
    assert shifted == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert permuted == pytest.approx(base, rel=1e-12, abs=1e-15)


@given(dims, seeds, st.sampled_from([0.5, 2.0, 3.0, -1.5]))
def test_covariance_scales_with_fourth_power(shape, seed, c):
    z = np.random.default_rng(seed).normal(size=shape)
    assert covariance_term(Tensor(z * c)).item() == pytest.approx(c**4 * covariance_term(Tensor(z)).item(), rel=1e-12, abs=1e-15)


# vc and total


def test_vc_with_zero_mu_is_covariance(rng):
    z = Tensor(rng.normal(size=(5, 3)))
    assert vc(z, LossConfig(mu=0.0)).item() == covariance_term(z).item()


def test_vc_loss_of_six_equal_sets(rng):
    m = Tensor(rng.normal(size=(5, 3)))
    cfg = LossConfig()
    z = {s: m for s in "JCS"}
    assert vc_loss(z, dict(z), cfg).item() == pytest.approx(6 * vc(m, cfg).item(), rel=1e-12)


@given(dims, seeds, st.floats(0, 5), st.floats(0.1, 2))
def test_vc_loss_matches_oracle(shape, seed, mu, gamma):
    z, zf = sets(np.random.default_rng(seed), *shape)
    cfg = LossConfig(mu=mu, gamma=gamma)
    expected = sum(
        mu * variance_oracle(x, gamma, cfg.eps) + covariance_oracle(x) for x in list(z.values()) + list(zf.values())
    )
    assert vc_loss(tensors(z), tensors(zf), cfg).item() == pytest.approx(expected, rel=1e-12, abs=1e-14)


def test_total_loss_examples():
    assert total_loss(Tensor(0.7), Tensor(0.0), Tensor(0.0), LossConfig(lambda_con=0.0)).item() == 0.0
    assert total_loss(Tensor(1.0), Tensor(3.0), Tensor(5.0), LossConfig(lambda_con=2.0)).item() == 10.0


def test_total_loss_names_non_finite_component():
    with pytest.raises(NonFiniteError, match="L_reg"):
        total_loss(Tensor(1.0), Tensor(np.inf), Tensor(0.0), LossConfig())


@given(dims, seeds)
def test_all_terms_non_negative(shape, seed):
    z, zf = sets(np.random.default_rng(seed), *shape)
    zt, zft = tensors(z), tensors(zf)
    for value in (consistency_loss(zt, zft), vc_loss(zt, zft, LossConfig())):
        assert value.item() >= 0


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(gamma=0.0)
    with pytest.raises(ValueError):
        LossConfig(mu=-1.0)


@given(st.integers(2, 4), st.integers(1, 8), seeds)
def test_term_gradients(n, d, seed):
    rng = np.random.default_rng(seed)
    z = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    zf = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    zj = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    assert gradient_check(lambda: variance_term(z), [z]) < 1e-4
    assert gradient_check(lambda: covariance_term(z), [z]) < 1e-4
    assert gradient_check(lambda: consistency_loss({"J": z, "C": zj}, {"J": zf, "C": zf}), [z, zf, zj]) < 1e-4


def test_loss_terms_through_the_full_model():
    results = model_suites(seed=1, max_entries=3)
    assert {r.name for r in results} >= {"model:L", "model:L_rec", "model:L_con", "model:L_reg"}
    assert all(r.passed for r in results), [(r.name, r.error) for r in results]
