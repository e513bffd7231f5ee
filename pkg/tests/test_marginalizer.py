import itertools

import numpy as np
import pytest

from vaeac import experiments as ex
from vaeac import marginalizer as um
from vaeac.autodiff import ShapeError
from vaeac.config import TrainConfig
from vaeac.data import BINARY, CATEGORICAL, REAL, Feature, FeatureSchema
from vaeac.masks import make_sampler

MIXED = FeatureSchema([Feature("r", REAL), Feature("c", CATEGORICAL, ["a", "b", "c", "d"]), Feature("p", BINARY)])


def untrained(schema=MIXED, seed=0):
    return um.UmModel(schema, TrainConfig(hidden=(8,)), rng=np.random.default_rng(seed))


def test_output_heads():
    m = untrained()
    # real mean + real sigma + 4 logits + 1 logit
    assert m.sizes[-1] == 7
    out = um.um_forward(m, np.zeros((2, 3)), np.ones((2, 3)))
    assert out.shape == (2, 7)


def test_forward_deterministic_and_schema_checked():
    m = untrained()
    x = np.array([[0.3, 2.0, 1.0]])
    b = np.array([[1.0, 0.0, 1.0]])
    np.testing.assert_array_equal(um.um_forward(m, x, b).data, um.um_forward(m, x, b).data)
    with pytest.raises(ShapeError):
        um.um_forward(m, np.zeros((1, 4)), np.ones((1, 4)))


def test_sample_with_empty_mask_is_identity():
    m = untrained()
    x = np.array([[0.3, 2.0, 1.0]])
    np.testing.assert_array_equal(um.um_chain_sample(m, x, np.zeros((1, 3)), np.random.default_rng(0)), x)
    assert m.forward_calls == 0


@pytest.mark.parametrize("b", [[1, 0, 0], [1, 1, 0], [1, 1, 1]])
def test_cost_contract(b):
    m = untrained()
    m.forward_calls = 0
    out = um.um_chain_sample(m, np.array([[0.3, 2.0, 1.0]]), np.array([b], float), np.random.default_rng(1))
    assert m.forward_calls == sum(b)
    assert out[0, 1] in (0, 1, 2, 3) and out[0, 2] in (0, 1)


def test_sample_fills_missing_cells():
    x = np.array([[np.nan, 1.0, np.nan]])
    out = um.um_chain_sample(untrained(), x, np.zeros((1, 3)), np.random.default_rng(2))
    assert not np.isnan(out).any() and out[0, 1] == 1.0


def test_single_feature_log_lik_is_its_marginal():
    m = untrained(FeatureSchema([Feature("a", BINARY), Feature("b", BINARY)]))
    x, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    logit = um.um_forward(m, x[None], b[None]).data[0, 1]
    expected = -np.log1p(np.exp(logit))  # x_1 = 0
    assert um.um_chain_log_lik(m, x, b, [1]) == pytest.approx(expected, rel=1e-12)


def test_chain_log_lik_permutation_checked():
    m = untrained()
    with pytest.raises(ValueError):
        um.um_chain_log_lik(m, [0.1, 1.0, 0.0], [1, 0, 1], [0])
    with pytest.raises(ValueError):
        um.um_chain_log_lik(m, [0.1, 1.0, 0.0], [1, 0, 1], [0, 1])


def test_five_feature_factorization():
    # log p(x1, x4, x5 | x2, x3) = log p(x4|.) + log p(x1|.) + log p(x5|.) for the order (4, 1, 5)
    schema = FeatureSchema([Feature(f"x{i}", BINARY) for i in range(1, 6)])
    m = untrained(schema, seed=3)
    x = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    b = np.array([1.0, 0.0, 0.0, 1.0, 1.0])
    total, bcur = 0.0, b.copy()
    for i in (3, 0, 4):
        logit = um.um_forward(m, x[None], bcur[None]).data[0, i]
        total += -np.logaddexp(0, -logit) if x[i] == 1 else -np.logaddexp(0, logit)
        bcur[i] = 0.0
    assert um.um_chain_log_lik(m, x, b, [3, 0, 4]) == pytest.approx(total, rel=1e-12)


def test_chain_rule_normalizes_for_any_weights():
    schema = FeatureSchema([Feature(f"v{i}", BINARY) for i in range(3)])
    m = untrained(schema, seed=4)
    b = np.array([1.0, 1.0, 0.0])
    for perm in ([0, 1], [1, 0]):
        probs = [np.exp(um.um_chain_log_lik(m, x, b, perm)) for x in ex.completions(b, {2: 1})]
        assert sum(probs) == pytest.approx(1.0, abs=1e-12)


def test_real_log_lik_uses_original_units():
    schema = FeatureSchema([Feature("a", REAL, mean=3.0, std=4.0), Feature("b", BINARY)])
    m = untrained(schema)
    unit = um.UmModel(FeatureSchema([Feature("a", REAL), Feature("b", BINARY)]), m.config, m.params)
    b = np.array([1.0, 0.0])
    raw = um.um_chain_log_lik(m, [7.0, 1.0], b, [0])
    norm = um.um_chain_log_lik(unit, [1.0, 1.0], b, [0])
    assert raw == pytest.approx(norm - np.log(4.0), rel=1e-12)


def test_log_lik_matches_explicit_orders():
    schema = FeatureSchema([Feature(f"v{i}", BINARY) for i in range(3)])
    m = untrained(schema, seed=5)
    x = np.array([[1.0, 0.0, 1.0]])
    b = np.array([[1.0, 1.0, 1.0]])
    allowed = [um.um_chain_log_lik(m, x[0], b[0], p) for p in itertools.permutations(range(3))]
    got = um.um_log_lik(m, x, b, np.random.default_rng(6))[0]
    assert min(abs(got - a) for a in allowed) < 1e-12


# --- training masks and trained toy -----------------------------------------------------

def test_corrected_masks_cover_all_popcounts():
    # every popcount 0..D appears over one epoch of corrected masks
    x = np.zeros((2000, 4))
    sampler = make_sampler("all", 4)
    b = um.training_masks(sampler, x, TrainConfig(mask_correction=True), np.random.default_rng(7))
    assert set(b.sum(axis=1).astype(int)) == {0, 1, 2, 3, 4}
    raw = um.training_masks(sampler, x, TrainConfig(mask_correction=False), np.random.default_rng(7))
    assert set(raw.sum(axis=1).astype(int)) == {4}


@pytest.fixture(scope="module")
def toy():
    table = np.array([[0.1, 0.4], [0.3, 0.2]])
    ds = ex.table_dataset(table, 20_000, np.random.default_rng(8))
    cfg = ex.UM_TOY_CONFIG.replace(hidden=(32,), seed=1)
    return table, um.um_train(ds, "all", cfg)


def test_toy_conditionals_close_to_table(toy):
    table, ck = toy
    for b, obs in ex.all_queries(2):
        tv = ex.total_variation(ex.brute_force_conditional(table, b, obs), ex.um_conditional(ck.model, b, obs))
        assert tv < 0.05


def test_toy_chain_samples_match_joint(toy):
    # 10^5 chained samples of the full joint within TV 0.02 of the table
    table, ck = toy
    n = 100_000
    x = np.full((n, 2), np.nan)
    out = um.um_chain_sample(ck.model, x, np.ones((n, 2)), np.random.default_rng(9))
    emp = np.bincount((out[:, 0] * 2 + out[:, 1]).astype(int), minlength=4) / n
    assert ex.total_variation(emp, table.ravel()) < 0.02


def test_toy_permutation_invariance(toy):
    table, ck = toy
    x, b = np.array([1.0, 0.0]), np.ones(2)
    a, c = um.um_chain_log_lik(ck.model, x, b, [0, 1]), um.um_chain_log_lik(ck.model, x, b, [1, 0])
    # a converged desk-scale fit agrees to a few percent, not to machine precision
    assert abs(a - c) < 0.05
    assert a == pytest.approx(np.log(table[1, 0]), abs=0.05)


def test_training_is_seed_deterministic():
    table = np.array([[0.25, 0.25], [0.1, 0.4]])
    ds = ex.table_dataset(table, 600, np.random.default_rng(10))
    cfg = TrainConfig(epochs=2, hidden=(8,), seed=2)
    a, b = um.um_train(ds, "all", cfg), um.um_train(ds, "all", cfg)
    for p, q in zip(a.model.params["net"], b.model.params["net"]):
        np.testing.assert_array_equal(p, q)
    assert a.history == b.history
