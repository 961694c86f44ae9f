import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spn
from oracles import all_assignments, marginal_from_table, spn_joint_table
from tpmembed.data import BinaryDataset, PartialEvidence
from tpmembed.learnspn import LearnSpnParams, learn_spn_b
from tpmembed.spn import (LeafNode, ProductNode, Spn, SpnScopeError, SpnStructureError, SumNode,
                          load_spn, parse_spn, spn_log_eval_batch, spn_log_marginal, validate_spn)


def test_single_leaf_valid():
    spn = Spn([LeafNode.bernoulli(0, 0.5)])
    assert validate_spn(spn).ok
    assert spn_log_marginal(spn, PartialEvidence((0,), (1,))) == pytest.approx(-0.693147, abs=1e-6)


def test_overlapping_product_is_reported():
    spn = Spn([LeafNode.bernoulli(0, 0.5), LeafNode.bernoulli(0, 0.3), ProductNode((0, 1))])
    report = validate_spn(spn)
    assert not report.ok
    assert [(v.node, v.prop) for v in report.violations] == [(2, "decomposability")]


def test_incomplete_sum_is_reported():
    spn = Spn([LeafNode.bernoulli(0, 0.5), LeafNode.bernoulli(1, 0.5),
               SumNode.from_weights((0, 1), (0.5, 0.5))])
    report = validate_spn(spn)
    assert (2, "completeness") in [(v.node, v.prop) for v in report.violations]


def test_unnormalized_weights_reported():
    spn = Spn([LeafNode.bernoulli(0, 0.5), LeafNode.bernoulli(0, 0.2),
               SumNode.from_weights((0, 1), (0.5, 0.6))])
    assert "sum_normalized" in [v.prop for v in validate_spn(spn).violations]


def test_children_after_parent_reported():
    spn = Spn([ProductNode((1, 2)), LeafNode.bernoulli(0, 0.5), LeafNode.bernoulli(1, 0.5)], root=0)
    assert "order" in [v.prop for v in validate_spn(spn).violations]


def test_invalid_spn_refuses_evaluation():
    spn = Spn([LeafNode.bernoulli(0, 0.5), LeafNode.bernoulli(0, 0.3), ProductNode((0, 1))])
    with pytest.raises(SpnStructureError):
        spn_log_marginal(spn, PartialEvidence())


def test_hand_built_marginal(hand_spn):
    # enumeration over X1: 0.3*0.2*(0.6+0.4) + 0.7*0.9*(0.1+0.9) = 0.69
    expected = math.log(0.69)
    got = spn_log_marginal(hand_spn, PartialEvidence((0,), (1,)))
    assert got == pytest.approx(expected, abs=1e-12)
    table = spn_joint_table(hand_spn)
    assert got == pytest.approx(marginal_from_table(table, 2, (0,), (1,)), abs=1e-12)


def test_empty_evidence_is_zero(hand_spn):
    assert spn_log_marginal(hand_spn, PartialEvidence()) == 0.0
    spn = random_spn(8, seed=1)
    assert abs(spn_log_marginal(spn, PartialEvidence())) < 1e-12


def test_out_of_range_evidence(hand_spn):
    with pytest.raises(SpnScopeError):
        spn_log_marginal(hand_spn, PartialEvidence((5,), (1,)))


def test_impossible_evidence_is_neg_inf():
    spn = Spn([LeafNode.bernoulli(0, 1.0), LeafNode.bernoulli(1, 0.5), ProductNode((0, 1))])
    assert validate_spn(spn).ok
    assert spn_log_marginal(spn, PartialEvidence((0,), (0,))) == -math.inf
    assert spn_log_marginal(spn, PartialEvidence((0, 1), (1, 1))) == pytest.approx(math.log(0.5))


def test_batch_empty_dataset(hand_spn):
    out = spn_log_eval_batch(hand_spn, BinaryDataset(np.zeros((0, 2))), [0, 1])
    assert out.shape == (0,)


def test_batch_full_scope_is_joint(hand_spn):
    X = all_assignments(2)
    got = spn_log_eval_batch(hand_spn, X, [0, 1])
    assert np.allclose(np.exp(got), spn_joint_table(hand_spn), atol=1e-14)


def test_batch_matches_brute_force_marginals():
    spn = random_spn(10, seed=4)
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, size=(50, 10)).astype(np.uint8)
    scope = sorted(rng.choice(10, size=4, replace=False).tolist())
    got = spn_log_eval_batch(spn, X, scope)
    table = spn_joint_table(spn)
    for i in range(50):
        ref = marginal_from_table(table, 10, scope, X[i, scope])
        assert abs(got[i] - ref) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_normalization_exhaustive(seed):
    spn = random_spn(12, seed=seed)
    X = all_assignments(12)
    total = np.exp(spn.log_joint(X)).sum()
    assert abs(total - 1.0) < 1e-6


def test_full_evidence_is_joint_bitwise():
    spn = random_spn(9, seed=2)
    rng = np.random.default_rng(1)
    X = rng.integers(0, 2, size=(20, 9)).astype(np.uint8)
    joint = spn.log_joint(X)
    for i in range(20):
        ev = PartialEvidence(tuple(range(9)), tuple(X[i]))
        assert spn_log_marginal(spn, ev) == joint[i]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), data=st.data())
def test_evidence_extension_is_monotone(seed, data):
    spn = random_spn(7, seed=seed)
    x = data.draw(st.lists(st.integers(0, 1), min_size=7, max_size=7))
    small = data.draw(st.sets(st.integers(0, 6)))
    extra = data.draw(st.sets(st.integers(0, 6)))
    big = small | extra
    lo = spn_log_marginal(spn, PartialEvidence.restrict(x, big))
    hi = spn_log_marginal(spn, PartialEvidence.restrict(x, small))
    assert lo <= hi + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), data=st.data())
def test_oracle_equivalence_random(seed, data):
    n = data.draw(st.integers(2, 9))
    spn = random_spn(n, seed=seed)
    table = spn_joint_table(spn)
    scope = sorted(data.draw(st.sets(st.integers(0, n - 1))))
    values = [data.draw(st.integers(0, 1)) for _ in scope]
    got = spn_log_marginal(spn, PartialEvidence(tuple(scope), tuple(values)))
    assert abs(got - marginal_from_table(table, n, scope, values)) < 1e-9


def test_one_visit_per_node():
    spn = random_spn(10, seed=5)
    X = np.ones((3, 10), dtype=np.uint8)
    visits = []
    spn.log_eval_batch(X, np.ones(10, dtype=bool), on_visit=visits.append)
    assert sorted(visits) == list(range(len(spn)))
    visits.clear()
    spn.log_eval_batch(X, [2, 3], on_visit=visits.append)
    assert len(visits) == len(set(visits)) <= len(spn)


def test_text_round_trip(tmp_path):
    spn = random_spn(8, seed=3)
    path = tmp_path / "m.spn"
    spn.save(path)
    back = load_spn(path)
    assert back.to_text() == spn.to_text()
    X = all_assignments(8)
    assert np.allclose(back.log_joint(X), spn.log_joint(X), atol=1e-12)


def test_parse_handwritten():
    text = """
    LEAF 10 0 0.2
    LEAF 11 1 0.6
    PRD 12 10 11
    LEAF 13 0 0.9
    LEAF 14 1 0.1
    PRD 15 13 14
    SUM 16 (12:0.3) (15:0.7)
    """
    spn = parse_spn(text)
    assert spn.log_marginal(PartialEvidence((0,), (1,))) == pytest.approx(math.log(0.69), abs=1e-12)


@pytest.mark.parametrize("text", [
    "LEAF 0 0 0.5\nLEAF 1 0 0.5\nPRD 2 0 1\n",       # not decomposable
    "LEAF 0 0 0.5\nSUM 1 (0:0.5)\n",                   # unnormalized
    "PRD 0 1 2\nLEAF 1 0 0.5\nLEAF 2 1 0.5\n",         # forward reference
    "",
])
def test_loader_rejects_invalid(text):
    with pytest.raises(SpnStructureError):
        parse_spn(text)


def test_learned_spns_validate_and_normalize():
    rng = np.random.default_rng(0)
    for seed in range(3):
        X = rng.integers(0, 2, size=(300, 11)).astype(np.uint8)
        X[:, 1] = X[:, 0]
        spn = learn_spn_b(X, LearnSpnParams(m_min_instances=30, seed=seed))
        assert validate_spn(spn).ok
        assert abs(np.exp(spn.log_joint(all_assignments(11))).sum() - 1) < 1e-6
