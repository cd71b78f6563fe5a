import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from oracles import scalar_sigmoid_loss, weighted_bce
from ecgsiglip.encoders import ContrastiveHead, EmbeddingBatch, normalize_and_pair
from ecgsiglip.loss import (
    TargetMatrix,
    build_target_matrix,
    class_weights,
    jaccard_similarity,
    sigmoid_contrastive_loss,
    weighted_bce_loss,
)

label_sets = st.lists(st.frozensets(st.integers(0, 25), min_size=1, max_size=6), min_size=1, max_size=10)


def _batch(zimg, ztxt, t_prime=0.0, b=0.0, grad=False):
    f = lambda a: torch.tensor(a, dtype=torch.float64, requires_grad=grad)
    return EmbeddingBatch(f(zimg), f(ztxt), f(t_prime), f(b))


def test_jaccard_similarity_examples():
    assert jaccard_similarity({1}, {1}) == 1.0
    assert jaccard_similarity({1, 2}, {2, 3}) == pytest.approx(1 / 3, abs=0)
    assert jaccard_similarity({1}, {2}) == 0.0
    assert jaccard_similarity(set(), set()) == 1.0


def test_worked_target_matrix():
    a, b, c = 0, 1, 2
    tm = build_target_matrix([{a, b}, {b, c}, {a, b}], "jaccard")
    third = 1 / 3
    assert tm.values.tolist() == [[1, third, 1], [third, 1, third], [1, third, 1]]


def test_standard_targets_are_identity():
    tm = build_target_matrix([{0}, {0}, {3, 4}], "standard")
    assert np.array_equal(tm.values, np.eye(3))


def test_disjoint_sets_give_identity():
    tm = build_target_matrix([{0, 1}, {2}, {5, 9}], "jaccard")
    assert np.array_equal(tm.values, np.eye(3))


@given(label_sets)
def test_jaccard_target_invariants(sets):
    v = build_target_matrix(sets, "jaccard").values
    assert np.array_equal(v, v.T)
    assert np.all(np.diag(v) == 1.0)
    assert v.min() >= 0.0 and v.max() <= 1.0
    for i in range(len(sets)):
        for j in range(len(sets)):
            assert v[i, j] == jaccard_similarity(sets[i], sets[j])


def test_unknown_mode_and_empty():
    with pytest.raises(ValueError):
        build_target_matrix([{1}], "softmax")
    with pytest.raises(ValueError):
        build_target_matrix([], "jaccard")


def test_single_pair_closed_form():
    loss = sigmoid_contrastive_loss(_batch([[1.0, 0.0]], [[0.0, 1.0]]), TargetMatrix(np.eye(1), "standard"))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)


def test_two_by_two_worked_value():
    eye = [[1.0, 0.0], [0.0, 1.0]]
    loss = sigmoid_contrastive_loss(_batch(eye, eye), build_target_matrix([{0}, {1}], "standard"))
    ref = scalar_sigmoid_loss(eye, eye, 0.0, 0.0, np.eye(2))
    assert ref == pytest.approx(1.006409, abs=1e-6)
    assert loss.item() == pytest.approx(ref, abs=1e-14)


def test_half_target_is_logit_neutral():
    targets = TargetMatrix(np.array([[1.0, 0.5], [0.5, 1.0]]), "jaccard")
    z = [[1.0, 0.0], [0.0, 1.0]]
    lo = sigmoid_contrastive_loss(_batch(z, z, 0.0, 0.0), targets).item()
    hi = sigmoid_contrastive_loss(_batch(z, z, 0.0, 3.0), targets).item()
    # only the diagonal terms move with the bias; off-diagonal stay at log 2 each
    diag = lambda b: 2 * math.log1p(math.exp(-(1.0 + b)))
    assert lo - diag(0.0) / 2 == pytest.approx(math.log(2), abs=1e-12)
    assert hi - diag(3.0) / 2 == pytest.approx(math.log(2), abs=1e-12)


def test_matches_scalar_reference_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        zi = rng.standard_normal((n, 4))
        zt = rng.standard_normal((n, 4))
        zi /= np.linalg.norm(zi, axis=1, keepdims=True)
        zt /= np.linalg.norm(zt, axis=1, keepdims=True)
        sets = [frozenset(rng.choice(6, size=rng.integers(1, 4), replace=False).tolist()) for _ in range(n)]
        tm = build_target_matrix(sets, "jaccard")
        tp, b = float(rng.normal(1, 1)), float(rng.normal(-3, 2))
        got = sigmoid_contrastive_loss(_batch(zi, zt, tp, b), tm).item()
        assert got == pytest.approx(scalar_sigmoid_loss(zi.tolist(), zt.tolist(), tp, b, tm.values), rel=1e-12)


def test_large_logits_do_not_overflow():
    z = [[1.0, 0.0], [0.0, 1.0]]
    batch = _batch(z, z, t_prime=8.0, b=-10.0, grad=True)
    loss = sigmoid_contrastive_loss(batch, build_target_matrix([{0}, {1}], "standard"))
    loss.backward()
    assert torch.isfinite(loss)
    for t in (batch.zimg, batch.ztxt, batch.t_prime, batch.b):
        assert torch.all(torch.isfinite(t.grad))


def test_size_mismatch():
    z = [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(ValueError):
        sigmoid_contrastive_loss(_batch(z, z), TargetMatrix(np.eye(3), "standard"))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    h = 1e-5
    for n in range(1, 6):
        zi = rng.standard_normal((n, 3))
        zt = rng.standard_normal((n, 3))
        tm = build_target_matrix([frozenset({int(x) for x in rng.choice(4, 2)}) for _ in range(n)], "jaccard")
        params = [zi, zt, np.array(0.7), np.array(-1.5)]
        tens = [torch.tensor(p, dtype=torch.float64, requires_grad=True) for p in params]
        sigmoid_contrastive_loss(EmbeddingBatch(*tens), tm).backward()

        def f(vals):
            with torch.no_grad():
                return sigmoid_contrastive_loss(EmbeddingBatch(*[torch.tensor(v) for v in vals]), tm).item()

        for k, p in enumerate(params):
            num = np.zeros_like(p, dtype=np.float64)
            for idx in np.ndindex(p.shape):
                up = [q.copy() for q in params]
                dn = [q.copy() for q in params]
                up[k][idx] += h
                dn[k][idx] -= h
                num[idx] = (f(up) - f(dn)) / (2 * h)
            ana = tens[k].grad.numpy()
            err = np.abs(ana - num).max() / max(np.abs(num).max(), 1e-12)
            assert err < 1e-6, (n, k, err)


def test_monotone_in_logits():
    tm = build_target_matrix([{0}, {1}, {2}], "standard")
    base = np.eye(3)

    def loss_with(logits):
        # unit rows giving cos = logits when t=1, b=0: use ztxt = I and zimg rows = logits
        return -torch.nn.functional.logsigmoid((2 * torch.tensor(tm.values) - 1) * torch.tensor(logits)).sum() / 3

    lo = base * 0.3
    up_diag = lo.copy()
    up_diag[1, 1] += 0.1
    up_off = lo.copy()
    up_off[0, 2] += 0.1
    assert loss_with(up_diag) < loss_with(lo) < loss_with(up_off)
    # and through the real loss: pushing a matched pair closer lowers it
    h = ContrastiveHead(0.0, 0.0)
    a = normalize_and_pair(torch.tensor([[1.0, 0.2], [0.2, 1.0]]), torch.eye(2), h)
    b = normalize_and_pair(torch.tensor([[1.0, 0.1], [0.1, 1.0]]), torch.eye(2), h)
    tm2 = build_target_matrix([{0}, {1}], "standard")
    assert sigmoid_contrastive_loss(b, tm2) < sigmoid_contrastive_loss(a, tm2)


def test_disjoint_batches_modes_agree():
    rng = np.random.default_rng(5)
    for _ in range(25):
        n = int(rng.integers(1, 9))
        perm = rng.permutation(26)
        sets = [frozenset({int(perm[i])}) for i in range(n)]
        zi, zt = rng.standard_normal((n, 8)), rng.standard_normal((n, 8))
        batch = normalize_and_pair(torch.tensor(zi), torch.tensor(zt), ContrastiveHead())
        a = sigmoid_contrastive_loss(batch, build_target_matrix(sets, "standard")).item()
        b = sigmoid_contrastive_loss(batch, build_target_matrix(sets, "jaccard")).item()
        assert abs(a - b) <= 1e-9


# ---------------------------------------------------------------- weighted BCE


def test_bce_unit_cells():
    z = torch.zeros(1, 26, dtype=torch.float64)
    y = np.ones((1, 26))
    assert weighted_bce_loss(z, y, np.ones(26)).item() == pytest.approx(math.log(2), abs=1e-15)
    w = np.ones(26)
    w[4] = 3.0
    per_cell = weighted_bce_loss(z, y, w).item() * 26
    assert per_cell == pytest.approx(25 * math.log(2) + 3 * math.log(2), abs=1e-12)


def test_bce_matches_loop_oracle():
    rng = np.random.default_rng(0)
    z = rng.normal(0, 2, (4, 26))
    y = (rng.random((4, 26)) < 0.3).astype(np.float64)
    w = rng.uniform(0.5, 5, 26)
    got = weighted_bce_loss(torch.tensor(z), y, w).item()
    assert got == pytest.approx(weighted_bce(z.tolist(), y.tolist(), w.tolist()), abs=1e-10)


def test_bce_rejects_bad_input():
    z = torch.zeros(2, 26, dtype=torch.float64)
    with pytest.raises(ValueError):
        weighted_bce_loss(z, np.zeros((2, 25)), np.ones(26))
    bad = z.clone()
    bad[0, 0] = float("nan")
    with pytest.raises(ValueError):
        weighted_bce_loss(bad, np.zeros((2, 26)), np.ones(26))
    with pytest.raises(ValueError):
        weighted_bce_loss(z, np.zeros((2, 26)), np.zeros(26))


def test_class_weights_clip():
    y = np.zeros((100, 26), dtype=np.uint8)
    y[:50, 0] = 1  # 100/(2*50) = 1
    y[:1, 1] = 1  # 100/2 = 50
    y[:, 2] = 1  # 0.5
    y[:10, 3] = 1  # 5
    w = class_weights(y)
    assert w[0] == 1.0 and w[1] == 50.0 and w[2] == 0.5 and w[3] == 5.0
    assert w[4] == 50.0  # no positives: clipped at the cap


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_loss_nonnegative_and_finite(n, seed):
    rng = np.random.default_rng(seed)
    batch = normalize_and_pair(torch.tensor(rng.standard_normal((n, 5))),
                               torch.tensor(rng.standard_normal((n, 5))), ContrastiveHead())
    sets = [frozenset({int(rng.integers(26))}) for _ in range(n)]
    v = sigmoid_contrastive_loss(batch, build_target_matrix(sets, "jaccard")).item()
    assert np.isfinite(v) and v >= 0
