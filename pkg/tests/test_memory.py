import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tempura.autodiff import ContractError, Tensor, backward, finite_diff_check, ops
from tempura.memory import (
    MemoryAccumulator,
    MemoryBank,
    MemoryDiffusion,
    compute_memory_bank,
    mdu_schedule,
    memory_attend,
    memory_diffuse,
)


def np_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def bank_of(protos, counts=None):
    protos = np.asarray(protos, dtype=np.float64)
    counts = np.ones(len(protos), dtype=np.int64) if counts is None else np.asarray(counts)
    return MemoryBank(protos, counts, epoch=2)


def test_single_contributor_is_prototype():
    x = np.array([[1.0, -2.0, 0.5]])
    bank = compute_memory_bank(lambda v: (x, [[1]]), [None], 3, 3, epoch=2)
    np.testing.assert_array_equal(bank.prototypes[1], x[0])
    assert bank.counts.tolist() == [0, 1, 0]
    np.testing.assert_array_equal(bank.prototypes[[0, 2]], 0.0)


def test_opposite_contributors_cancel():
    x = np.array([[1.5, -2.0], [-1.5, 2.0]])
    bank = compute_memory_bank(lambda v: (x, [[0], [0]]), [None], 1, 2, epoch=3)
    np.testing.assert_array_equal(bank.prototypes[0], [0.0, 0.0])


def test_epoch_one_has_no_bank():
    with pytest.raises(ContractError):
        compute_memory_bank(lambda v: (np.zeros((0, 2)), []), [], 2, 2, epoch=1)


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_bank_matches_brute_force_mean(n_videos, seed):
    r = np.random.default_rng(seed)
    videos = []
    for _ in range(n_videos):
        n = int(r.integers(1, 5))
        labels = [sorted(set(r.integers(0, 4, int(r.integers(1, 3))).tolist())) for _ in range(n)]
        videos.append((r.standard_normal((n, 3)), labels))
    bank = compute_memory_bank(lambda v: v, videos, 4, 3, epoch=2)
    for p in range(4):
        members = [e for emb, labs in videos for e, lab in zip(emb, labs) if p in lab]
        assert bank.counts[p] == len(members)
        if members:
            np.testing.assert_allclose(bank.prototypes[p], np.mean(members, axis=0), rtol=1e-12, atol=1e-15)
        else:
            assert not bank.valid[p] and np.all(bank.prototypes[p] == 0)


def test_multi_label_pair_feeds_both_centroids():
    acc = MemoryAccumulator(3, 2)
    acc.add(np.array([[2.0, 4.0], [0.0, 2.0]]), [[0, 2], [2]])
    bank = acc.bank(2)
    np.testing.assert_array_equal(bank.prototypes[0], [2.0, 4.0])
    np.testing.assert_array_equal(bank.prototypes[2], [1.0, 3.0])


def test_bank_dump_round_trip(tmp_path):
    bank = bank_of([[1.0, 2.0], [0.0, 0.0]], [3, 0])
    bank.dump(tmp_path / "b.jsonl")
    back = MemoryBank.load(tmp_path / "b.jsonl")
    np.testing.assert_array_equal(back.prototypes, bank.prototypes)
    np.testing.assert_array_equal(back.counts, bank.counts)
    assert back.epoch == 2


def test_lambda_one_is_identity(rng):
    mdu = MemoryDiffusion(rng, 4, lam=1.0)
    r = Tensor(rng.standard_normal((3, 4)))
    assert memory_diffuse(r, bank_of(rng.standard_normal((2, 4))), mdu).data is r.data


@given(st.integers(0, 2**32 - 1))
def test_lambda_one_identity_property(seed):
    r = np.random.default_rng(seed)
    mdu = MemoryDiffusion(r, 5, lam=1.0)
    x = r.standard_normal((4, 5))
    out = memory_diffuse(Tensor(x), bank_of(r.standard_normal((3, 5))), mdu).data
    np.testing.assert_allclose(out, x, rtol=0, atol=1e-12)


def test_lambda_range():
    for lam in (0.0, -0.1, 1.5):
        with pytest.raises(ContractError):
            MemoryDiffusion(np.random.default_rng(0), 2, lam)


def test_single_prototype_closed_form(rng):
    mdu = MemoryDiffusion(rng, 4, lam=0.3)
    omega = rng.standard_normal(4)
    bank = bank_of(np.stack([rng.standard_normal(4), omega, rng.standard_normal(4)]), [0, 5, 0])
    r = rng.standard_normal((2, 4))
    out = memory_diffuse(Tensor(r), bank, mdu).data
    np.testing.assert_allclose(out, 0.3 * r + 0.7 * (omega @ mdu.w_v.data), rtol=1e-13)


def test_three_prototypes_match_two_step_oracle(rng):
    mdu = MemoryDiffusion(rng, 4, lam=0.5)
    omega = rng.standard_normal((3, 4))
    r = rng.standard_normal((5, 4))
    q, k, v = r @ mdu.w_q.data, omega @ mdu.w_k.data, omega @ mdu.w_v.data
    r_mem = np_softmax(q @ k.T / 2.0) @ v
    out = memory_diffuse(Tensor(r), bank_of(omega), mdu).data
    np.testing.assert_allclose(out, 0.5 * r + 0.5 * r_mem, rtol=1e-12)


def test_empty_bank_raises(rng):
    mdu = MemoryDiffusion(rng, 2, lam=0.5)
    with pytest.raises(ContractError):
        memory_diffuse(Tensor(np.ones((1, 2))), bank_of(np.zeros((2, 2)), [0, 0]), mdu)


def test_gradient_split(rng):
    lam = 0.4
    mdu = MemoryDiffusion(rng, 3, lam=lam)
    bank = bank_of(rng.standard_normal((2, 3)))
    r = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    w = rng.standard_normal((2, 3))
    backward(ops.sum(ops.mul(memory_diffuse(r, bank, mdu), w)))
    total = r.grad.copy()
    r.grad = None
    backward(ops.sum(ops.mul(memory_attend(r, bank, mdu), w)))
    np.testing.assert_allclose(total, lam * w + (1 - lam) * r.grad, rtol=1e-12, atol=1e-14)
    r.grad = None
    f = lambda: ops.sum(ops.mul(memory_diffuse(r, bank, mdu), w))
    assert finite_diff_check(f, [r] + mdu.parameters()) < 1e-6


def test_schedule():
    assert mdu_schedule(1) == "bypass"
    assert mdu_schedule(2) == "diffuse" and mdu_schedule(9) == "diffuse"
    assert mdu_schedule(5, training=False) == "bypass"
    with pytest.raises(ContractError):
        mdu_schedule(0)
