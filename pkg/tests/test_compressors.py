import numpy as np
import pytest

from gdsec.compressors import (
    KIND_NONE,
    KIND_QUANTIZED,
    KIND_SPARSE,
    QuantizedVector,
    WorkerState,
    cgd_worker_round,
    dequantize,
    gdsec_worker_round,
    iag_selection_weights,
    quantize,
    state_recursion_closed_form,
    topj_worker_round,
)
from gdsec.core import HyperParams


def hp_with(xi, d, M=1, alpha=0.1, beta=0.5):
    return HyperParams.uniform(alpha, beta, xi, dim=d, n_workers=M, n_rounds=10)


def test_gdsec_zero_threshold_transmits_everything():
    state = WorkerState.fresh(3)
    grad = np.array([1.0, -2.0, 3.0])
    msg, state = gdsec_worker_round(
        state, grad, np.ones(3), np.zeros(3), hp_with(0.0, 3, beta=0.5)
    )
    assert msg.kind == KIND_SPARSE
    assert np.array_equal(msg.payload.densify(), grad)
    assert np.array_equal(state.e, np.zeros(3))
    assert np.array_equal(state.h, 0.5 * grad)


def test_gdsec_componentwise_suppression_example():
    # delta = [0.5, 3.0], per-component limit 1.0: only the second survives
    state = WorkerState.fresh(2)
    grad = np.array([0.5, 3.0])
    theta_k, theta_km1 = np.array([1.0, 1.0]), np.array([0.0, 0.0])
    hp = hp_with(1.0, 2, M=1, beta=0.5)
    msg, state = gdsec_worker_round(state, grad, theta_k, theta_km1, hp)
    assert msg.kind == KIND_SPARSE
    assert np.array_equal(msg.payload.idx, [1])
    assert np.array_equal(msg.payload.val, [3.0])
    assert np.array_equal(state.e, [0.5, 0.0])


def test_gdsec_full_suppression_sends_nothing():
    state = WorkerState.fresh(2)
    state.h = np.array([1.0, 1.0])
    grad = np.array([1.0001, 0.9999])
    hp = hp_with(10.0, 2)
    msg, state = gdsec_worker_round(state, grad, np.ones(2), np.zeros(2), hp)
    assert msg.kind == KIND_NONE
    assert np.array_equal(state.h, [1.0, 1.0])
    assert np.allclose(state.e, grad - np.array([1.0, 1.0]))


def test_gdsec_threshold_uses_worker_count():
    # same threshold vector, more workers -> smaller per-worker limit
    grad = np.array([0.3])
    hp1 = hp_with(1.0, 1, M=1)
    hp4 = hp_with(1.0, 1, M=4)
    msg1, _ = gdsec_worker_round(WorkerState.fresh(1), grad, np.ones(1), np.zeros(1), hp1)
    msg4, _ = gdsec_worker_round(WorkerState.fresh(1), grad, np.ones(1), np.zeros(1), hp4)
    assert msg1.kind == KIND_NONE  # |0.3| <= 1.0
    assert msg4.kind == KIND_SPARSE  # |0.3| > 0.25


@pytest.mark.parametrize("trial", range(25))
def test_gdsec_round_invariants(trial):
    rng = np.random.default_rng(trial)
    d = int(rng.integers(1, 20))
    state = WorkerState(h=rng.normal(size=d), e=rng.normal(size=d))
    h_old, e_old = state.h.copy(), state.e.copy()
    grad = rng.normal(size=d)
    theta_k, theta_km1 = rng.normal(size=d), rng.normal(size=d)
    hp = hp_with(float(rng.uniform(0, 3)), d, M=int(rng.integers(1, 5)), beta=float(rng.uniform(0.01, 1)))
    msg, state = gdsec_worker_round(state, grad, theta_k, theta_km1, hp)

    delta = grad - h_old + e_old
    limits = hp.xi / hp.n_workers * np.abs(theta_k - theta_km1)
    sent = np.zeros(d) if msg.kind == KIND_NONE else msg.payload.densify()
    # suppression correctness, both branches
    for i in range(d):
        if abs(delta[i]) <= limits[i]:
            assert sent[i] == 0.0
        else:
            assert sent[i] == delta[i]
    # state recursion: h <- h + beta * sent, e <- delta - sent (exact)
    assert np.array_equal(state.h, h_old + hp.beta * sent)
    assert np.array_equal(state.e, delta - sent)


def test_gdsec_without_error_correction_keeps_e_zero():
    state = WorkerState.fresh(2)
    grad = np.array([5.0, 0.001])
    hp = hp_with(1.0, 2)
    msg, state = gdsec_worker_round(
        state, grad, np.ones(2), np.zeros(2), hp, error_correction=False
    )
    assert msg.kind == KIND_SPARSE
    assert np.array_equal(state.e, np.zeros(2))


def test_gdsec_quantized_round_tracks_server_view():
    rng = np.random.default_rng(11)
    state = WorkerState.fresh(4)
    grad = rng.normal(size=4)
    hp = hp_with(0.0, 4, beta=0.25)
    msg, state = gdsec_worker_round(
        state, grad, np.ones(4), np.zeros(4), hp, quantize_s=8, rng=rng
    )
    assert msg.kind == KIND_QUANTIZED
    seen = dequantize(msg.payload)
    # the state mirrors what the server will apply, so the error memory
    # absorbs the quantization error as well
    assert np.allclose(state.h, 0.25 * seen)
    assert np.allclose(state.e, grad - seen)


def test_state_recursion_beta_one_returns_last_gradient():
    grads = [np.array([1.0, 2.0]), np.array([-3.0, 4.0])]
    out = state_recursion_closed_form(np.array([9.0, 9.0]), grads, beta=1.0)
    assert np.array_equal(out, grads[-1])


def test_state_recursion_empty_returns_initial():
    h1 = np.array([2.0, -1.0])
    assert np.array_equal(state_recursion_closed_form(h1, [], 0.3), h1)


def test_state_recursion_half_beta_example():
    out = state_recursion_closed_form(np.zeros(1), [np.array([1.0]), np.array([1.0])], 0.5)
    assert out == pytest.approx([0.75])


def test_state_recursion_matches_iterated_rounds():
    rng = np.random.default_rng(77)
    d, beta = 6, 0.37
    grads = [rng.normal(size=d) for _ in range(50)]
    state = WorkerState.fresh(d)
    hp = hp_with(0.0, d, beta=beta)
    theta = np.zeros(d)
    for g in grads:
        _, state = gdsec_worker_round(state, g, theta, theta, hp)
    closed = state_recursion_closed_form(np.zeros(d), grads, beta)
    assert np.allclose(state.h, closed, rtol=1e-12)


def test_topj_full_vector():
    state = WorkerState.fresh(3)
    grad = np.array([1.0, -2.0, 3.0])
    msg, state = topj_worker_round(state, grad, j=3)
    assert msg.payload.nnz == 3
    assert np.array_equal(state.ef_memory, np.zeros(3))


def test_topj_selects_largest_magnitude():
    state = WorkerState.fresh(3)
    msg, state = topj_worker_round(state, np.array([3.0, -5.0, 1.0]), j=1)
    # brute-force oracle: sort by |v| descending
    order = sorted(range(3), key=lambda i: (-abs([3.0, -5.0, 1.0][i]), i))
    assert list(msg.payload.idx) == [order[0]]
    assert np.array_equal(msg.payload.val, [-5.0])
    assert np.array_equal(state.ef_memory, [3.0, 0.0, 1.0])


def test_topj_tie_breaks_toward_lower_index():
    msg, _ = topj_worker_round(WorkerState.fresh(2), np.array([2.0, -2.0]), j=1)
    assert list(msg.payload.idx) == [0]
    assert np.array_equal(msg.payload.val, [2.0])


def test_topj_drops_zeros_and_reconstructs():
    rng = np.random.default_rng(4)
    state = WorkerState.fresh(6)
    state.ef_memory = rng.normal(size=6)
    grad = rng.normal(size=6)
    grad[2] = -state.ef_memory[2]  # force a zero in the working vector
    v = grad + state.ef_memory
    msg, state = topj_worker_round(state, grad, j=4)
    nnz_expected = min(4, int(np.count_nonzero(v)))
    assert msg.payload.nnz == nnz_expected
    assert np.allclose(msg.payload.densify() + state.ef_memory, v)


def test_topj_range_check():
    with pytest.raises(ValueError):
        topj_worker_round(WorkerState.fresh(3), np.zeros(3), j=0)
    with pytest.raises(ValueError):
        topj_worker_round(WorkerState.fresh(3), np.zeros(3), j=4)


def test_cgd_first_round_always_transmits():
    state = WorkerState.fresh(2)
    msg, state = cgd_worker_round(
        state, np.array([1.0, 2.0]), np.zeros(2), np.zeros(2), xi_tilde=100.0, n_workers=1
    )
    assert msg.kind == KIND_SPARSE
    assert np.array_equal(state.last_sent_grad, [1.0, 2.0])


def test_cgd_unchanged_gradient_is_censored():
    state = WorkerState.fresh(2)
    grad = np.array([1.0, 2.0])
    _, state = cgd_worker_round(state, grad, np.zeros(2), np.zeros(2), 1.0, 1)
    msg, state = cgd_worker_round(state, grad.copy(), np.ones(2), np.zeros(2), 1.0, 1)
    assert msg.kind == KIND_NONE
    assert np.array_equal(state.last_sent_grad, grad)


def test_cgd_norm_threshold_example():
    # ||grad - last|| = 5 against limit 4 -> transmit
    state = WorkerState.fresh(2)
    state.last_sent_grad = np.zeros(2)
    theta_k = np.array([2.0, 0.0])  # ||theta diff|| = 2, xi_tilde/M = 2 -> limit 4
    msg, state = cgd_worker_round(
        state, np.array([3.0, 4.0]), theta_k, np.zeros(2), xi_tilde=4.0, n_workers=2
    )
    assert msg.kind == KIND_SPARSE
    assert np.array_equal(state.last_sent_grad, [3.0, 4.0])


def test_quantize_zero_vector():
    q = quantize(np.zeros(4), s=8, rng=np.random.default_rng(0))
    assert q.norm == 0.0
    assert np.array_equal(q.levels, np.zeros(4, dtype=np.int64))
    assert np.array_equal(dequantize(q), np.zeros(4))


def test_quantize_exact_grid_is_deterministic():
    # |v_i|/||v|| in {3/5, 4/5} lands exactly on the s=5 grid
    v = np.array([3.0, -4.0])
    for seed in range(5):
        q = quantize(v, s=5, rng=np.random.default_rng(seed))
        assert np.array_equal(q.levels, [3, 4])
    assert np.allclose(dequantize(q), v)


def test_quantize_monte_carlo_unbiased():
    v = np.array([4.0, -3.0])
    s = 4
    # component 0: r = 4*4/5 = 3.2 -> lower level 3, round up with p = 0.2
    n = 20000
    rng = np.random.default_rng(123)
    total = np.zeros(2)
    for _ in range(n):
        total += dequantize(quantize(v, s, rng))
    mean = total / n
    se = 5.0 / s * np.sqrt(0.2 * 0.8 / n)
    assert abs(mean[0] - 4.0) < 4 * se


def test_quantize_levels_within_range():
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.normal(size=6)
        q = quantize(v, s=int(rng.integers(1, 10)), rng=rng)
        assert np.all(q.levels >= 0)
        assert np.all(q.levels <= q.s)


def test_dequantize_examples():
    q = QuantizedVector(5.0, np.array([1], dtype=np.int8), np.array([4]), 4)
    assert dequantize(q) == pytest.approx([5.0])
    q0 = QuantizedVector(2.0, np.array([1, -1], dtype=np.int8), np.array([0, 0]), 4)
    assert np.array_equal(dequantize(q0), [0.0, 0.0])


def test_dequantize_is_deterministic():
    rng = np.random.default_rng(6)
    q = quantize(rng.normal(size=5), 16, rng)
    assert np.array_equal(dequantize(q), dequantize(q))


def test_quantized_vector_validation():
    with pytest.raises(ValueError):
        QuantizedVector(1.0, np.array([1], dtype=np.int8), np.array([5]), 4)  # level > s
    with pytest.raises(ValueError):
        QuantizedVector(0.0, np.array([1], dtype=np.int8), np.array([1]), 4)  # zero norm
    with pytest.raises(ValueError):
        QuantizedVector(1.0, np.array([2], dtype=np.int8), np.array([1]), 4)  # bad sign


def test_iag_weights():
    assert np.allclose(iag_selection_weights([2.0, 2.0]), [0.5, 0.5])
    assert np.allclose(iag_selection_weights([1.0, 3.0]), [0.25, 0.75])
    rng = np.random.default_rng(10)
    w = iag_selection_weights(rng.uniform(0.1, 5.0, size=12))
    assert abs(w.sum() - 1.0) <= 1e-15
    with pytest.raises(ValueError):
        iag_selection_weights([1.0, 0.0])
