import numpy as np
import pytest

from spectwin.detector import (
    LayerKind,
    ModelWeights,
    NonLocalParams,
    VoteState,
    WeightEntry,
    bench_latency,
    conv1d,
    forward,
    load_weights,
    non_local_block,
    probs_to_bits,
    random_weights,
    save_weights,
    vote_step,
)
from spectwin.errors import (
    BatchSizeMismatch,
    FormatVersionMismatch,
    NonFiniteTensor,
    ShapeCompositionError,
    ShapeMismatch,
)


def conv_naive(x, kernel, bias, stride=1, padding="same"):
    """Triple-loop reference convolution on an (L, C) input."""
    k, c_in, f = kernel.shape
    if padding == "same":
        pad_lo, pad_hi = (k - 1) // 2, k // 2
    else:
        pad_lo = pad_hi = int(padding)
    xp = np.pad(x, ((pad_lo, pad_hi), (0, 0)))
    l_out = (xp.shape[0] - k) // stride + 1
    out = np.zeros((l_out, f))
    for l in range(l_out):
        for j in range(f):
            acc = 0.0
            for kk in range(k):
                for c in range(c_in):
                    acc += float(kernel[kk, c, j]) * float(xp[l * stride + kk, c])
            out[l, j] = acc + (float(bias[j]) if bias is not None else 0.0)
    return out


class TestConv1d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((64, 5)).astype(np.float32)
        kernel = np.eye(5, dtype=np.float32)[None]  # (1, 5, 5)
        out = conv1d(x, kernel, np.zeros(5, dtype=np.float32))
        assert np.allclose(out, x, atol=1e-6)

    def test_all_ones_kernel_constant_input(self):
        c = 0.7
        x = np.full((32, 1), c, dtype=np.float32)
        kernel = np.ones((3, 1, 1), dtype=np.float32)
        out = conv1d(x, kernel, np.zeros(1, dtype=np.float32))
        assert np.allclose(out[1:-1, 0], 3 * c, atol=1e-6)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        for k, c_in, f, stride, padding in [
            (1, 1, 1, 1, "same"), (3, 2, 4, 1, "same"), (5, 3, 2, 2, 0),
            (4, 2, 3, 1, 2), (3, 4, 4, 3, "same"),
        ]:
            x = rng.standard_normal((40, c_in)).astype(np.float32)
            kernel = rng.standard_normal((k, c_in, f)).astype(np.float32)
            bias = rng.standard_normal(f).astype(np.float32)
            mine = conv1d(x, kernel, bias, stride=stride, padding=padding)
            ref = conv_naive(x, kernel, bias, stride=stride, padding=padding)
            assert mine.shape == ref.shape
            assert np.abs(mine - ref).max() < 1e-5

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 20, 2)).astype(np.float32)
        kernel = rng.standard_normal((3, 2, 4)).astype(np.float32)
        bias = rng.standard_normal(4).astype(np.float32)
        batched = conv1d(x, kernel, bias)
        for i in range(3):
            assert np.allclose(batched[i], conv1d(x[i], kernel, bias), atol=1e-6)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeMismatch):
            conv1d(np.zeros((10, 3), np.float32), np.zeros((3, 2, 4), np.float32))


class TestNonLocalBlock:
    def test_zero_projection_is_identity(self):
        rng = np.random.default_rng(3)
        c, inner = 8, 4
        params = NonLocalParams(
            rng.standard_normal((c, inner)).astype(np.float32),
            rng.standard_normal(inner).astype(np.float32),
            rng.standard_normal((c, inner)).astype(np.float32),
            rng.standard_normal(inner).astype(np.float32),
            rng.standard_normal((c, inner)).astype(np.float32),
            rng.standard_normal(inner).astype(np.float32),
            np.zeros((inner, c), dtype=np.float32),
            np.zeros(c, dtype=np.float32),
        )
        x = rng.standard_normal((16, c)).astype(np.float32)
        assert np.array_equal(non_local_block(x, params), x)

    def test_hand_computed_toy_instance(self):
        # L=2, C=2, inner=1 with hand-set projections
        theta_w = np.array([[1.0], [0.0]], dtype=np.float32)
        phi_w = np.array([[0.0], [1.0]], dtype=np.float32)
        g_w = np.array([[1.0], [1.0]], dtype=np.float32)
        out_w = np.array([[1.0, 2.0]], dtype=np.float32)
        zeros1 = np.zeros(1, dtype=np.float32)
        params = NonLocalParams(theta_w, zeros1, phi_w, zeros1, g_w, zeros1,
                                out_w, np.zeros(2, dtype=np.float32))
        x = np.array([[1.0, 2.0], [3.0, -1.0]], dtype=np.float32)
        theta = x @ theta_w            # [[1], [3]]
        phi = x @ phi_w                # [[2], [-1]]
        g = x @ g_w                    # [[3], [2]]
        scores = theta @ phi.T / 1.0   # sqrt(inner)=1
        attn = np.exp(scores - scores.max(axis=1, keepdims=True))
        attn /= attn.sum(axis=1, keepdims=True)
        expected = x + (attn @ g) @ out_w
        got = non_local_block(x, params)
        assert np.abs(got - expected).max() < 1e-6

    def test_softmax_rows_sum_to_one(self):
        from spectwin.detector import _softmax

        rng = np.random.default_rng(4)
        rows = _softmax(rng.standard_normal((5, 7, 7)).astype(np.float32))
        assert np.allclose(rows.sum(axis=-1), 1.0, atol=1e-6)


class TestForward:
    def test_outputs_in_unit_interval(self):
        weights = random_weights(widths=(8, 16, 32, 32), hidden=32, seed=0)
        rng = np.random.default_rng(5)
        probs = forward(rng.standard_normal((7, 1024, 2)).astype(np.float32), weights)
        assert probs.shape == (7,)
        assert ((probs > 0) & (probs < 1)).all()

    def test_batch_permutation_equivariance(self):
        weights = random_weights(widths=(8, 16, 32, 32), hidden=32, seed=1)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((6, 1024, 2)).astype(np.float32)
        perm = rng.permutation(6)
        assert np.allclose(forward(x[perm], weights), forward(x, weights)[perm], atol=1e-6)

    def test_bad_shape_rejected(self):
        weights = random_weights(widths=(4, 8, 16, 16), hidden=8, seed=2)
        with pytest.raises(ShapeMismatch):
            forward(np.zeros((2, 512, 2), np.float32), weights)


class TestWeightsFormat:
    def test_roundtrip(self, tmp_path):
        weights = random_weights(widths=(4, 8, 16, 16), hidden=8, seed=3)
        path = tmp_path / "w.sptwnn"
        save_weights(weights, path)
        back = load_weights(path)
        assert len(back.entries) == len(weights.entries)
        for a, b in zip(weights.entries, back.entries):
            assert a.name == b.name and a.kind == b.kind
            assert np.array_equal(a.array, b.array)

    def test_truncated_tensor(self, tmp_path):
        weights = random_weights(widths=(4, 8, 16, 16), hidden=8, seed=4)
        path = tmp_path / "w.sptwnn"
        save_weights(weights, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 64])
        with pytest.raises(ShapeCompositionError):
            load_weights(path)

    def test_nan_tensor_rejected(self):
        weights = random_weights(widths=(4, 8, 16, 16), hidden=8, seed=5)
        entries = list(weights.entries)
        bad = entries[0].array.copy()
        bad[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteTensor):
            WeightEntry(entries[0].name, entries[0].kind, bad)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "w.sptwnn"
        path.write_bytes(b"NOTNN!" + b"\x00" * 16)
        with pytest.raises(FormatVersionMismatch):
            load_weights(path)

    def test_wrong_entry_order(self):
        weights = random_weights(widths=(4, 8, 16, 16), hidden=8, seed=6)
        entries = list(weights.entries)
        entries[0], entries[2] = entries[2], entries[0]
        with pytest.raises(ShapeCompositionError):
            ModelWeights(tuple(entries))

    def test_incompatible_dense_shape(self):
        weights = random_weights(widths=(4, 8, 16, 16), hidden=8, seed=7)
        entries = list(weights.entries)
        idx = next(i for i, e in enumerate(entries) if e.name == "fc1.w")
        entries[idx] = WeightEntry("fc1.w", LayerKind.DENSE,
                                   np.zeros((100, 8), dtype=np.float32))
        with pytest.raises(ShapeCompositionError):
            ModelWeights(tuple(entries))


class TestVote:
    def test_majority_strictly_greater(self):
        # oldest half zeros: the next all-ones batch evicts zeros and crosses 50
        state = VoteState(batch_size=10)
        verdict = None
        for _ in range(5):
            state, verdict = vote_step(state, [0] * 10)
        for _ in range(5):
            state, verdict = vote_step(state, [1] * 10)
        assert state.positives == 50
        assert verdict is not None and verdict.radar_present is False
        state, verdict = vote_step(state, [1] + [0] * 9)
        assert state.positives == 51 and verdict.radar_present is True

    def test_51_positives_fires(self):
        state = VoteState(batch_size=1)
        verdict = None
        bits = [1] * 51 + [0] * 49
        for bit in bits:
            state, verdict = vote_step(state, [bit])
        assert state.positives == 51
        assert verdict.radar_present is True

    def test_all_zero_ring(self):
        state = VoteState(batch_size=10)
        verdict = None
        for _ in range(10):
            state, verdict = vote_step(state, [0] * 10)
        assert verdict.radar_present is False and verdict.vote_fraction == 0.0

    def test_no_verdict_before_fill(self):
        state = VoteState(batch_size=10)
        for _ in range(9):
            state, verdict = vote_step(state, [1] * 10)
            assert verdict is None
        state, verdict = vote_step(state, [1] * 10)
        assert verdict is not None

    def test_batch_size_mismatch(self):
        with pytest.raises(BatchSizeMismatch):
            vote_step(VoteState(batch_size=10), [1] * 5)

    def test_probs_to_bits_threshold(self):
        bits = probs_to_bits([0.49, 0.5, 0.51])
        assert bits.tolist() == [0, 1, 1]

    def test_matches_independent_window_model(self):
        # 10^4-step random replay against a brute-force sliding window
        rng = np.random.default_rng(7)
        state = VoteState(batch_size=10)
        window: list[int] = []
        filled = False
        for _ in range(1000):
            batch = rng.integers(0, 2, 10).tolist()
            state, verdict = vote_step(state, batch)
            window.extend(batch)
            window = window[-100:]
            filled = filled or len(window) == 100
            if filled:
                assert verdict is not None
                assert verdict.radar_present == (sum(window) > 50)
                assert verdict.vote_fraction == sum(window) / 100
            else:
                assert verdict is None


class TestBench:
    def test_monotone_and_reported(self):
        weights = random_weights(widths=(4, 8, 16, 16), hidden=8, seed=8)
        results = bench_latency(weights, batch_sizes=(1, 16), trials=10, seed=0)
        assert results[1]["mean_s"] <= results[16]["mean_s"]
        assert set(results[1]) == {"mean_s", "std_s", "cv"}
