import math
import struct

import numpy as np
import pytest

from fpliveness.classifier import (
    BN_EPS,
    MAGIC,
    CnnConfig,
    ModelFormatError,
    TrainConfig,
    TrainingDivergedError,
    baseline_classify,
    forward,
    gradient_check,
    init_model,
    load_model,
    model_checksum,
    prepare_batch,
    save_model,
    train,
)
from fpliveness.synthetic import stripe_patches

TINY = CnnConfig(input_side=8, block_filters=(2,), block_dropout=(0.2,))
TOY = CnnConfig(input_side=24, block_filters=(8, 16), block_dropout=(0.2, 0.3))


def random_patches(rng, n, side):
    return [rng.integers(0, 256, (side, side), dtype=np.uint8) for _ in range(n)]


class TestInit:
    def test_deterministic(self):
        assert model_checksum(init_model(TOY, 3)) == model_checksum(init_model(TOY, 3))

    def test_seed_sensitive(self):
        assert model_checksum(init_model(TOY, 3)) != model_checksum(init_model(TOY, 4))

    def test_default_dense_dimension(self):
        cfg = CnnConfig()
        assert cfg.final_side == 5 and cfg.dense_inputs == 12800

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            CnnConfig(input_side=12)
        with pytest.raises(ValueError):
            CnnConfig(block_filters=(4, 8), block_dropout=(0.1,))
        with pytest.raises(ValueError):
            CnnConfig(block_dropout=(1.0, 0.1, 0.1, 0.1))


class TestForward:
    def test_softmax_normalized(self, rng):
        model = init_model(TOY, 0)
        for s in forward(model, random_patches(rng, 6, 24)):
            assert s.live >= 0 and s.spoof >= 0
            assert abs(s.live + s.spoof - 1) < 1e-6

    def test_duplicates_score_identically(self, rng):
        model = init_model(TOY, 1)
        p = random_patches(rng, 3, 24)
        scores = forward(model, [p[0], p[1], p[0], p[2]])
        assert scores[0] == scores[2]

    def test_infer_is_deterministic(self, rng):
        model = init_model(TOY, 2)
        p = random_patches(rng, 4, 24)
        assert forward(model, p) == forward(model, p)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            forward(init_model(TOY, 0), random_patches(rng, 1, 23))
        with pytest.raises(ValueError):
            forward(init_model(TOY, 0), [])

    def test_hand_trace(self):
        cfg = CnnConfig(input_side=6, block_filters=(1,), block_dropout=(0.0,))
        model = init_model(cfg, 0)
        kern = np.arange(1, 10, dtype=np.float32).reshape(3, 3) / 10 - 0.45
        b = model.blocks[0]
        b.kernel[:, :, 0, 0] = kern
        b.bias[:] = 0.05
        b.gamma[:] = 1.5
        b.beta[:] = -0.1
        b.running_mean[:] = 0.2
        b.running_var[:] = 0.5
        model.dense_w[:] = np.linspace(-1, 1, 18, dtype=np.float32).reshape(9, 2)
        model.dense_b[:] = (0.3, -0.2)

        v = 200 / 255
        padded = np.zeros((8, 8))
        padded[1:7, 1:7] = v
        conv = np.zeros((6, 6))
        for y in range(6):
            for x in range(6):
                conv[y, x] = sum(
                    padded[y + i, x + j] * float(kern[i, j]) for i in range(3) for j in range(3)
                ) + 0.05
        act = np.maximum(conv, 0)
        bn = 1.5 * (act - 0.2) / math.sqrt(0.5 + BN_EPS) - 0.1
        pooled = [max(bn[2 * r + a, 2 * c + d] for a in (0, 1) for d in (0, 1)) for r in range(3) for c in range(3)]
        w = model.dense_w.astype(np.float64)
        logits = [sum(pooled[i] * w[i, k] for i in range(9)) + float(model.dense_b[k]) for k in (0, 1)]
        e = [math.exp(z - max(logits)) for z in logits]
        expected_live = e[0] / sum(e)

        score = forward(model, [np.full((6, 6), 200, np.uint8)])[0]
        assert abs(score.live - expected_live) < 1e-5

    def test_train_mode_uses_dropout(self, rng):
        model = init_model(TOY, 0)
        p = random_patches(rng, 4, 24)
        a = forward(model, p, mode="train", rng=np.random.default_rng(0))
        b = forward(model, p, mode="train", rng=np.random.default_rng(1))
        assert a != b
        with pytest.raises(ValueError):
            forward(model, p, mode="eval")


class TestGradientCheck:
    def test_infer_mode(self, rng):
        model = init_model(TINY, 5)
        x = random_patches(rng, 1, 8)
        assert gradient_check(model, x, [1]) < 1e-4

    def test_batch_statistics_small_step(self, rng):
        # kinks in ReLU/max-pool make the 1e-3 step unreliable with batch statistics
        model = init_model(TINY, 6)
        x = random_patches(rng, 3, 8)
        assert gradient_check(model, x, [0, 1, 0], step=1e-6, batch_stats=True) < 1e-4

    def test_zero_step_rejected(self, rng):
        with pytest.raises(ValueError):
            gradient_check(init_model(TINY, 0), random_patches(rng, 1, 8), [0], step=0.0)


class TestTrain:
    def test_loss_decreases_and_learns(self):
        x, y = stripe_patches(60, 24, seed=0)
        model = init_model(TOY, 0)
        _, hist = train(model, x, y, TrainConfig(epochs=4, batch_size=16, seed=0))
        assert len(hist) == 4
        assert hist[-1].loss < hist[0].loss
        assert hist[-1].accuracy >= 0.9

    def test_deterministic(self):
        x, y = stripe_patches(20, 24, seed=1)
        cfg = TrainConfig(epochs=2, batch_size=8, seed=3)
        a, _ = train(init_model(TOY, 0), x, y, cfg)
        b, _ = train(init_model(TOY, 0), x, y, cfg)
        assert model_checksum(a) == model_checksum(b)

    def test_input_model_untouched(self):
        x, y = stripe_patches(8, 24, seed=1)
        model = init_model(TOY, 0)
        before = model_checksum(model)
        train(model, x, y, TrainConfig(epochs=1, batch_size=8))
        assert model_checksum(model) == before

    def test_zero_learning_rate(self):
        x, y = stripe_patches(10, 24, seed=2)
        model = init_model(TOY, 0)
        out, _ = train(model, x, y, TrainConfig(epochs=2, batch_size=8, learning_rate=0.0))
        for (name, a), (_, b) in zip(model.named_tensors(True), out.named_tensors(True)):
            assert np.array_equal(a, b), name

    def test_needs_both_classes(self):
        x, _ = stripe_patches(4, 24, seed=0)
        with pytest.raises(ValueError):
            train(init_model(TOY, 0), x, np.zeros(8, int), TrainConfig(epochs=1))

    def test_divergence_reported(self):
        x = np.full((4, 24, 24, 1), np.nan, np.float32)
        with pytest.raises(TrainingDivergedError):
            train(init_model(TOY, 0), x, [0, 1, 0, 1], TrainConfig(epochs=1))

    def test_prepare_batch_scaling(self):
        x = prepare_batch([np.full((4, 4), 255, np.uint8)], 4)
        assert x.shape == (1, 4, 4, 1) and x.max() == 1.0


class TestPersistence:
    def test_round_trip(self, tmp_path):
        model = init_model(TOY, 9)
        save_model(model, tmp_path / "m.bin")
        back = load_model(tmp_path / "m.bin")
        assert back.config == TOY
        assert model_checksum(back) == model_checksum(model)

    def test_truncated(self, tmp_path):
        p = tmp_path / "m.bin"
        save_model(init_model(TOY, 0), p)
        p.write_bytes(p.read_bytes()[:-7])
        with pytest.raises(ModelFormatError, match="corrupt file"):
            load_model(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.bin"
        p.write_bytes(b"nonsense" * 4)
        with pytest.raises(ModelFormatError, match="corrupt file"):
            load_model(p)

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "m.bin"
        save_model(init_model(TOY, 0), p)
        data = bytearray(p.read_bytes())
        (ver,) = struct.unpack_from("<H", data, len(MAGIC))
        struct.pack_into("<H", data, len(MAGIC), ver + 1)
        p.write_bytes(bytes(data))
        with pytest.raises(ModelFormatError, match="version mismatch"):
            load_model(p)


class TestBaseline:
    def test_midpoint(self):
        assert baseline_classify(np.full((4, 4), 128), 128).live == 0.5

    def test_saturation(self):
        assert baseline_classify(np.zeros((4, 4)), 200).live > 0.99999
        assert baseline_classify(np.full((4, 4), 255), 20).live < 1e-5

    def test_sums_to_one(self):
        s = baseline_classify(np.full((3, 3), 90), 128)
        assert abs(s.live + s.spoof - 1) < 1e-12
        assert math.isclose(s.live, 1 / (1 + math.exp(-(128 - 90) / 16)))
