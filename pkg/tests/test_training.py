import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmixer import engine as E
from vmixer.engine import ShapeError, Tensor, finite_diff_gradcheck
from vmixer.model import ModelConfig, build_model
from vmixer.training import (
    DeepSupervisionConfig,
    LrSchedule,
    OptimizerState,
    PlacementError,
    TrainHistory,
    TrainingDiverged,
    clip_grad_norm,
    cross_entropy_loss,
    deep_supervision_loss,
    downsample_labels,
    ellipsoid_mask,
    one_hot,
    poly_lr,
    segmentation_loss,
    sgd_step,
    soft_dice_loss,
    synth_dataset,
    train,
)

MICRO = dict(base_channels=8, training_volume_dims=(32, 32, 16))


class TestPolyLr:
    def test_endpoints(self):
        s = LrSchedule()
        assert poly_lr(s, 0) == 0.01
        assert poly_lr(s, 1000) == 0.0

    def test_quarter(self):
        assert abs(poly_lr(LrSchedule(), 250) - 0.0077189) < 1e-6
        assert poly_lr(LrSchedule(), 250) == pytest.approx(0.01 * 0.75**0.9, rel=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            poly_lr(LrSchedule(), 1001)
        with pytest.raises(ValueError):
            poly_lr(LrSchedule(), -1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 999), st.floats(1e-4, 1.0))
    def test_monotone(self, e, lr0):
        s = LrSchedule(initial_lr=lr0)
        assert poly_lr(s, e + 1) <= poly_lr(s, e)


class TestDice:
    def test_perfect_prediction(self, rng):
        labels = rng.integers(0, 3, size=(1, 4, 4, 2))
        logits = Tensor(one_hot(labels, 3) * 40.0 - 20.0)
        assert soft_dice_loss(logits, labels).item() < 1e-3

    def test_uniform_two_class(self):
        labels = np.zeros((1, 2, 2, 2), dtype=np.int64)
        labels[0, 0] = 1
        loss = soft_dice_loss(Tensor(np.zeros((1, 2, 2, 2, 2))), labels).item()
        assert loss == pytest.approx(0.5, abs=1e-5)

    def test_gradcheck(self, rng):
        with E.default_dtype(np.float64):
            z = Tensor(rng.normal(size=(1, 2, 2, 2, 2)), requires_grad=True)
            y = rng.integers(0, 2, size=(1, 2, 2, 2))
            assert finite_diff_gradcheck(lambda: soft_dice_loss(z, y), [z]) < 1e-3


class TestCrossEntropy:
    def test_uniform(self):
        labels = np.zeros((1, 2, 2, 1), dtype=np.int64)
        assert cross_entropy_loss(Tensor(np.zeros((1, 4, 2, 2, 1))), labels).item() == pytest.approx(np.log(4), abs=1e-6)

    def test_perfect(self, rng):
        labels = rng.integers(0, 3, size=(1, 3, 3, 1))
        logits = Tensor(one_hot(labels, 3) * 100.0 - 50.0)
        assert cross_entropy_loss(logits, labels).item() < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(Tensor(np.zeros((1, 2, 2, 2, 2))), np.full((1, 2, 2, 2), 2))

    def test_gradcheck(self, rng):
        with E.default_dtype(np.float64):
            z = Tensor(rng.normal(size=(1, 3, 2, 2, 2)), requires_grad=True)
            y = rng.integers(0, 3, size=(1, 2, 2, 2))
            assert finite_diff_gradcheck(lambda: cross_entropy_loss(z, y), [z]) < 1e-4


def outputs_of(rng, B=1, K=3, dims=(8, 8, 4)):
    H, W, D = dims
    return {
        "logits": Tensor(rng.normal(size=(B, K, H, W, D))),
        "aux": [Tensor(rng.normal(size=(B, K, H // 4, W // 4, D // 2))), Tensor(rng.normal(size=(B, K, H // 8, W // 8, D // 4)))],
    }


class TestDeepSupervision:
    def test_alphas(self):
        a = DeepSupervisionConfig().alphas
        assert all(abs(x - y) < 1e-9 for x, y in zip(a, (4 / 7, 2 / 7, 1 / 7)))
        assert abs(sum(a) - 1.0) < 1e-12
        assert a[1] == pytest.approx(a[0] / 2) and a[2] == pytest.approx(a[0] / 4)

    def test_halving_solves_normalisation(self):
        h = DeepSupervisionConfig.halving().alphas
        assert all(abs(x - y) < 1e-12 for x, y in zip(h, DeepSupervisionConfig().alphas))

    def test_equal_terms_give_that_value(self, rng, monkeypatch):
        import vmixer.training.losses as losses

        monkeypatch.setattr(losses, "segmentation_loss", lambda logits, labels: Tensor(0.8125))
        out = outputs_of(rng)
        assert deep_supervision_loss(out, np.zeros((1, 8, 8, 4), dtype=np.int64)).item() == pytest.approx(0.8125, rel=1e-7)

    def test_weighted_sum(self, rng):
        out = outputs_of(rng)
        labels = rng.integers(0, 3, size=(1, 8, 8, 4))
        terms = [segmentation_loss(out["logits"], labels).item()]
        terms.append(segmentation_loss(out["aux"][0], labels[:, ::4, ::4, ::2]).item())
        terms.append(segmentation_loss(out["aux"][1], labels[:, ::8, ::8, ::4]).item())
        expected = sum(a * t for a, t in zip((4 / 7, 2 / 7, 1 / 7), terms))
        assert deep_supervision_loss(out, labels).item() == pytest.approx(expected, rel=1e-5)

    def test_disabled_is_full_loss(self, rng):
        out = outputs_of(rng)
        labels = rng.integers(0, 3, size=(1, 8, 8, 4))
        off = DeepSupervisionConfig(enabled=False)
        assert deep_supervision_loss(out, labels, off).item() == segmentation_loss(out["logits"], labels).item()

    def test_resolution_mismatch(self, rng):
        out = outputs_of(rng)
        out["aux"][0] = Tensor(rng.normal(size=(1, 3, 3, 3, 3)))
        with pytest.raises(ShapeError):
            deep_supervision_loss(out, rng.integers(0, 3, size=(1, 8, 8, 4)))

    def test_nearest_downsampling(self):
        labels = np.arange(64).reshape(1, 4, 4, 4)
        np.testing.assert_array_equal(downsample_labels(labels, (2, 2, 1)), labels[:, ::2, ::2, ::4])


class TestSgd:
    def _param(self, v):
        return {"w": Tensor(np.array(v, dtype=np.float32))}

    def test_zero_grad_unchanged(self):
        p = self._param([1.5, -2.0])
        sgd_step(p, {"w": np.zeros(2, np.float32)}, OptimizerState(weight_decay=0.0), 0.1)
        np.testing.assert_array_equal(p["w"].data, [1.5, -2.0])

    def test_momentum_recurrence(self):
        p = self._param([0.0])
        state = OptimizerState(weight_decay=0.0)
        sgd_step(p, {"w": np.ones(1, np.float32)}, state, 0.1)
        assert p["w"].data[0] == pytest.approx(-0.1, abs=1e-7)
        sgd_step(p, {"w": np.ones(1, np.float32)}, state, 0.1)
        assert p["w"].data[0] == pytest.approx(-0.299, abs=1e-6)

    def test_weight_decay_shrinks(self):
        p = self._param([2.0])
        state = OptimizerState(weight_decay=0.1)
        prev = 2.0
        for _ in range(5):
            sgd_step(p, {"w": np.zeros(1, np.float32)}, state, 0.1)
            assert abs(p["w"].data[0]) < prev
            prev = abs(p["w"].data[0])

    def test_lr_zero_identity(self, rng):
        p = self._param(rng.normal(size=4))
        before = p["w"].data.copy()
        sgd_step(p, {"w": rng.normal(size=4).astype(np.float32)}, OptimizerState(), 0.0)
        assert p["w"].data.tobytes() == before.tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sgd_step(self._param([1.0, 2.0]), {"w": np.zeros(3, np.float32)}, OptimizerState(), 0.1)

    def test_buffers_mirror_params(self):
        p = self._param(np.zeros((2, 3)))
        state = OptimizerState()
        sgd_step(p, {"w": np.ones((2, 3), np.float32)}, state, 0.1)
        assert state.buffers["w"].shape == (2, 3)

    def test_defaults(self):
        s = OptimizerState()
        assert (s.momentum, s.weight_decay) == (0.99, 3e-5)


class TestClip:
    def test_scales_to_max(self):
        g = {"a": np.array([3.0, 4.0])}
        assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
        assert np.linalg.norm(g["a"]) == pytest.approx(1.0, rel=1e-5)

    def test_small_norm_untouched(self):
        g = {"a": np.array([0.3, 0.4])}
        clip_grad_norm(g, 1.0)
        np.testing.assert_array_equal(g["a"], [0.3, 0.4])


class TestSynth:
    def test_deterministic(self):
        a = synth_dataset(3, 2, (16, 16, 8), 3)
        b = synth_dataset(3, 2, (16, 16, 8), 3)
        for x, y in zip(a, b):
            assert x.image.tobytes() == y.image.tobytes()
            assert x.labels.tobytes() == y.labels.tobytes()

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 4))
    def test_all_classes_present(self, seed, K):
        s = synth_dataset(seed, 1, (16, 16, 16), K)[0]
        assert set(np.unique(s.labels)) == set(range(K))
        assert s.image.shape == (1, 16, 16, 16) and s.image.dtype == np.float32

    def test_noise_level(self):
        s = synth_dataset(0, 1, (32, 32, 16), 3)[0]
        resid = s.image[0] - s.labels / 2.0
        assert resid.std() == pytest.approx(0.1, rel=0.05)

    @pytest.mark.parametrize("radii", [(4, 4, 4), (6, 5, 4), (8, 4, 5)])
    def test_ellipsoid_volume(self, radii):
        mask = ellipsoid_mask((24, 24, 24), (11.5, 11.5, 11.5), radii)
        analytic = 4 / 3 * np.pi * np.prod(radii)
        assert abs(mask.sum() - analytic) / analytic < 0.2

    def test_placement_failure(self):
        with pytest.raises(PlacementError):
            synth_dataset(0, 1, (4, 4, 4), 6, radius_range=(0.45, 0.5))


class TestTrain:
    def test_history_round_trip(self, tmp_path):
        h = TrainHistory()
        h.append(0, 1.5, 0.01)
        h.append(1, 1.2, 0.009)
        h.write(tmp_path / "h.jsonl")
        assert TrainHistory.read(tmp_path / "h.jsonl").records == h.records

    def test_overfit_trend_and_lr_trace(self):
        data = synth_dataset(0, 1, (32, 32, 16), 3)
        model = build_model(ModelConfig(**MICRO))
        sched = LrSchedule(0.1, 1000)
        h = train(model, data, sched, DeepSupervisionConfig(), 6, 4, batch_size=1, optimizer=OptimizerState(momentum=0.95))
        assert h.losses[-1] <= h.losses[0]
        assert h.lrs == [poly_lr(sched, e) for e in range(6)]
        assert all(np.isfinite(v) and v >= 0 for v in h.losses)

    def test_same_seed_same_trace(self):
        data = synth_dataset(1, 2, (32, 32, 16), 3)
        runs = []
        for _ in range(2):
            model = build_model(ModelConfig(**MICRO))
            runs.append(train(model, data, LrSchedule(), DeepSupervisionConfig(), 2, 2, seed=5).losses)
        assert runs[0] == runs[1]

    def test_divergence_reports_location(self):
        data = synth_dataset(0, 1, (32, 32, 16), 3)
        model = build_model(ModelConfig(**MICRO))
        model.params["expand.bias"].data[:] = np.nan
        with pytest.raises(TrainingDiverged) as info:
            train(model, data, LrSchedule(), DeepSupervisionConfig(), 1, 1)
        assert info.value.epoch == 0 and info.value.iteration == 0

    def test_dims_checked(self):
        data = synth_dataset(0, 1, (16, 16, 8), 3)
        with pytest.raises(ValueError):
            train(build_model(ModelConfig(**MICRO)), data, LrSchedule(), DeepSupervisionConfig(), 1, 1)
