import hashlib

import numpy as np
import pytest

from oracles import numerical_gradient, rel_err
from swin_unet3d.checkpoint import apply_state, load_checkpoint, save_checkpoint
from swin_unet3d.data import generate_synthetic, slice_samples
from swin_unet3d.model import ModelConfig, SwinUNet3D
from swin_unet3d.tensor import ConfigError, Tensor, no_grad, tsum
from swin_unet3d.training import (
    Adam,
    TrainConfig,
    evaluate,
    mse_loss,
    per_horizon_mse,
    plateau_schedule,
    split_train_val,
    train,
)

rng = np.random.default_rng(17)

TINY = ModelConfig(embed_dim=8, heads=2, encoder_depths=(1, 1, 1, 1), neck_depth=1,
                   decoder_depths=(1, 1, 1, 1))


def tiny_samples(n=6, seed=0, hw=16):
    movie = generate_synthetic(hw, hw, 23 + n, seed=seed)
    return slice_samples(movie)


class TestMseLoss:
    def test_equal_inputs_zero(self):
        x = Tensor(rng.standard_normal((3, 4)))
        assert mse_loss(x, Tensor(x.data.copy())).item() == 0.0

    def test_hand_arithmetic(self):
        loss = mse_loss(Tensor([1.0, 2.0]), Tensor([1.0, 4.0]))
        assert loss.item() == 2.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            mse_loss(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_gradient_closed_form_and_finite_differences(self):
        pred = rng.standard_normal((2, 3))
        target = rng.standard_normal((2, 3))
        pt = Tensor(pred, requires_grad=True)
        mse_loss(pt, Tensor(target)).backward()
        assert rel_err(pt.grad, 2 * (pred - target) / pred.size) < 1e-12

        def f(arr):
            with no_grad():
                return mse_loss(Tensor(arr), Tensor(target)).item()

        assert rel_err(pt.grad, numerical_gradient(f, pred)) < 1e-6


class TestAdam:
    def test_first_step_closed_form(self):
        w = Tensor(np.zeros(1), requires_grad=True)
        w.grad = np.ones(1)
        opt = Adam({"w": w})
        opt.step(lr=0.1)
        # mhat = vhat = 1 at step 1, so the update is lr / (1 + eps)
        assert abs(float(w.data[0]) + 0.1 / (1 + 1e-8)) < 1e-15
        assert abs(float(w.data[0]) + 0.1) < 1e-8

    def test_zero_gradients_leave_parameters_unchanged(self):
        w = Tensor(rng.standard_normal(4), requires_grad=True)
        before = w.data.copy()
        w.grad = np.zeros(4)
        Adam({"w": w}).step(lr=0.5)
        assert np.array_equal(w.data, before)

    def test_missing_gradient_names_parameter(self):
        w = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ConfigError, match="oddly.named"):
            Adam({"oddly.named": w}).step(lr=0.1)

    def test_ten_steps_bitwise_deterministic(self):
        def run():
            r = np.random.default_rng(3)
            params = {
                "a": Tensor(r.standard_normal(5).astype(np.float32), requires_grad=True),
                "b": Tensor(r.standard_normal((2, 2)).astype(np.float32), requires_grad=True),
            }
            opt = Adam(params)
            for step in range(10):
                for p in params.values():
                    p.zero_grad()
                loss = tsum(params["a"] * params["a"]) + tsum(params["b"] * params["b"]) * 0.5
                loss.backward()
                opt.step(lr=1e-2)
            return {k: v.data.copy() for k, v in params.items()}

        one, two = run(), run()
        for k in one:
            assert np.array_equal(one[k], two[k])

    def test_step_counter_increments(self):
        w = Tensor(np.zeros(1), requires_grad=True)
        opt = Adam({"w": w})
        for i in range(3):
            w.grad = np.ones(1)
            opt.step(lr=0.1)
            assert opt.step_count == i + 1


class TestPlateauSchedule:
    CFG = TrainConfig()

    def test_strictly_decreasing_keeps_initial_rate(self):
        history = [1.0 / (i + 1) for i in range(20)]
        assert plateau_schedule(history, self.CFG) == self.CFG.lr_init

    def test_flat_history_decays_once_after_patience(self):
        history = [1.0] * (self.CFG.plateau_patience + 1)
        assert plateau_schedule(history, self.CFG) == pytest.approx(1e-5, rel=1e-12)

    def test_long_flat_history_clamps_exactly_at_minimum(self):
        lr = plateau_schedule([1.0] * 40, self.CFG)
        assert lr == 1e-7
        lr = plateau_schedule([1.0] * 400, self.CFG)
        assert lr == 1e-7

    def test_improvement_resets_patience(self):
        # two bad epochs, an improvement, then two bad epochs: never decays at patience 3
        history = [1.0, 1.0, 1.0, 0.5, 0.5, 0.5]
        assert plateau_schedule(history, self.CFG) == self.CFG.lr_init

    def test_tiny_improvements_below_min_delta_count_as_plateau(self):
        history = [1.0, 1.0 - 1e-9, 1.0 - 2e-9, 1.0 - 3e-9]
        assert plateau_schedule(history, self.CFG) == pytest.approx(1e-5, rel=1e-12)

    def test_monotone_nonincreasing_and_bounded(self):
        cfg = TrainConfig()
        history = list(rng.uniform(0.5, 1.5, size=60))
        rates = [plateau_schedule(history[:i], cfg) for i in range(len(history) + 1)]
        for a, b in zip(rates[:-1], rates[1:]):
            assert b <= a
        assert all(r >= cfg.lr_min for r in rates)


class TestSplit:
    def test_fractions(self):
        samples = tiny_samples(10)
        tr, val = split_train_val(samples, TrainConfig(seed=0, val_fraction=0.2))
        assert len(val) == 2 and len(tr) == 8

    def test_at_least_one_on_each_side(self):
        samples = tiny_samples(2)
        tr, val = split_train_val(samples, TrainConfig(seed=0, val_fraction=0.1))
        assert len(val) == 1 and len(tr) == 1

    def test_single_sample_rejected(self):
        with pytest.raises(ConfigError):
            split_train_val(tiny_samples(1), TrainConfig())


class TestEvaluate:
    def test_zero_model_matches_mean_squared_target(self):
        samples = tiny_samples(3)
        model = SwinUNet3D(TINY, seed=0, init="zeros")
        got = evaluate(model, samples)
        expected = float(np.mean([np.mean(s.target.astype(np.float64) ** 2) for s in samples]))
        assert rel_err(got, expected) < 1e-9

    def test_evaluation_mutates_no_parameter(self):
        samples = tiny_samples(3)
        model = SwinUNet3D(TINY, seed=1)

        def digest():
            h = hashlib.sha256()
            for name, p in sorted(model.named_parameters()):
                h.update(name.encode())
                h.update(p.data.tobytes())
            return h.hexdigest()

        before = digest()
        evaluate(model, samples)
        per_horizon_mse(model, samples)
        assert digest() == before

    def test_per_horizon_has_six_entries(self):
        model = SwinUNet3D(TINY, seed=0)
        values = per_horizon_mse(model, tiny_samples(3))
        assert len(values) == 6
        assert all(np.isfinite(values))

    def test_normalized_reporting_is_raw_scale(self):
        samples = tiny_samples(3)
        model = SwinUNet3D(TINY, seed=2)
        raw = evaluate(model, samples, normalized=False)
        # the same model fed /255 inputs produces different predictions, but the
        # report stays in raw units; a zero model makes the scales comparable
        zero = SwinUNet3D(TINY, seed=0, init="zeros")
        assert rel_err(evaluate(zero, samples, normalized=True),
                       evaluate(zero, samples, normalized=False)) < 1e-6
        assert raw > 0


class TestTrainLoop:
    def test_loss_decreases_on_short_run(self):
        samples = tiny_samples(4, hw=16)
        model = SwinUNet3D(TINY, seed=0)
        cfg = TrainConfig(lr_init=2e-3, batch_size=4, max_epochs=30, max_steps=30,
                          seed=0, val_fraction=0.25, normalize=True, plateau_patience=50)
        report = train(model, samples, cfg)
        sl = report["step_losses"]
        assert len(sl) == 30
        assert min(sl) < 0.7 * sl[0]
        assert all(b < a for a, b in zip(sl[:5], sl[1:6]))

    def test_first_step_descends_for_five_seeds(self):
        for seed in range(5):
            samples = tiny_samples(4, seed=seed)
            model = SwinUNet3D(TINY, seed=seed)
            cfg = TrainConfig(lr_init=2e-3, batch_size=4, max_epochs=2, max_steps=2,
                              seed=seed, val_fraction=0.25, normalize=True)
            report = train(model, samples, cfg)
            s0, s1 = report["step_losses"][:2]
            assert s1 < s0, f"seed {seed}: {s0} -> {s1}"

    def test_deterministic_logs_across_runs(self):
        def run():
            samples = tiny_samples(6)
            model = SwinUNet3D(TINY, seed=5)
            cfg = TrainConfig(lr_init=1e-3, batch_size=2, max_epochs=3, seed=5,
                              val_fraction=0.2, normalize=True, augment=True)
            return train(model, samples, cfg)["log_lines"]

        assert run() == run()

    def test_log_line_format(self, tmp_path):
        samples = tiny_samples(4)
        model = SwinUNet3D(TINY, seed=0)
        cfg = TrainConfig(batch_size=2, max_epochs=2, seed=0, val_fraction=0.25)
        log = tmp_path / "train.log"
        train(model, samples, cfg, log_path=log)
        lines = log.read_text().splitlines()
        assert len(lines) == 2
        for i, line in enumerate(lines):
            parts = dict(kv.split("=") for kv in line.split())
            assert parts["epoch"] == str(i)
            float(parts["train_mse"]), float(parts["val_mse"]), float(parts["lr"])

    def test_best_checkpoint_round_trip_reproduces_val_mse(self, tmp_path):
        samples = tiny_samples(5)
        model = SwinUNet3D(TINY, seed=0)
        cfg = TrainConfig(lr_init=1e-3, batch_size=2, max_epochs=3, seed=0, val_fraction=0.2,
                          normalize=True)
        report = train(model, samples, cfg)
        path = tmp_path / "best.swuc"
        save_checkpoint(path, report["best_state"])

        fresh = SwinUNet3D(TINY, seed=123)
        apply_state(fresh, load_checkpoint(path))
        _, val = split_train_val(samples, cfg)
        got = evaluate(fresh, val, normalized=True, batch_size=cfg.batch_size)
        assert got == report["best_val_mse"]

    def test_augmented_run_stays_finite_and_deterministic(self):
        samples = tiny_samples(4)
        model = SwinUNet3D(TINY, seed=0)
        cfg = TrainConfig(lr_init=1e-3, batch_size=2, max_epochs=2, seed=9,
                          normalize=True, val_fraction=0.25, augment=True, permute_channels=True)
        report = train(model, samples, cfg)
        assert np.isfinite(report["epoch_train_mse"]).all()
