import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ulm import autodiff as ad
from ulm.autodiff import Tensor
from ulm.dataset import DenseBatch, Scaler, make_batch, table_ranges
from ulm.embeddings import pseudo_table
from ulm.model import MlpModel, UlmConfig, UlmModel
from ulm.synthgen import SynthConfig, generate
from ulm.trainer import (Adam, EpochStats, TrainConfig, TrainHistory, TrainingError, adam_step,
                         evaluate, fit, loss_and_grads, masked_bce)

SCALER = Scaler(table_ranges())


class FlatModel:
    """Output fixed at 0.5 whatever the parameters, so validation loss never moves."""

    n_outputs = 1

    def init_params(self, rng):
        return {"w": np.zeros(1)}

    def forward(self, p, batch, train=False, rng=None):
        return ad.sigmoid(ad.mul(Tensor(np.zeros((len(batch), 1))), p["w"]))


def flat_data(n=20):
    y = np.r_[np.zeros(n // 2), np.ones(n - n // 2)][:, None]
    return DenseBatch(np.zeros((n, 1)), y, np.ones((n, 1)))


class TestMaskedBce:
    def test_half_is_ln2(self):
        loss = masked_bce(Tensor(np.full((3, 4), 0.5)), np.eye(3, 4), np.ones((3, 4)))
        assert float(loss.data) == pytest.approx(math.log(2), abs=1e-15)

    def test_perfect_prediction(self):
        y = np.array([[1.0, 0.0, 1.0, 0.0]])
        assert float(masked_bce(Tensor(y.copy()), y, np.ones((1, 4))).data) <= 1e-6

    def test_masked_cells_ignored(self):
        p = np.array([[0.9, 0.2, 0.7, 0.01]])
        y = np.array([[1.0, 0.0, 0.0, 1.0]])
        m = np.array([[1.0, 1.0, 0.0, 0.0]])
        expected = -(math.log(0.9) + math.log(0.8)) / 2
        assert float(masked_bce(Tensor(p), y, m).data) == pytest.approx(expected, abs=1e-15)

    def test_masked_logit_gradient_is_zero(self):
        z = Tensor(np.array([[0.3, -1.2, 2.0, 0.1]]), requires_grad=True)
        m = np.array([[1.0, 0.0, 1.0, 0.0]])
        (g,) = ad.backward(masked_bce(ad.sigmoid(z), np.ones((1, 4)), m), [z])
        assert g[0, 1] == 0.0 and g[0, 3] == 0.0
        assert g[0, 0] != 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_full_mask_is_plain_mean(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.uniform(0.01, 0.99, (5, 4))
        y = rng.integers(0, 2, (5, 4)).astype(float)
        plain = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert abs(float(masked_bce(Tensor(p), y, np.ones((5, 4))).data) - plain) < 1e-12

    def test_clamped_extremes_stay_finite(self):
        loss = masked_bce(Tensor(np.array([[0.0, 1.0]])), np.array([[1.0, 0.0]]), np.ones((1, 2)))
        assert float(loss.data) == pytest.approx(-math.log(1e-7), rel=1e-6)


class TestAdam:
    def test_first_step(self):
        """At t=1 the bias-corrected update is lr * g / (|g| + eps)."""
        params, _ = adam_step({"w": np.array([1.0])}, {"w": np.array([1.0])}, None, 0.1)
        assert params["w"][0] == pytest.approx(0.9, abs=1e-8)

    def test_zero_gradient(self):
        params, state = adam_step({"w": np.array([2.0])}, {"w": np.zeros(1)}, None, 0.1)
        assert params["w"][0] == 2.0
        state.m["w"][:], state.v["w"][:] = 0.5, 0.25
        state.step(params, {"w": np.zeros(1)}, 1e-12)
        assert (state.m["w"][0], state.v["w"][0]) == (0.9 * 0.5, 0.999 * 0.25)

    def test_non_finite_named(self):
        with pytest.raises(TrainingError, match="bad"):
            Adam({"bad": np.zeros(2)}).step({"bad": np.zeros(2)}, {"bad": np.array([1.0, np.nan])},
                                            0.1)

    def test_identical_trajectories(self):
        def run():
            rng = np.random.default_rng(5)
            p = {"w": rng.normal(size=4)}
            opt = Adam(p)
            for _ in range(20):
                opt.step(p, {"w": np.sin(p["w"] * 3)}, 0.01)
            return p["w"]
        assert run().tobytes() == run().tobytes()


class TestFit:
    def test_patience_stops(self):
        cfg = TrainConfig(max_epochs=50, batch_size=8, lr=0.1, patience=3, plateau_patience=10)
        _, h = fit(FlatModel(), flat_data(), flat_data(), cfg)
        assert len(h.epochs) == 4
        assert h.best_epoch == 1

    def test_plateau_halves_lr(self):
        cfg = TrainConfig(max_epochs=6, batch_size=8, lr=0.1, patience=50, plateau_patience=2)
        _, h = fit(FlatModel(), flat_data(), flat_data(), cfg)
        assert [e.lr for e in h.epochs] == [0.1, 0.1, 0.1, 0.05, 0.05, 0.025]

    def test_min_lr_floor(self):
        cfg = TrainConfig(max_epochs=8, batch_size=8, lr=1e-5, patience=50, plateau_patience=1,
                          min_lr=4e-6)
        _, h = fit(FlatModel(), flat_data(), flat_data(), cfg)
        assert min(e.lr for e in h.epochs) == 4e-6

    def test_empty_sets(self):
        with pytest.raises(TrainingError):
            fit(FlatModel(), flat_data(0), flat_data(), TrainConfig())

    def test_best_epoch_is_minimum(self):
        records = generate(SynthConfig(n_records=600, seed=2))
        model = MlpModel("M", hidden=16)
        batch = model.encode_records(records, SCALER)
        train, val = batch.take(np.arange(500)), batch.take(np.arange(500, 600))
        cfg = TrainConfig(max_epochs=12, lr=3e-3, seed=1)
        params, h = fit(model, train, val, cfg)
        losses = [e.val_loss for e in h.epochs]
        assert h.epochs[h.best_epoch - 1].val_loss == min(losses)
        assert min(losses) <= losses[0]
        assert evaluate(model, params, val)[0] == min(losses)

    def test_history_deterministic(self, tmp_path):
        records = generate(SynthConfig(n_records=300, seed=2))
        model = UlmModel(pseudo_table(dim=8), UlmConfig(heads=2, key_dim=2))
        batch = make_batch(records, SCALER)
        cfg = TrainConfig(max_epochs=2, lr=1e-3, seed=4)
        runs = []
        for k in range(2):
            params, h = fit(model, batch.take(np.arange(250)), batch.take(np.arange(250, 300)), cfg,
                            target_names=("GLU", "CHOL", "FER", "URIC"))
            h.to_csv(tmp_path / f"h{k}.csv")
            runs.append(params)
        assert (tmp_path / "h0.csv").read_bytes() == (tmp_path / "h1.csv").read_bytes()
        for name in runs[0]:
            assert runs[0][name].tobytes() == runs[1][name].tobytes()
        header = (tmp_path / "h0.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header == "epoch,train_loss,val_loss,val_auc_glu,val_auc_chol,val_auc_fer,val_auc_uric,lr"

    def test_sanity_descent(self):
        """Five full-batch Adam steps on a fresh toy model lower the loss each time."""
        batch = make_batch(generate(SynthConfig(n_records=64, seed=3)), SCALER)
        failures = 0
        for seed in range(10):
            model = UlmModel(pseudo_table(dim=16), UlmConfig(heads=2, key_dim=4))
            params = model.init_params(np.random.default_rng(seed))
            opt = Adam(params)
            losses = []
            for _ in range(6):
                loss, grads = loss_and_grads(model, params, batch, False, None)
                losses.append(loss)
                opt.step(params, grads, 1e-3)
            failures += not all(b < a for a, b in zip(losses, losses[1:]))
        assert failures <= 1


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.max_epochs, c.batch_size, c.beta1, c.beta2, c.eps) == (1000, 32, 0.9, 0.999, 1e-8)
        assert (c.patience, c.min_delta, c.plateau_patience, c.lr_factor, c.min_lr) == \
            (20, 1e-4, 10, 0.5, 1e-6)

    @pytest.mark.parametrize("bad", [{"lr": 0}, {"patience": 0}, {"lr_factor": -1},
                                     {"max_epochs": 0}])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"momentum": 0.9})

    def test_history_csv_blank_auc(self, tmp_path):
        h = TrainHistory([EpochStats(1, 0.5, 0.6, [float("nan")], 1e-3)], 1, ("GLU",))
        h.to_csv(tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text(encoding="utf-8").splitlines()[1] == "1,0.5,0.6,,0.001"
