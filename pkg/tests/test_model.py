import numpy as np
import pytest

from ctxsim import autodiff as ad
from ctxsim.autodiff import Tensor
from ctxsim.data import gen_concentric_circles, m_per_class_sampler
from ctxsim.errors import ConfigError, ContractError, NumericAbort
from ctxsim.gradcheck import numerical_grad, relative_error
from ctxsim.losses import LossConfig, combined_loss
from ctxsim.model import (
    AdamState,
    MlpParams,
    TrainConfig,
    adam_step,
    embed,
    forward,
    lr_at_epoch,
    train,
)
from ctxsim.similarity import Batch


class TestForward:
    def test_unit_rows(self, rng):
        F = forward(MlpParams.init(seed=0), rng.normal(size=(30, 2)))
        np.testing.assert_allclose(np.linalg.norm(F.values, axis=1), 1.0, atol=1e-9)

    def test_zero_weights_constant(self):
        p = MlpParams.init((2, 4, 3), seed=0)
        for w in p.weights:
            w.values[:] = 0.0
        b = np.array([[3.0, 0.0, 4.0]])
        p.biases[-1].values = b.copy()
        out = embed(p, np.random.default_rng(0).normal(size=(5, 2)))
        np.testing.assert_allclose(out, np.repeat(b / 5.0, 5, axis=0), rtol=1e-15)

    def test_init_shapes_and_bounds(self):
        p = MlpParams.init((2, 64, 64, 8), seed=3)
        assert p.widths == [2, 64, 64, 8]
        for w, b in zip(p.weights, p.biases):
            bound = 1 / np.sqrt(w.shape[0])
            assert np.abs(w.values).max() <= bound and np.abs(b.values).max() <= bound
            assert b.shape == (1, w.shape[1])

    def test_init_deterministic(self):
        a, b = MlpParams.init(seed=5).arrays(), MlpParams.init(seed=5).arrays()
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_wrong_input_width(self):
        with pytest.raises(ContractError):
            forward(MlpParams.init(seed=0), np.ones((3, 3)))

    def test_copy_is_independent(self):
        p = MlpParams.init(seed=0)
        q = p.copy()
        q.weights[0].values += 1.0
        assert not np.array_equal(p.weights[0].values, q.weights[0].values)


def _signature(arrays, widths, X, labels, cfg):
    """Hidden ReLU patterns and contrastive violator sets for these parameters."""
    p = MlpParams.init(widths)
    p.load_arrays(arrays)
    masks = []
    h = X
    for w, b in zip(p.weights[:-1], p.biases[:-1]):
        h = h @ w.values + b.values
        masks.append((h > 0).tobytes())
        h = np.maximum(h, 0)
    F = embed(p, X)
    S = F @ F.T
    Y = labels[:, None] == labels[None, :]
    masks.append(((cfg.delta_plus - S > 0) & Y).tobytes())
    masks.append(((S - cfg.delta_minus > 0) & ~Y).tobytes())
    return tuple(masks)


def _gradcheck(widths, X, build, signature):
    arrays = MlpParams.init(widths, seed=11).arrays()

    def value(*arrs):
        p = MlpParams.init(widths)
        p.load_arrays(arrs)
        with ad.Tape():
            return build(forward(p, X)).item()

    numeric, stable = numerical_grad(value, arrays, h=1e-6, signature=signature)
    p = MlpParams.init(widths)
    p.load_arrays(arrays)
    ad.backward(build(forward(p, X)))
    checked = 0
    for t, n, ok in zip(p.tensors(), numeric, stable):
        assert relative_error(t.grad[ok], n[ok]) < 1e-4
        checked += ok.sum()
    return checked / sum(a.size for a in arrays)


class TestEndToEndGradient:
    widths = (2, 6, 6, 3)
    ds = gen_concentric_circles(3, 4, 0.0, seed=0)

    def test_forward_projection(self):
        proj = np.random.default_rng(2).normal(size=(12, 3))
        cfg = LossConfig()
        coverage = _gradcheck(
            self.widths,
            self.ds.points,
            lambda F: ad.sum(ad.mul(F, proj)),
            lambda *a: _signature(a, self.widths, self.ds.points, self.ds.labels, cfg)[:2],
        )
        assert coverage > 0.9

    def test_contrastive_and_regularizer(self):
        # the smooth part of the objective; the contextual term is piecewise constant
        cfg = LossConfig(lam=0.0, gamma=0.3)
        X, labels = self.ds.points, self.ds.labels
        coverage = _gradcheck(
            self.widths,
            X,
            lambda F: combined_loss(Batch(F, labels), cfg).total,
            lambda *a: _signature(a, self.widths, X, labels, cfg),
        )
        assert coverage > 0.9

    def test_context_term_is_locally_flat(self):
        X, labels = self.ds.points, self.ds.labels
        cfg = LossConfig(lam=1.0, gamma=0.0)
        arrays = MlpParams.init(self.widths, seed=11).arrays()

        def value(*arrs):
            p = MlpParams.init(self.widths)
            p.load_arrays(arrs)
            with ad.Tape():
                return combined_loss(Batch(forward(p, X), labels), cfg).total.item()

        base = value(*arrays)
        arrays[0][0, 0] += 1e-7
        assert value(*arrays) == base


class TestAdam:
    def _scalar(self, value=0.0):
        p = MlpParams([Tensor([[value]], requires_grad=True)], [Tensor([[0.0]], requires_grad=True)])
        return p, AdamState.for_params(p)

    def test_first_step(self):
        p, s = self._scalar()
        adam_step(p, [np.ones((1, 1)), np.zeros((1, 1))], s, lr=0.1)
        assert p.weights[0].item() == pytest.approx(-0.1, rel=1e-6)
        assert s.step == 1

    def test_constant_gradient_steps(self):
        p, s = self._scalar()
        for _ in range(5):
            adam_step(p, [np.ones((1, 1)), np.zeros((1, 1))], s, lr=0.1)
        assert p.weights[0].item() == pytest.approx(-0.5, rel=1e-6)

    def test_zero_gradient(self):
        p, s = self._scalar(2.5)
        adam_step(p, [np.zeros((1, 1)), np.zeros((1, 1))], s, lr=0.1)
        assert p.weights[0].item() == 2.5 and p.biases[0].item() == 0.0
        assert s.step == 1

    def test_non_finite(self):
        p, s = self._scalar()
        with pytest.raises(NumericAbort):
            adam_step(p, [np.array([[np.nan]]), np.zeros((1, 1))], s, lr=0.1)
        assert s.step == 0 and p.weights[0].item() == 0.0

    def test_shape_mismatch(self):
        p, s = self._scalar()
        with pytest.raises(ContractError):
            adam_step(p, [np.ones((2, 1)), np.zeros((1, 1))], s, lr=0.1)


class TestSchedule:
    def test_milestones(self):
        lrs = [lr_at_epoch(1.0, e) for e in (0, 14, 15, 29, 30, 45, 79)]
        np.testing.assert_allclose(lrs, [1, 1, 0.3, 0.3, 0.09, 0.027, 0.027])

    def test_custom(self):
        assert lr_at_epoch(0.01, 5, milestones=(2, 4), factor=0.5) == pytest.approx(0.0025)


class TestTrain:
    def _setup(self, epochs=2, seed=0, lam=0.4):
        ds = gen_concentric_circles(5, 20, 0.02, seed=seed)
        plan = m_per_class_sampler(ds, 5, 4, epochs, seed, batches_per_epoch=3)
        return ds, plan, LossConfig(lam=lam), TrainConfig(widths=(2, 8, 8, 2), epochs=epochs, seed=seed)

    def test_logs_every_step(self):
        ds, plan, lc, tc = self._setup()
        r = train(ds, plan, lc, tc)
        assert len(r.steps) == 6 and len(r.epochs) == 2
        assert {"loss_total", "l_context", "l_contrast", "l_reg", "lr"} <= r.steps[0].keys()
        assert "R@1" in r.epochs[-1] and not r.aborted

    def test_deterministic(self):
        a = train(*self._setup())
        b = train(*self._setup())
        assert a.steps == b.steps and a.epochs == b.epochs
        assert all(np.array_equal(x, y) for x, y in zip(a.params.arrays(), b.params.arrays()))

    def test_k_must_match_sampler(self):
        ds, plan, _, tc = self._setup()
        with pytest.raises(ConfigError):
            train(ds, plan, LossConfig(k=3), tc)

    def test_nan_aborts_with_last_good(self):
        ds, plan, lc, tc = self._setup()
        params = MlpParams.init(tc.widths, tc.seed)
        ds.points[plan.batches[1][0]] = np.nan
        with pytest.raises(NumericAbort) as info:
            train(ds, plan, lc, tc, params=params)
        report = info.value.report
        assert report.aborted and len(report.steps) == 1
        assert all(np.all(np.isfinite(a)) for a in report.params.arrays())

    def test_contrastive_learns(self):
        ds = gen_concentric_circles(5, 200, 0.0, seed=0)
        plan = m_per_class_sampler(ds, 5, 4, 10, 0, batches_per_epoch=50)
        r = train(ds, plan, LossConfig.contrastive_baseline(), TrainConfig(epochs=10))
        # 500 steps; reached 0.983 when frozen
        assert r.epochs[-1]["R@1"] >= 0.95
