import math

import numpy as np
import pytest

from dsfnet import adgraph as ad
from dsfnet.models import IdentitySpec, MLPSpec, ParamSet, init_params
from dsfnet.permops import PermMatrix, gt_permutation
from dsfnet.sigmoid import SigmoidSpec
from dsfnet.training import (AdamState, SyntheticTask, TrainConfig, combined_loss,
                             Sample, config_from_dict, default_beta, evaluate, gen_task,
                             loss_hard, loss_soft, optimizer_step, train_run)

I2 = gt_permutation([0.0, 1.0]).perm
SWAP = gt_permutation([1.0, 0.0]).perm
HALF = PermMatrix(ad.const(np.full((2, 2), 0.5)), "soft")


class TestLossSoft:
    def test_perfect(self):
        assert loss_soft(gt_permutation(np.arange(4.0)).perm, gt_permutation(np.arange(4.0)).perm
                         ).item() < 1e-10

    def test_half(self):
        assert loss_soft(HALF, SWAP).item() == pytest.approx(4 * math.log(2), abs=1e-12)
        assert loss_soft(HALF, I2).item() == pytest.approx(2.772589, abs=1e-6)

    def test_grad_check(self):
        M = np.random.default_rng(0).uniform(0.1, 0.9, size=(3, 3))
        gt = gt_permutation([2.0, 0.0, 1.0]).perm
        assert ad.grad_check(lambda p: loss_soft(p, gt), [M], h=1e-5) < 1e-4

    def test_nonnegative_and_finite_at_saturation(self):
        v = loss_soft(SWAP, I2).item()
        assert v > 0 and math.isfinite(v)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            loss_soft(HALF, gt_permutation(np.arange(3.0)).perm)


class TestLossHard:
    def test_equal(self):
        X = np.random.default_rng(0).normal(size=(4, 2))
        gt = gt_permutation(X[:, 0]).perm
        assert loss_hard(gt, gt, X).item() == 0.0

    def test_example(self):
        assert loss_hard(SWAP, I2, np.array([[0.0], [1.0]])).item() == 2.0

    def test_vector_input(self):
        assert loss_hard(SWAP, I2, np.array([0.0, 1.0])).item() == 2.0

    def test_gradient_reaches_scores(self):
        from dsfnet.sortnet import build_odd_even, execute
        X = np.array([[0.3], [-0.2], [1.1]])
        s = ad.leaf(np.array([0.9, 0.1, -0.4]))
        _, P = execute(build_odd_even(3), s, SigmoidSpec("optimal", 1.0), "error-free")
        g = ad.backward(loss_hard(P, gt_permutation(X[:, 0]).perm, X))
        assert np.any(g[s] != 0)

    def test_split_variant(self):
        keys = np.array([3.0, 1.0, 2.0, 0.0])
        X = keys[:, None]
        gt = gt_permutation(keys).perm
        assert loss_hard(gt, gt, X, split=True).item() == 0.0
        ident = gt_permutation(np.arange(4.0)).perm
        # each half is compared with its own sorted rows
        expect = sum(float(np.sum((h - np.sort(h)) ** 2)) for h in (keys[:2], keys[2:]))
        assert loss_hard(ident, gt, X, split=True).item() == pytest.approx(expect)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_hard(SWAP, I2, np.zeros((3, 1)))


class TestCombined:
    def test_lambda_zero(self):
        X = np.array([[0.0], [1.0]])
        assert combined_loss(HALF, SWAP, I2, X, 0.0).item() == loss_soft(HALF, I2).item()

    def test_sum(self):
        X = np.array([[0.0], [1.0]])
        assert combined_loss(HALF, SWAP, I2, X, 1.0).item() == pytest.approx(4 * math.log(2) + 2)
        assert combined_loss(HALF, SWAP, I2, X, 0.1).item() == pytest.approx(2.772589 + 0.2,
                                                                             abs=1e-6)


def _scalar_params(v):
    return ParamSet({"w": ad.leaf(np.array(v))})


class TestOptimizer:
    def test_zero_grad_no_decay(self):
        p = _scalar_params([1.5, -2.0])
        out, _ = optimizer_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
        assert np.array_equal(out["w"].value, [1.5, -2.0])

    def test_first_step(self):
        p = _scalar_params(1.0)
        out, st = optimizer_step(p, {"w": np.array(1.0)}, AdamState(), 0.1, (0.9, 0.999), 1e-8)
        assert out["w"].item() == pytest.approx(0.9, abs=1e-8)
        assert st.t == 1

    def test_decoupled_decay(self):
        p = _scalar_params(2.0)
        state = AdamState()
        for k in range(1, 4):
            p, state = optimizer_step(p, {"w": np.array(0.0)}, state, 0.1, weight_decay=0.01)
            assert p["w"].item() == pytest.approx(2.0 * (1 - 0.001) ** k, rel=1e-15)

    def test_matches_reference_adamw(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=3)
        ref = w.copy()
        m = v = np.zeros(3)
        p, state = _scalar_params(w), AdamState()
        for t in range(1, 6):
            g = rng.normal(size=3)
            p, state = optimizer_step(p, {"w": g}, state, 0.01, (0.9, 0.99), 1e-8, 0.1)
            m = 0.9 * m + 0.1 * g
            v = 0.99 * v + 0.01 * g * g
            ref = ref - 0.01 * 0.1 * ref
            ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
        np.testing.assert_allclose(p["w"].value, ref, rtol=1e-13)

    def test_shape_mismatch(self):
        p = _scalar_params([1.0, 2.0])
        with pytest.raises(ValueError):
            optimizer_step(p, {"w": np.zeros(2)}, AdamState({"w": np.zeros(3)}, {"w": np.zeros(3)}),
                           0.1)


class TestTasks:
    def test_scalar(self):
        data = gen_task(SyntheticTask("scalar"), 3, 50, 0)
        for smp in data:
            assert np.all((smp.X >= -10) & (smp.X <= 10))
            assert np.all(np.diff(smp.gt.value.T @ smp.keys) >= 0)

    def test_vector_reproducible(self):
        t = SyntheticTask("vector", 8, seed=3)
        a, b = gen_task(t, 5, 10, 7), gen_task(t, 5, 10, 7)
        for x, y in zip(a, b):
            assert np.array_equal(x.X, y.X) and np.array_equal(x.keys, y.keys)

    def test_vector_keys_from_map(self):
        t = SyntheticTask("vector", 4, seed=1)
        w, b = t.hidden_map()
        for smp in gen_task(t, 6, 5, 2):
            assert np.array_equal(smp.keys, np.tanh(smp.X @ w + b))

    def test_unknown(self):
        with pytest.raises(ValueError):
            SyntheticTask("image")


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lam=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)

    def test_default_beta(self):
        assert [default_beta(n) for n in (3, 5, 7, 9, 15, 32)] == [6, 20, 29, 32, 25, 124]
        assert default_beta(4) == 6.0
        assert TrainConfig(n=7).sigmoid_spec.beta == 29.0

    def test_lr_decay(self):
        c = TrainConfig(lr=1e-3, lr_decay=(0.5, 100))
        assert c.lr_at(0) == 1e-3 and c.lr_at(99) == 1e-3 and c.lr_at(250) == 2.5e-4

    def test_from_dict(self):
        c = config_from_dict({"lambda": 0.3, "n": 3, "unknown": 1})
        assert c.lam == 0.3 and c.n == 3


class TestEvaluate:
    def test_perfect_scalar(self):
        task = SyntheticTask("scalar")
        res = evaluate(ParamSet(), IdentitySpec(1), task, 6, 200, SigmoidSpec(), seed=0)
        assert (res.acc_em, res.acc_ew) == (1.0, 1.0)

    def test_random_baseline(self):
        spec = MLPSpec(4, (8,))
        params = init_params(spec, 0)
        rng = np.random.default_rng(11)
        N = 10_000
        data = []
        for _ in range(N):
            X = rng.normal(size=(3, 4))
            keys = rng.normal(size=3)  # independent of X: any scorer is a random guess
            data.append(Sample(X, keys, gt_permutation(keys).perm))
        res = evaluate(params, spec, SyntheticTask("vector", 4), 3, N, SigmoidSpec(), data=data)
        p = 1 / 6
        assert abs(res.acc_em - p) < 4 * math.sqrt(p * (1 - p) / N)
        assert res.acc_em <= res.acc_ew

    def test_no_mutation_and_deterministic(self):
        spec = MLPSpec(8, (4,))
        params = init_params(spec, 0)
        before = params.values()
        task = SyntheticTask("vector", 8)
        a = evaluate(params, spec, task, 5, 30, SigmoidSpec(), seed=1)
        b = evaluate(params, spec, task, 5, 30, SigmoidSpec(), seed=1)
        assert a == b
        for k, v in params.values().items():
            assert np.array_equal(v, before[k])


class TestTrainRun:
    def test_identity_scalar_perfect(self):
        cfg = TrainConfig(n=5, lam=0.0, task="scalar", steps=3, eval_every=1, n_eval=50)
        _, hist = train_run(cfg, IdentitySpec(1))
        assert all(r["acc_em"] == 1.0 for r in hist)

    def test_zero_steps(self):
        cfg = TrainConfig(steps=0, n_eval=20)
        params, hist = train_run(cfg)
        init = init_params(MLPSpec(8, (32,)), cfg.seed)
        assert len(hist) == 1 and hist[0]["step"] == 0
        for k in init:
            assert np.array_equal(params[k].value, init[k].value)

    def test_deterministic(self):
        cfg = TrainConfig(steps=6, eval_every=3, n_eval=20, batch=4)
        a, b = train_run(cfg)[1], train_run(cfg)[1]
        assert a == b
        assert list(a[0]) == ["step", "loss_soft", "loss_hard", "loss_total", "acc_em",
                              "acc_ew", "lr"]

    def test_improves(self):
        cfg = TrainConfig(steps=300, eval_every=300, n_eval=200, lr=3e-3)
        _, hist = train_run(cfg)
        assert hist[-1]["acc_em"] > hist[0]["acc_em"]
        assert hist[-1]["loss_total"] < hist[0]["loss_total"]

    def test_split_variant_runs(self):
        cfg = TrainConfig(steps=2, eval_every=2, n_eval=10, batch=2, split_hard=True)
        _, hist = train_run(cfg)
        assert all(math.isfinite(r["loss_total"]) for r in hist)

    def test_callback(self):
        rows = []
        train_run(TrainConfig(steps=2, eval_every=1, n_eval=5, batch=2), callback=rows.append)
        assert [r["step"] for r in rows] == [0, 1, 2]
