import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fovdistill import numerics as nx
from fovdistill.errors import InvalidArgument, NumericError


def _softmax_ref(z, tau):
    e = [math.exp(v / tau) for v in z]
    s = math.fsum(e)
    return [v / s for v in e]


class TestSoftmaxTemp:
    def test_uniform_for_equal_logits(self):
        p = nx.softmax_temp(nx.Tensor(np.full((4, 4), 2.5)), 0.3)
        np.testing.assert_allclose(p.data, 1 / 16, atol=1e-15)

    @pytest.mark.parametrize("tau,expected", [(1.0, [0.25, 0.75]), (0.5, [0.1, 0.9])])
    def test_odds_ratio(self, tau, expected):
        p = nx.softmax_temp(nx.Tensor([0.0, math.log(3.0)]), tau)
        np.testing.assert_allclose(p.data, expected, atol=1e-12)
        np.testing.assert_allclose(p.data, _softmax_ref([0.0, math.log(3.0)], tau), atol=1e-14)

    def test_flattens_whole_grid(self, rng):
        z = rng.normal(size=(5, 7))
        p = nx.softmax_temp(nx.Tensor(z), 0.2).data
        assert p.shape == (5, 7)
        assert abs(p.sum() - 1) < 1e-12

    def test_batched_rows(self, rng):
        z = rng.normal(size=(3, 4, 4))
        p = nx.softmax_temp(nx.Tensor(z), 0.5, batch=True).data
        np.testing.assert_allclose(p.reshape(3, -1).sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(p[1], nx.softmax_temp(nx.Tensor(z[1]), 0.5).data, atol=1e-15)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_rejects_nonpositive_tau(self, tau):
        with pytest.raises(InvalidArgument):
            nx.softmax_temp(nx.Tensor([1.0, 2.0]), tau)

    def test_non_finite_logits(self):
        z = nx.Tensor([0.0, 1.0])
        z.data[1] = np.inf
        with pytest.raises(NumericError):
            nx.softmax_temp(z, 1.0)

    def test_large_logits_stable(self):
        p = nx.softmax_temp(nx.Tensor([1000.0, 1000.0 + math.log(3)]), 1.0)
        np.testing.assert_allclose(p.data, [0.25, 0.75], atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-50, 50)),
           st.floats(1e-3, 1e3))
    def test_sums_to_one(self, z, tau):
        p = nx.softmax_temp(nx.Tensor(z), tau).data
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-9


class TestCrossEntropyKL:
    def test_uniform_pair(self):
        assert nx.cross_entropy([0.5, 0.5], nx.Tensor([0.5, 0.5])).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_one_hot_target(self):
        pred = nx.Tensor([0.2, 0.3, 0.5])
        assert nx.cross_entropy([0, 1, 0], pred).item() == pytest.approx(-math.log(0.3), abs=1e-12)
        assert nx.kl_divergence([0, 1, 0], pred).item() == pytest.approx(-math.log(0.3), abs=1e-12)

    def test_skewed_target_uniform_pred(self):
        ce = nx.cross_entropy([0.9, 0.1], nx.Tensor([0.5, 0.5])).item()
        assert ce == pytest.approx(0.9 * math.log(2) + 0.1 * math.log(2), abs=1e-12)

    def test_kl_identity_zero(self, rng):
        p = rng.dirichlet(np.ones(10))
        assert abs(nx.kl_divergence(p, nx.Tensor(p)).item()) < 1e-12

    def test_kl_known_value(self):
        kl = nx.kl_divergence([0.75, 0.25], nx.Tensor([0.25, 0.75])).item()
        assert kl == pytest.approx(0.75 * math.log(3) - 0.25 * math.log(3), abs=1e-12)
        assert kl == pytest.approx(0.549306, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            nx.cross_entropy([0.5, 0.5], nx.Tensor([0.2, 0.3, 0.5]))

    def test_target_gets_no_gradient(self, rng):
        z = nx.Tensor(rng.normal(size=6), requires_grad=True)
        t = nx.Tensor(rng.dirichlet(np.ones(6)), requires_grad=True)
        nx.cross_entropy(t, nx.softmax_temp(z, 1.0)).backward()
        assert not np.any(t.grad)
        assert np.any(z.grad)

    def test_ce_gradient_is_p_minus_t(self, rng):
        z = nx.Tensor(rng.normal(size=8), requires_grad=True)
        t = rng.dirichlet(np.ones(8))
        tau = 0.4
        p = nx.softmax_temp(z, tau)
        nx.cross_entropy(t, p).backward()
        np.testing.assert_allclose(z.grad, (p.data - t) / tau, atol=1e-12)

    def test_batched_ce(self, rng):
        t = rng.dirichlet(np.ones(9), size=3).reshape(3, 3, 3)
        p = rng.dirichlet(np.ones(9), size=3).reshape(3, 3, 3)
        ce = nx.cross_entropy(t, nx.Tensor(p), batch=True).data
        for i in range(3):
            assert ce[i] == pytest.approx(nx.cross_entropy(t[i], nx.Tensor(p[i])).item(), abs=1e-14)


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        x = nx.Tensor(rng.normal(size=(3, 4)))
        assert nx.grad_check(lambda t: nx.sum(t * t), x) < 1e-7

    def test_ce_after_softmax(self, rng):
        x = nx.Tensor(rng.normal(size=16))
        target = rng.dirichlet(np.ones(16))
        assert nx.grad_check(lambda t: nx.cross_entropy(target, nx.softmax_temp(t, 0.5)), x) < 1e-4

    def test_detects_wrong_gradient(self, rng):
        x = nx.Tensor(rng.normal(size=5))

        def bad(t):
            out = nx.sum(t * t)
            out._backward = lambda g: (g * 0.0,)
            return out

        assert nx.grad_check(bad, x) > 1e-2


class TestTensorBasics:
    def test_rejects_nan(self):
        with pytest.raises(NumericError):
            nx.Tensor([1.0, np.nan])

    def test_forward_nan_raises(self):
        with pytest.raises(NumericError):
            nx.log(nx.Tensor([0.0, 1.0]))

    def test_grad_shape_matches(self, rng):
        x = nx.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        nx.sum(nx.relu(x) * 3.0).backward()
        assert x.grad.shape == x.shape

    def test_no_grad_context(self, rng):
        x = nx.Tensor(rng.normal(size=3), requires_grad=True)
        with nx.no_grad():
            y = nx.sum(x * x)
        assert not y.requires_grad

    def test_shared_subexpression_accumulates(self):
        x = nx.Tensor([3.0], requires_grad=True)
        y = x * x
        nx.sum(y + y).backward()
        np.testing.assert_allclose(x.grad, [12.0])

    def test_conv_matches_direct_loop(self, rng):
        x = rng.normal(size=(1, 2, 5, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = nx.conv2d(nx.Tensor(x), nx.Tensor(w), nx.Tensor(b), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((1, 3, 3, 3))
        for o in range(3):
            for i in range(3):
                for j in range(3):
                    ref[0, o, i, j] = (xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_correlate_matches_brute_force(self, rng):
        s = rng.normal(size=(2, 3, 7, 6))
        t = rng.normal(size=(2, 3, 4, 3))
        out = nx.correlate2d(nx.Tensor(s), nx.Tensor(t)).data
        sp = np.pad(s, ((0, 0), (0, 0), (2, 1), (1, 1)))
        ref = np.array([[[(sp[n, :, a:a + 4, b:b + 3] * t[n]).sum() for b in range(6)]
                         for a in range(7)] for n in range(2)])
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_box_sum_matches_correlate(self, rng):
        s = nx.Tensor(rng.normal(size=(2, 3, 9, 10)))
        np.testing.assert_allclose(nx.box_sum(s, 4, 5).data,
                                   nx.correlate2d(s, np.ones((3, 4, 5))).data, atol=1e-12)

    def test_grid_sample_exact_at_integers(self, rng):
        src = rng.normal(size=(2, 4, 5))
        rows, cols = np.meshgrid(np.arange(4.0), np.arange(5.0), indexing="ij")
        out = nx.grid_sample(nx.Tensor(src), rows, cols).data
        np.testing.assert_allclose(out, src, atol=1e-15)

    def test_grid_sample_wraps_columns(self):
        src = np.arange(4.0).reshape(1, 1, 4)
        out = nx.grid_sample(nx.Tensor(src), np.zeros(1), np.array([3.5])).data
        assert out[0, 0] == pytest.approx(3.0)  # clamped
        out = nx.grid_sample(nx.Tensor(src), np.zeros(1), np.array([3.5]), wrap_cols=True).data
        assert out[0, 0] == pytest.approx(1.5)


class TestParamStoreAndAdam:
    def test_copy_is_deep(self):
        a = nx.ParamStore({"w": np.ones((2, 2))})
        b = a.copy()
        b["w"].data[0, 0] = 5.0
        assert a["w"].data[0, 0] == 1.0
        assert a.compatible(b)

    def test_incompatible(self):
        a = nx.ParamStore({"w": np.ones(2)})
        b = nx.ParamStore({"w": np.ones(3)})
        c = nx.ParamStore({"v": np.ones(2)})
        assert not a.compatible(b)
        assert not a.compatible(c)
        with pytest.raises(InvalidArgument):
            a.assign(b)

    def test_adam_first_step_moves_by_lr(self):
        p = nx.ParamStore({"w": np.array([1.0, -2.0])})
        p["w"].grad = np.array([0.3, -5.0])
        nx.Adam(p, lr=0.01).step()
        np.testing.assert_allclose(p["w"].data, [0.99, -1.99], atol=1e-8)

    def test_adam_minimizes_quadratic(self):
        p = nx.ParamStore({"w": np.array([3.0, -4.0])})
        opt = nx.Adam(p, lr=0.05)
        for _ in range(2000):
            p.zero_grad()
            nx.sum(p["w"] * p["w"]).backward()
            opt.step()
        assert np.abs(p["w"].data).max() < 1e-2

    def test_save_load_bit_exact(self, tmp_path, rng):
        a = nx.ParamStore({"x.w": rng.normal(size=(3, 2, 3, 3)), "x.b": rng.normal(size=3)})
        a.save(tmp_path)
        b = nx.ParamStore.load(tmp_path)
        assert b.names() == a.names()
        for k in a:
            assert a[k].data.tobytes() == b[k].data.tobytes()


class TestSerialization:
    def test_header_layout(self):
        blob = nx.tensor_to_bytes(np.arange(6.0).reshape(2, 3))
        assert blob[:4] == b"GDTN"
        assert int.from_bytes(blob[4:12], "little") == 2
        assert int.from_bytes(blob[12:20], "little") == 2
        assert int.from_bytes(blob[20:28], "little") == 3
        assert len(blob) == 28 + 6 * 8

    def test_round_trip(self, rng):
        a = rng.normal(size=(2, 3, 4))
        b = nx.tensor_from_bytes(nx.tensor_to_bytes(a))
        assert b.shape == a.shape and b.tobytes() == a.tobytes()

    def test_scalar_round_trip(self):
        b = nx.tensor_from_bytes(nx.tensor_to_bytes(np.float64(2.5)))
        assert b.shape == () and float(b) == 2.5

    @pytest.mark.parametrize("blob", [b"XXXX" + bytes(8), b"GDTN", b"GDTN" + (1).to_bytes(8, "little")
                                      + (3).to_bytes(8, "little") + bytes(8)])
    def test_corrupt(self, blob):
        with pytest.raises(InvalidArgument):
            nx.tensor_from_bytes(blob)
