import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_fd
from spivg import gradtape as gt
from spivg import spike
from spivg.errors import SpivgError


def cfg(**kw):
    return spike.NeuronConfig(**kw)


class TestFrameDiff:
    def test_345_then_identical(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]])
        assert np.allclose(spike.frame_diff(x), [5.0, 0.0])

    def test_constant_sequence(self):
        x = np.tile([1.0, 2.0, 3.0], (6, 1))
        assert np.allclose(spike.frame_diff(x), 0.0)

    def test_matches_bruteforce_norms(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        want = [np.sqrt(sum((x[t + 1, j] - x[t, j]) ** 2 for j in range(3))) for t in range(4)]
        assert np.allclose(spike.frame_diff(x), want, atol=1e-6)

    def test_too_short(self):
        with pytest.raises(SpivgError, match="too short"):
            spike.frame_diff(np.zeros((1, 4)))


class TestNeuronStep:
    def test_if_accumulates_and_spikes_at_step3(self):
        c = cfg(kind="IF", c_m=1.0, v_reset=0.0, threshold=1.0)
        v, refr = 0.0, 0
        vs, spikes = [], []
        for z in [0.4, 0.4, 0.4]:
            v_t, s, refr = spike.neuron_step(c, v, z, refr)
            vs.append(v_t)
            spikes.append(s)
            v = c.v_reset if s else v_t
        assert np.allclose(vs, [0.4, 0.8, 1.2])
        assert spikes == [0, 0, 1]

    def test_lif_resting_fixed_point(self):
        c = cfg(kind="LIF", e_l=0.2, threshold=1.0)
        v_t, s, _ = spike.neuron_step(c, c.e_l, 0.0, 0)
        assert v_t == c.e_l
        assert s == 0

    def test_lif_converges_to_closed_form(self):
        c = cfg(kind="LIF", g_l=0.2, e_l=0.1, threshold=1.0)
        z = 0.08
        target = c.e_l + z / c.g_l  # 0.5, below threshold
        v, refr = c.e_l, 0
        for _ in range(100):
            v, s, refr = spike.neuron_step(c, v, z, refr)
            assert s == 0
        assert abs(v - target) < 1e-3

    def test_refractory_holds_at_reset(self):
        c = cfg(kind="IF", v_reset=-0.5, threshold=1.0)
        v_t, s, refr = spike.neuron_step(c, 0.9, 100.0, refractory=2)
        assert (v_t, s, refr) == (-0.5, 0, 1)


class TestSnnForward:
    def test_depth0_identity_bit_exact(self):
        delta = np.random.default_rng(1).uniform(size=17)
        out, traces = spike.snn_forward(cfg(), 0, delta)
        assert np.array_equal(out, delta)
        assert traces == []

    def test_zero_input_never_spikes(self):
        for depth in (1, 2, 3):
            out, _ = spike.snn_forward(cfg(), depth, np.zeros(30))
            assert np.array_equal(out, np.zeros(30))

    def test_impulse_with_refractory_suppression(self):
        c = cfg(kind="LIF", refractory_steps=2, threshold=1.0)
        delta = np.zeros(12)
        delta[5] = 50.0  # z >> threshold * c_m
        out, traces = spike.snn_forward(c, 1, delta)
        assert out[5] == 1.0
        assert out[6] == 0.0 and out[7] == 0.0
        assert np.sum(out) == 1.0
        assert traces[0].refractory[6] == 2 and traces[0].refractory[7] == 1

    def test_variants_run(self):
        delta = np.abs(np.random.default_rng(2).normal(size=40)) * 2.0
        for kind in spike.NEURON_KINDS:
            out, traces = spike.snn_forward(cfg(kind=kind), 2, delta)
            assert set(np.unique(out)) <= {0.0, 1.0}
            assert len(traces) == 2


class TestInvariants:
    @given(st.lists(st.floats(0.0, 3.0), min_size=2, max_size=25), st.integers(0, 3))
    @settings(max_examples=60, deadline=None)
    def test_refractory_spacing(self, deltas, refr):
        c = cfg(kind="LIF", refractory_steps=refr)
        out, _ = spike.snn_forward(c, 1, np.array(deltas))
        where = np.flatnonzero(out)
        if len(where) > 1:
            assert np.min(np.diff(where)) >= refr + 1

    @given(st.lists(st.floats(-2.0, 3.0), min_size=2, max_size=25))
    @settings(max_examples=60, deadline=None)
    def test_threshold_invariant(self, deltas):
        c = cfg(kind="LIF", refractory_steps=1)
        _, traces = spike.snn_forward(c, 1, np.array(deltas))
        tr = traces[0]
        for t in range(len(deltas)):
            if tr.spikes[t] == 1:
                assert tr.refractory[t] == 0
                assert tr.v[t] >= c.threshold
            elif tr.refractory[t] == 0:
                assert tr.v[t] < c.threshold

    @given(
        st.lists(st.floats(0.0, 1.2), min_size=3, max_size=20),
        st.integers(0, 19),
        st.floats(0.05, 1.0),
        st.integers(0, 2),
    )
    @settings(max_examples=80, deadline=None)
    def test_if_monotonicity(self, deltas, idx, bump, refr):
        c = cfg(kind="IF", refractory_steps=refr)
        base = np.array(deltas)
        raised = base.copy()
        raised[idx % len(base)] += bump
        lo, _ = spike.snn_forward(c, 1, base)
        hi, _ = spike.snn_forward(c, 1, raised)
        assert hi.sum() >= lo.sum()

    def test_determinism(self):
        delta = np.random.default_rng(5).uniform(0, 2, size=50)
        a, _ = spike.snn_forward(cfg(), 2, delta)
        b, _ = spike.snn_forward(cfg(), 2, delta)
        assert np.array_equal(a, b)


class TestSurrogate:
    def test_window_center(self):
        assert spike.surrogate_spike_grad(1.0, 1.0, width=0.5) == 1.0

    def test_far_outside(self):
        assert spike.surrogate_spike_grad(11.0, 1.0, width=0.5) == 0.0

    def test_window_area(self):
        vs = np.linspace(-2, 4, 6001)
        vals = spike.surrogate_spike_grad(vs, 1.0, width=0.5)
        assert abs(np.trapezoid(vals, vs) - 1.0) < 1e-2


def _relaxed_loss(c, n_layers, width=0.5):
    def build(tape, xs):
        delta, c_m, g_l, e_l, gains = xs
        out = spike.snn_forward_relaxed(tape, delta, c, n_layers, c_m, g_l, e_l, gains, width)
        return tape.mean(tape.hadamard(out, out))

    return build


class TestRelaxedGradients:
    @pytest.mark.parametrize("kind", spike.NEURON_KINDS)
    def test_matches_finite_differences(self, kind):
        rng = np.random.default_rng(11)
        c = cfg(kind=kind)
        delta = rng.uniform(0.2, 1.8, size=12)
        inputs = [delta, np.asarray(1.1), np.asarray(0.3), np.asarray(0.05), np.array([0.9])]
        build = _relaxed_loss(c, 1)
        tensors = [gt.Tensor(x, requires_grad=True) for x in inputs]
        tape = gt.Tape()
        loss = build(tape, tensors)
        tape.backward(loss)
        fd = central_fd(build, inputs)
        for t, g in zip(tensors, fd):
            denom = np.maximum(1.0, np.maximum(np.abs(t.grad), np.abs(g)))
            assert np.max(np.abs(t.grad - g) / denom) < 1e-3

    def test_two_layers_gain_gradient(self):
        rng = np.random.default_rng(3)
        c = cfg()
        delta = rng.uniform(0.0, 2.0, size=10)
        inputs = [delta, np.asarray(1.0), np.asarray(0.2), np.asarray(0.0), np.array([1.1, 0.7])]
        build = _relaxed_loss(c, 2)
        tensors = [gt.Tensor(x, requires_grad=True) for x in inputs]
        tape = gt.Tape()
        tape.backward(build(tape, tensors))
        fd = central_fd(build, inputs)
        for t, g in zip(tensors, fd):
            denom = np.maximum(1.0, np.maximum(np.abs(t.grad), np.abs(g)))
            assert np.max(np.abs(t.grad - g) / denom) < 1e-3

    def test_depth0_passthrough(self):
        tape = gt.Tape()
        d = gt.Tensor(np.arange(4.0))
        out = spike.snn_forward_relaxed(
            tape, d, cfg(), 0, gt.Tensor(1.0), gt.Tensor(0.2), gt.Tensor(0.0), gt.Tensor(np.zeros(0))
        )
        assert out is d


class TestStandardize:
    def test_zero_sequence_stays_zero(self):
        tape = gt.Tape()
        out = spike.standardize_op(tape, gt.Tensor(np.zeros(9)))
        assert np.allclose(out.numpy(), 0.0)

    def test_zscore(self):
        rng = np.random.default_rng(8)
        x = rng.normal(2.0, 3.0, size=400)
        out = spike.standardize_op(gt.Tape(), gt.Tensor(x)).numpy()
        assert abs(out.mean()) < 1e-9
        assert abs(out.std() - 1.0) < 1e-3
