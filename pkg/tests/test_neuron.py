"""Integrate-and-fire dynamics and surrogate gradients."""

import math

import numpy as np
import pytest

from spikecoding.neuron import (IfConfig, IfNeuron, SurrogateSpec, heaviside,
                                if_step, smooth_spike, surrogate_grad)
from spikecoding.tensor import Tape, Tensor


# -- surrogate shapes --------------------------------------------------------


def test_sigmoid_surrogate_peaks_at_quarter_alpha():
    spec = SurrogateSpec("sigmoid", 1.0)
    assert float(surrogate_grad(0.0, spec)) == pytest.approx(0.25, abs=1e-15)
    spec4 = SurrogateSpec("sigmoid", 4.0)
    assert float(surrogate_grad(0.0, spec4)) == pytest.approx(1.0, abs=1e-15)


def test_arctan_surrogate_peaks_at_half_alpha():
    spec = SurrogateSpec("arctan", 2.0)
    assert float(surrogate_grad(0.0, spec)) == pytest.approx(1.0, abs=1e-15)
    spec1 = SurrogateSpec("arctan", 1.0)
    assert float(surrogate_grad(0.0, spec1)) == pytest.approx(0.5, abs=1e-15)
    # closed form: alpha / (2 (1 + (pi/2 alpha x)^2))
    x = 0.7
    u = 0.5 * math.pi * 2.0 * x
    assert float(surrogate_grad(x, spec)) == pytest.approx(
        2.0 / (2.0 * (1.0 + u * u)), rel=1e-15)


@pytest.mark.parametrize("family,alpha", [("sigmoid", 1.0), ("sigmoid", 3.0),
                                          ("arctan", 2.0), ("arctan", 0.5)])
def test_surrogates_are_even_functions(family, alpha):
    spec = SurrogateSpec(family, alpha)
    xs = np.linspace(-20.0, 20.0, 401)
    f_pos = surrogate_grad(xs, spec)
    f_neg = surrogate_grad(-xs, spec)
    np.testing.assert_allclose(f_pos, f_neg, rtol=0, atol=1e-12)


def test_surrogates_decay_and_stay_positive():
    for spec in (SurrogateSpec("sigmoid", 2.0), SurrogateSpec("arctan", 2.0)):
        vals = surrogate_grad(np.array([0.0, 0.5, 1.0, 2.0, 5.0]), spec)
        assert np.all(vals > 0)
        assert np.all(np.diff(vals) < 0)
    # no overflow far from threshold (sigmoid tail underflows to 0, finitely)
    far = surrogate_grad(np.array([-1e4, 1e4]), SurrogateSpec("sigmoid", 2.0))
    assert np.all(np.isfinite(far))
    assert np.all(far >= 0)


@pytest.mark.parametrize("family,alpha", [("sigmoid", 1.0), ("sigmoid", 2.5),
                                          ("arctan", 2.0), ("arctan", 1.0)])
def test_smooth_forward_derivative_is_the_surrogate(family, alpha):
    spec = SurrogateSpec(family, alpha)
    xs = np.linspace(-3.0, 3.0, 25)
    eps = 1e-6
    fd = (smooth_spike(xs + eps, spec) - smooth_spike(xs - eps, spec)) / (2 * eps)
    np.testing.assert_allclose(fd, surrogate_grad(xs, spec),
                               rtol=1e-8, atol=1e-9)


def test_smooth_forward_range_and_midpoint():
    for spec in (SurrogateSpec("sigmoid", 2.0), SurrogateSpec("arctan", 2.0)):
        assert float(smooth_spike(0.0, spec)) == pytest.approx(0.5, abs=1e-15)
        vals = smooth_spike(np.array([-50.0, 50.0]), spec)
        assert 0.0 <= vals[0] < 0.01 and 0.99 < vals[1] <= 1.0


def test_surrogate_spec_validation():
    with pytest.raises(ValueError):
        SurrogateSpec("nope", 1.0)
    with pytest.raises(ValueError):
        SurrogateSpec("sigmoid", 0.0)
    with pytest.raises(ValueError):
        SurrogateSpec("arctan", -1.0)


def test_heaviside_fires_at_the_boundary():
    out = heaviside(np.array([0.99, 1.0, 1.01]), 1.0)
    np.testing.assert_array_equal(out, [0.0, 1.0, 1.0])
    out_t = heaviside(Tensor(np.array([0.5, 2.0])), 1.0)
    np.testing.assert_array_equal(out_t.data, [0.0, 1.0])


# -- integrate-and-fire dynamics ---------------------------------------------


def test_constant_drive_fires_every_third_step():
    # v_th = 1, drive 0.4: v walks 0.4, 0.8, 1.2 -> fire, hard reset to 0
    neuron = IfNeuron(IfConfig(v_threshold=1.0, v_reset=0.0))
    drive = Tensor(np.full((1,), 0.4))
    fired = [float(neuron.step(drive).data[0]) for _ in range(9)]
    assert fired == [0, 0, 1, 0, 0, 1, 0, 0, 1]
    assert float(neuron.v.data[0]) == pytest.approx(0.0, abs=0)


def test_reset_is_exact():
    # after a spike the membrane equals v_reset bit for bit
    cfg = IfConfig(v_threshold=1.0, v_reset=0.3)
    v = Tensor(np.array([0.9]))
    spikes, v_next = if_step(v, Tensor(np.array([0.35])), cfg)
    assert float(spikes.data[0]) == 1.0
    assert float(v_next.data[0]) == 0.3  # exactly cfg.v_reset


def test_subthreshold_integration_accumulates():
    cfg = IfConfig(v_threshold=10.0)
    v = Tensor(np.zeros(1))
    for k in range(5):
        spikes, v = if_step(v, Tensor(np.array([1.25])), cfg)
        assert float(spikes.data[0]) == 0.0
    assert float(v.data[0]) == pytest.approx(6.25, rel=1e-15)


def test_threshold_boundary_fires():
    cfg = IfConfig(v_threshold=1.0)
    spikes, v_next = if_step(Tensor(np.array([0.5])),
                             Tensor(np.array([0.5])), cfg)
    assert float(spikes.data[0]) == 1.0
    assert float(v_next.data[0]) == 0.0


def test_if_step_validation():
    cfg = IfConfig()
    with pytest.raises(TypeError):
        if_step(np.zeros(2), Tensor(np.zeros(2)), cfg)
    with pytest.raises(ValueError):
        if_step(Tensor(np.zeros(2)), Tensor(np.zeros(3)), cfg)


def test_neuron_reset_clears_state():
    neuron = IfNeuron()
    neuron.step(Tensor(np.full((2, 2), 0.6)))
    assert neuron.v is not None
    neuron.reset()
    assert neuron.v is None


# -- gradients through the step ----------------------------------------------


def test_if_step_backward_matches_finite_differences_in_smooth_mode():
    spec = SurrogateSpec("sigmoid", 2.0)
    cfg = IfConfig(v_threshold=1.0, v_reset=0.0, surrogate=spec, smooth=True)
    gen = np.random.default_rng(31)
    drive1 = gen.uniform(0.0, 1.2, size=5)
    drive2 = gen.uniform(0.0, 1.2, size=5)
    w1 = gen.standard_normal(5)
    w2 = gen.standard_normal(5)

    def run(d1, d2):
        v = Tensor(np.zeros(5))
        s1, v = if_step(v, d1, cfg)
        s2, v = if_step(v, d2, cfg)
        return (s1 * Tensor(w1)).sum() + (s2 * Tensor(w2)).sum() + \
            (v * Tensor(np.ones(5) * 0.37)).sum()

    t1 = Tensor(drive1.copy(), requires_grad=True)
    t2 = Tensor(drive2.copy(), requires_grad=True)
    tape = Tape()
    with tape:
        loss = run(t1, t2)
    tape.backward(loss)

    eps = 1e-6
    for tensor, base in ((t1, drive1), (t2, drive2)):
        for i in range(5):
            bumped = base.copy()
            bumped[i] = base[i] + eps
            hi = float(run(Tensor(bumped if tensor is t1 else drive1),
                           Tensor(bumped if tensor is t2 else drive2)).data)
            bumped[i] = base[i] - eps
            lo = float(run(Tensor(bumped if tensor is t1 else drive1),
                           Tensor(bumped if tensor is t2 else drive2)).data)
            fd = (hi - lo) / (2 * eps)
            assert float(tensor.grad[i]) == pytest.approx(fd, rel=1e-5,
                                                          abs=1e-8)


def test_hard_mode_backward_uses_surrogate():
    # forward spikes are a step function, but the recorded adjoint must
    # pass the surrogate derivative back to the drive
    spec = SurrogateSpec("arctan", 2.0)
    cfg = IfConfig(v_threshold=1.0, surrogate=spec)
    drive = Tensor(np.array([0.9]), requires_grad=True)
    v = Tensor(np.zeros(1))
    tape = Tape()
    with tape:
        spikes, _ = if_step(v, drive, cfg)
        loss = spikes.sum()
    tape.backward(loss)
    want = float(surrogate_grad(np.array([-0.1]), spec)[0])
    assert float(drive.grad[0]) == pytest.approx(want, rel=1e-12)


def test_membrane_path_gradient_flows_through_time():
    # two subthreshold steps: d(v2)/d(drive1) = 1 with no spikes anywhere,
    # modulo the surrogate tail in the reset term, which the arctan
    # family shrinks to ~1e-9 at this threshold distance
    cfg = IfConfig(v_threshold=1e4)
    drive = Tensor(np.array([0.5]), requires_grad=True)
    v = Tensor(np.zeros(1))
    tape = Tape()
    with tape:
        _, v = if_step(v, drive, cfg)
        _, v = if_step(v, Tensor(np.array([0.25])), cfg)
        loss = v.sum()
    tape.backward(loss)
    assert float(drive.grad[0]) == pytest.approx(1.0, abs=1e-8)
