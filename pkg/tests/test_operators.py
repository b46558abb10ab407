import numpy as np
import pytest

from noctr.autodiff import Tape
from noctr.nets import Layer, NetParams, evaluate, siren_init
from noctr.operators import (FiberBatch, ModeOperatorSpec, deeponet_apply, deeponet_op,
                             identity_apply, linear_apply, make_sensors)
from noctr.tensor import DenseTensor, mode_n_product
from oracles import deeponet_loops, mode_product_loops, net_layers


def test_make_sensors():
    np.testing.assert_array_equal(make_sensors(2), [0.0, 1.0])
    np.testing.assert_allclose(make_sensors(5), [0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        make_sensors(1)
    with pytest.raises(ValueError):
        make_sensors(0)


def test_identity_apply_on_grid():
    z = make_sensors(5)
    vals = np.random.default_rng(0).standard_normal((3, 5))
    fb = FiberBatch(np.zeros((3, 2)), z, vals, mode=2)
    np.testing.assert_array_equal(identity_apply(fb, z), vals)
    np.testing.assert_array_equal(identity_apply(fb, [0.5]), vals[:, [2]])


def test_identity_apply_off_grid_uses_source():
    fn = lambda p: np.sin(3 * p[:, 0]) + p[:, 1] ** 2
    base = np.array([[0.0, 0.2], [0.0, 0.9]])
    fb = FiberBatch.from_function(fn, base, 1, make_sensors(4))
    out = identity_apply(fb, [0.1, 0.37])
    expected = [[fn(np.array([[y, b[1]]]))[0] for y in (0.1, 0.37)] for b in base]
    np.testing.assert_allclose(out, expected, atol=1e-15)
    with pytest.raises(ValueError):
        identity_apply(FiberBatch(base, make_sensors(4), fb.values), [0.1])


def test_linear_apply_matches_mode_product():
    rng = np.random.default_rng(1)
    T = DenseTensor.from_array(rng.standard_normal((3, 4, 5)))
    U = rng.standard_normal((2, 5))
    out = linear_apply(U, T, 3)
    np.testing.assert_array_equal(out.data, mode_n_product(T, U, 3).data)
    assert np.max(np.abs(out.array - mode_product_loops(T.array, U, 3))) <= 1e-12


def test_operator_validation():
    b = siren_init((4, 3), seed=0)
    t = siren_init((1, 3), seed=1)
    with pytest.raises(ValueError):
        ModeOperatorSpec("deeponet", 1, branch=b, trunk=t, sensors=np.array([0, 0.5, 0.5, 1]))
    with pytest.raises(ValueError):
        ModeOperatorSpec("deeponet", 1, branch=b, trunk=t, sensors=make_sensors(5))
    with pytest.raises(ValueError):
        ModeOperatorSpec("deeponet", 1, branch=b, trunk=siren_init((1, 2), seed=1),
                         sensors=make_sensors(4))
    with pytest.raises(ValueError):
        ModeOperatorSpec("cubic", 1)


def _apply(spec, values, ys):
    fb = FiberBatch(np.zeros((values.shape[0], 1)), spec.sensors, values)
    return deeponet_apply(spec, fb, ys, Tape()).value


def test_deeponet_matches_loop_oracle():
    spec = deeponet_op(1, sensors=6, width=5, hidden=7, depth=3, seed=3)
    rng = np.random.default_rng(4)
    values = rng.uniform(size=(4, 6))
    ys = rng.uniform(size=9)
    expected = deeponet_loops(net_layers(spec.branch), net_layers(spec.trunk), values, ys)
    assert np.max(np.abs(_apply(spec, values, ys) - expected)) <= 1e-10


def _linear_net(W):
    return NetParams([Layer(np.asarray(W, dtype=float), np.zeros(np.shape(W)[1]), "none")])


def test_rank_one_closed_form():
    # branch(v) = <a, v>, trunk(y) = 2y  =>  F(v)(y) = 2 y <a, v>
    a = np.array([0.5, -1.0, 2.0])
    spec = ModeOperatorSpec("deeponet", 1, branch=_linear_net(a[:, None]),
                            trunk=_linear_net([[2.0]]), sensors=make_sensors(3))
    v = np.array([[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]])
    ys = np.array([0.0, 0.25, 1.0])
    np.testing.assert_allclose(_apply(spec, v, ys), 2 * ys[None, :] * (v @ a)[:, None], atol=1e-15)


def test_zero_branch_gives_zero():
    spec = deeponet_op(1, sensors=4, width=3, hidden=5, seed=0)
    last = spec.branch.layers[-1]
    last.weight[:] = 0.0
    last.bias[:] = 0.0
    out = _apply(spec, np.random.default_rng(0).uniform(size=(3, 4)), [0.1, 0.8])
    np.testing.assert_array_equal(out, 0.0)


def test_linear_in_trunk_scaling():
    spec = deeponet_op(1, sensors=4, width=3, hidden=5, seed=1)
    v = np.random.default_rng(2).uniform(size=(2, 4))
    ys = [0.2, 0.6]
    before = _apply(spec, v, ys)
    spec.trunk.layers[-1].weight *= -3.0
    spec.trunk.layers[-1].bias *= -3.0
    np.testing.assert_allclose(_apply(spec, v, ys), -3.0 * before, rtol=1e-12, atol=1e-14)


def test_depends_only_on_sensor_values():
    spec = deeponet_op(1, sensors=5, width=4, hidden=6, seed=2)
    f = lambda p: np.sin(4 * p[:, 0])
    g = lambda p: np.sin(4 * p[:, 0]) + np.sin(np.pi * 4 * p[:, 0]) ** 2  # zero at every sensor
    base = np.zeros((1, 1))
    fa = FiberBatch.from_function(f, base, 1, spec.sensors)
    fb = FiberBatch.from_function(g, base, 1, spec.sensors)
    np.testing.assert_allclose(fa.values, fb.values, atol=1e-14)
    ys = [0.1, 0.33]
    np.testing.assert_allclose(deeponet_apply(spec, fa, ys, Tape()).value,
                               deeponet_apply(spec, fb, ys, Tape()).value, atol=1e-13)


def test_merged_branch_equals_separate_nets():
    spec = deeponet_op(1, sensors=4, width=3, hidden=6, depth=1, seed=5)
    v = np.random.default_rng(6).uniform(size=(3, 4))
    ys = np.array([0.0, 0.4, 1.0])
    # with a single affine layer each output p is its own scalar net
    t = evaluate(spec.trunk, ys[:, None])
    total = np.zeros((3, 3))
    for p in range(3):
        Wp = spec.branch.layers[0].weight[:, [p]]
        bp = spec.branch.layers[0].bias[[p]]
        bnet = NetParams([Layer(Wp, bp, "none")])
        total += evaluate(bnet, v) * t[:, p][None, :]
    assert np.max(np.abs(_apply(spec, v, ys) - total)) <= 1e-12


def test_wrong_fiber_width():
    spec = deeponet_op(1, sensors=4, width=3, hidden=5, seed=0)
    with pytest.raises(ValueError):
        deeponet_apply(spec, FiberBatch(np.zeros((1, 1)), make_sensors(5), np.zeros((1, 5))),
                       [0.5], Tape())


def test_parameters_round_trip():
    spec = deeponet_op(2, sensors=4, width=3, hidden=5, seed=0)
    params = [p * 2 for p in spec.parameters()]
    spec.set_parameters(params)
    for a, b in zip(spec.parameters(), params):
        assert a is b
