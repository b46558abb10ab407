import numpy as np
import pytest

from noctr import autodiff as ad
from noctr.autodiff import grad_check
from noctr.model import (CtrModel, build_eval_plan, ctr_eval, ctr_values,
                         tucker_baseline_eval)
from noctr.nets import evaluate, siren_init
from noctr.operators import deeponet_op, identity_op, linear_op
from noctr.tensor import CoordinateSet, DenseTensor, coordinate_grid
from oracles import deeponet_loops, net_layers, tucker_loops


def core(n, width=8, seed=0, omega0=30.0):
    return siren_init((n, width, width, 1), omega0=omega0, seed=seed)


def test_identity_composition_is_core():
    net = core(3)
    model = CtrModel(net, [identity_op(k) for k in (1, 2, 3)])
    q = np.random.default_rng(0).uniform(size=(20, 3))
    assert np.array_equal(ctr_eval(model, q).value, evaluate(net, q)[:, 0])
    grid = coordinate_grid((3, 4, 2))
    assert np.array_equal(ctr_eval(model, grid).value, evaluate(net, grid.points)[:, 0])


def test_model_validation():
    with pytest.raises(ValueError):
        CtrModel(core(2), [identity_op(1)])
    with pytest.raises(ValueError):
        CtrModel(core(2), [identity_op(2), identity_op(1)])
    with pytest.raises(ValueError):
        CtrModel(siren_init((2, 4, 2)), [identity_op(1), identity_op(2)])


def test_scattered_plan_size():
    model = CtrModel(core(2), [identity_op(1), deeponet_op(2, sensors=5, width=3, hidden=4, seed=1)])
    q = np.random.default_rng(1).uniform(size=(10, 2))
    plan = build_eval_plan(model, q)
    assert plan.kind == "scattered" and plan.core_evaluations <= 50


def test_scattered_plan_shares_identity_coordinates():
    model = CtrModel(core(2), [identity_op(1), deeponet_op(2, sensors=5, width=3, hidden=4, seed=1)])
    q = np.array([[0.2, 0.1], [0.2, 0.7], [0.6, 0.3]])
    assert build_eval_plan(model, q).core_evaluations == 10


def test_grid_plan_lattice():
    model = CtrModel(core(2), [identity_op(1), deeponet_op(2, sensors=5, width=3, hidden=4, seed=1)])
    plan = build_eval_plan(model, coordinate_grid((4, 4)))
    assert plan.kind == "grid" and plan.lattice_shape == (4, 5) and plan.core_evaluations == 20


def _nested_oracle(model, ys):
    """Two-mode composition written out point by point."""
    G = model.core
    op1, op2 = model.operators
    z1, z2 = op1.sensors, op2.sensors
    out = []
    for y1, y2 in ys:
        w = []
        for b in z2:
            fiber = evaluate(G, np.stack([z1, np.full_like(z1, b)], axis=1))[:, 0]
            w.append(deeponet_loops(net_layers(op1.branch), net_layers(op1.trunk),
                                    fiber[None, :], [y1])[0, 0])
        out.append(deeponet_loops(net_layers(op2.branch), net_layers(op2.trunk),
                                  np.array(w)[None, :], [y2])[0, 0])
    return np.array(out)


def test_two_mode_composition_oracle():
    model = CtrModel(core(2, seed=2), [deeponet_op(1, sensors=4, width=3, hidden=5, seed=3),
                                       deeponet_op(2, sensors=5, width=4, hidden=5, seed=4)])
    q = np.random.default_rng(5).uniform(size=(6, 2))
    expected = _nested_oracle(model, q)
    assert np.max(np.abs(ctr_eval(model, q).value - expected)) <= 1e-10
    grid = coordinate_grid((3, 4))
    assert np.max(np.abs(ctr_eval(model, grid).value - _nested_oracle(model, grid.points))) <= 1e-10


def test_grid_and_scattered_agree():
    model = CtrModel(core(3, seed=6), [identity_op(1), deeponet_op(2, 4, 3, 5, seed=7),
                                       deeponet_op(3, 3, 2, 4, seed=8)])
    grid = coordinate_grid((3, 4, 5))
    np.testing.assert_allclose(ctr_eval(model, grid).value,
                               ctr_eval(model, CoordinateSet(grid.points)).value, atol=1e-12)


def test_linear_operators_equal_tucker():
    shape_in, shape_out = (3, 4, 2), (5, 3, 4)
    net = core(3, seed=9)
    rng = np.random.default_rng(10)
    factors = [rng.standard_normal((J, I)) for J, I in zip(shape_out, shape_in)]
    model = CtrModel(net, [linear_op(k + 1, U) for k, U in enumerate(factors)])
    G = evaluate(net, coordinate_grid(shape_in).points).reshape(shape_in)
    expected = tucker_baseline_eval(DenseTensor.from_array(G), factors).array
    out = ctr_eval(model, coordinate_grid(shape_out)).value.reshape(shape_out)
    assert np.max(np.abs(out - expected)) <= 1e-10
    pts = coordinate_grid(shape_out).points[[0, 7, 30, 59]]
    assert np.max(np.abs(ctr_eval(model, pts).value - expected.reshape(-1)[[0, 7, 30, 59]])) <= 1e-10


def test_linear_off_grid_rejected():
    model = CtrModel(core(2), [identity_op(1), linear_op(2, np.ones((3, 4)))])
    with pytest.raises(ValueError):
        ctr_eval(model, np.array([[0.0, 0.3]]))


def test_tucker_matches_loops():
    rng = np.random.default_rng(11)
    G = rng.standard_normal((2, 3, 2))
    factors = [rng.standard_normal((3, 2)), rng.standard_normal((2, 3)), rng.standard_normal((4, 2))]
    out = tucker_baseline_eval(DenseTensor.from_array(G), factors).array
    assert np.max(np.abs(out - tucker_loops(G, factors))) <= 1e-12
    with pytest.raises(ValueError):
        tucker_baseline_eval(DenseTensor.from_array(G), factors[:2])


def test_ctr_values_chunked():
    model = CtrModel(core(2, seed=12), [identity_op(1), deeponet_op(2, 4, 3, 5, seed=13)])
    q = np.random.default_rng(14).uniform(size=(50, 2))
    np.testing.assert_allclose(ctr_values(model, q, chunk=16), ctr_eval(model, q).value, atol=1e-12)


def test_ctr_eval_mse_grad_check():
    model = CtrModel(siren_init((2, 8, 8, 1), omega0=30, seed=15),
                     [identity_op(1), deeponet_op(2, sensors=4, width=4, hidden=8, depth=2, seed=16)])
    rng = np.random.default_rng(17)
    q = rng.uniform(size=(6, 2))
    target = rng.uniform(size=6)

    def loss(tape, leaves):
        model.set_parameters([l.value for l in leaves])
        r = ad.sub(ctr_eval(model, q, tape), target)
        return ad.mean(ad.square(r))

    rep = grad_check(loss, model.parameters(), h=1e-5, tol=1e-4)
    assert rep.passed, rep


def test_parameters_order_and_copy():
    model = CtrModel(core(2), [identity_op(1), linear_op(2, np.eye(3))])
    params = model.parameters()
    assert params[-1] is model.operators[1].matrix
    assert model.num_parameters() == sum(p.size for p in params)
    twin = model.copy()
    twin.operators[1].matrix[0, 0] = 5.0
    assert model.operators[1].matrix[0, 0] == 1.0
    with pytest.raises(ValueError):
        model.set_parameters(params + [np.zeros(1)])
