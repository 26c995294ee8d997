import numpy as np
import pytest

from helpers import three_cell_env
from safefield.clfcbf import LinearDynamics
from safefield.errors import (
    ConfigError,
    DimensionMismatch,
    GridMismatch,
    SafetyViolation,
)
from safefield.measurement import GridSpec, UncertaintyBounds, make_delta_pmf
from safefield.planning import build_graph, exit_map_to_goal, plan_from_start
from safefield.simulation import (
    SensorModel,
    SimConfig,
    Trajectory,
    _step,
    control_input,
    run_trajectory,
    sample_vector_field,
    save_field_csv,
)
from safefield.synthesis import CellController, GainBasis, synthesize_environment

pytestmark = pytest.mark.filterwarnings("ignore:bounds")

SPEC = GridSpec((16, 16), (6.0, 6.0))
BOUNDS = UncertaintyBounds(0.05, 0.2)


@pytest.fixture(scope="module")
def rig():
    env = three_cell_env()
    graph = build_graph(env)
    basis = GainBasis()
    dyn = LinearDynamics.single_integrator(2)
    ctrls = synthesize_environment(env, exit_map_to_goal(env, graph), graph,
                                   dyn, SPEC, BOUNDS, basis, 1.0, 100.0)
    plan = plan_from_start(env, graph, mode="stabilize")
    plan_p = plan_from_start(env, graph, mode="patrol")
    ctrls_p = synthesize_environment(
        env, {e.cell_id: e for e in plan_p.entries}, graph, dyn, SPEC, BOUNDS,
        basis, 1.0, 100.0, mode="patrol")
    return {"env": env, "plan": plan, "ctrls": ctrls,
            "plan_p": plan_p, "ctrls_p": ctrls_p,
            "by_id": {c.cell_id: c for c in ctrls}}


def zero_gain_controller(n_landmarks=2):
    gains = [[np.zeros((2, 2)) for _ in range(3)] for _ in range(n_landmarks)]
    landmarks = [[0.0, 0.0], [1.0, 0.0]][:n_landmarks]
    return CellController(
        cell_id=0, basis=GainBasis(), gains=gains, bias=[1.5, -2.0],
        margins=[0.1], kinds=["clf"], facets=[None], grid=SPEC, bounds=BOUNDS,
        alpha_v=1.0, alpha_h=100.0, landmark_ids=list(range(n_landmarks)),
        landmarks=landmarks, v=[0.0, 1.0], o=[0.0, 0.0], exit_face=None,
        v_floor=None, dynamics=LinearDynamics.single_integrator(2))


def test_sensor_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        SensorModel("lidar")
    with pytest.raises(ConfigError):
        SensorModel("gaussian", drift=-1.0)
    delta = SensorModel.from_dict(SensorModel().to_dict())
    assert delta.kind == "delta" and delta.to_dict() == {"kind": "delta"}
    g = SensorModel.from_dict(SensorModel("gaussian", 0.3, 0.05).to_dict())
    assert (g.kind, g.drift, g.variance) == ("gaussian", 0.3, 0.05)


def test_delta_sensor_matches_snap():
    sense = SensorModel().make(0)
    y = np.array([0.7, -1.1])
    assert np.array_equal(sense(SPEC, y).mass, make_delta_pmf(SPEC, y).mass)


def test_gaussian_sensor_is_seeded_and_normalized():
    model = SensorModel("gaussian", 0.5, 0.1)
    y = np.array([0.3, 0.4])
    a = model.make(7)(SPEC, y)
    b = model.make(7)(SPEC, y)
    assert np.array_equal(a.mass, b.mass)
    assert abs(a.mass.sum() - 1.0) <= 1e-12
    assert np.all(a.mass >= 0.0)


def test_sim_config_validation_and_roundtrip():
    for bad in (dict(dt=0.0), dict(goal_tol=-1.0), dict(integrator="verlet")):
        with pytest.raises(ConfigError):
            SimConfig(**bad)
    cfg = SimConfig(dt=0.02, integrator="euler", max_time=5.0, goal_tol=0.1,
                    sensor=SensorModel("gaussian", 1.0, 2.0), seed=3)
    assert SimConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_step_matches_closed_form():
    # x' = -x/2 + u settles at 2u: x(t) = 2u + (x0 - 2u) exp(-t/2)
    dyn = LinearDynamics(-0.5 * np.eye(2), np.eye(2))
    x0 = np.array([1.0, -2.0])
    u = np.array([0.25, 0.5])
    dt = 0.05
    exact = 2 * u + (x0 - 2 * u) * np.exp(-dt / 2.0)
    rk4 = _step(dyn, x0, u, dt, "rk4")
    assert float(np.max(np.abs(rk4 - exact))) <= 1e-9
    x = x0.copy()
    for _ in range(10):
        x = _step(dyn, x, u, dt / 10.0, "euler")
    euler_err = float(np.max(np.abs(x - exact)))
    assert euler_err <= 1e-3
    assert float(np.max(np.abs(rk4 - exact))) < euler_err


def test_control_input_zero_gains_returns_bias():
    ctrl = zero_gain_controller()
    rng = np.random.default_rng(2)
    for _ in range(5):
        pmfs = [make_delta_pmf(SPEC, rng.uniform(-2, 2, 2)) for _ in range(2)]
        assert np.array_equal(control_input(ctrl, pmfs), ctrl.bias)


def test_control_input_rejects_mismatches():
    ctrl = zero_gain_controller()
    pmf = make_delta_pmf(SPEC, np.zeros(2))
    with pytest.raises(DimensionMismatch):
        control_input(ctrl, [pmf])
    other = make_delta_pmf(GridSpec((8, 8), (6.0, 6.0)), np.zeros(2))
    with pytest.raises(GridMismatch):
        control_input(ctrl, [pmf, other])


def test_stabilize_run_reaches_goal(rig):
    cfg = SimConfig(dt=0.01, max_time=30.0, goal_tol=0.05)
    traj = run_trajectory(rig["env"], rig["plan"], rig["ctrls"], cfg)
    assert traj.reached
    assert traj.crossings >= 1
    assert min(traj.min_h) > 0.0
    assert np.linalg.norm(traj.x[-1] - rig["env"].goal) <= cfg.goal_tol


def test_gaussian_run_reaches_and_reproduces(rig):
    cfg = SimConfig(dt=0.01, max_time=30.0, goal_tol=0.05,
                    sensor=SensorModel("gaussian", 0.3, 0.05), seed=9)
    t1 = run_trajectory(rig["env"], rig["plan"], rig["ctrls"], cfg)
    t2 = run_trajectory(rig["env"], rig["plan"], rig["ctrls"], cfg)
    assert t1.reached
    assert np.array_equal(np.asarray(t1.x), np.asarray(t2.x))
    assert np.array_equal(np.asarray(t1.u), np.asarray(t2.u))


def test_patrol_run_keeps_crossing(rig):
    traj = run_trajectory(rig["env"], rig["plan_p"], rig["ctrls_p"],
                          SimConfig(dt=0.01, max_time=5.0), x0=[0.5, 0.5])
    assert traj.reached is None
    assert traj.crossings >= 5
    assert min(traj.min_h) > 0.0
    assert set(traj.cell_id) == {0, 1}


def test_start_outside_cells_is_a_violation(rig):
    with pytest.raises(SafetyViolation):
        run_trajectory(rig["env"], rig["plan"], rig["ctrls"],
                       SimConfig(max_time=1.0), x0=[-0.5, 0.5])


def test_trajectory_csv_roundtrip(tmp_path):
    traj = Trajectory("stabilize")
    traj.append(0.0, [0.25, 0.5], [1.0, -1.0], 0, 0.75, 0.25)
    traj.append(0.01, [0.26, 0.49], [0.9, -0.8], 1, 0.7, 0.24)
    path = tmp_path / "traj.csv"
    traj.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2,u1,u2,cell_id,V,min_h"
    data = np.genfromtxt(str(path), delimiter=",", skip_header=1)
    t, x, u, cid, V, mh = traj.arrays()
    assert np.array_equal(data[:, 0], t)
    assert np.array_equal(data[:, 1:3], x)
    assert np.array_equal(data[:, 3:5], u)
    assert np.array_equal(data[:, 5], cid.astype(float))


def test_field_samples_push_through_the_exit(rig):
    cell = rig["env"].cell_by_id(2)
    ctrl = rig["by_id"][2]
    arr = sample_vector_field(cell, ctrl, (8, 8))
    assert arr.shape[1] == 4
    assert arr.shape[0] > 0
    for row in arr:
        assert cell.contains(row[:2])
        assert float(ctrl.v @ row[2:]) < 0.0


def test_field_resolution_validation(rig):
    with pytest.raises(ConfigError):
        sample_vector_field(rig["env"].cell_by_id(2), rig["by_id"][2], (1, 8))


def test_field_csv_header(tmp_path, rig):
    arr = sample_vector_field(rig["env"].cell_by_id(2), rig["by_id"][2], (3, 3))
    path = tmp_path / "field.csv"
    save_field_csv(arr, 2, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,x2,u1,u2"
    assert len(lines) == 1 + arr.shape[0]
    data = np.genfromtxt(str(path), delimiter=",", skip_header=1)
    assert np.array_equal(np.atleast_2d(data), arr)
