"""Closed-loop simulation: integrate the dynamics under the sensed-PMF
feedback, switch controllers along the plan when the exit face is crossed,
and record the stability/safety values for auditing."""

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    GridMismatch,
    LeftFreeSpace,
    SafetyViolation,
)
from .measurement import blur_pmf, make_delta_pmf

SAFETY_TOL = 1e-6


class SensorModel:
    """delta: the exact offset PMF. gaussian: the delta PMF shifted by a
    random-direction drift of fixed magnitude and blurred by a truncated
    isotropic Gaussian, renormalized on the grid."""

    def __init__(self, kind="delta", drift=0.0, variance=0.0):
        kind = str(kind).lower()
        if kind not in ("delta", "gaussian"):
            raise ConfigError("unknown sensor kind %r" % kind, field="sensor.kind")
        self.kind = kind
        self.drift = float(drift)
        self.variance = float(variance)
        if self.kind == "gaussian" and (self.drift < 0 or self.variance < 0):
            raise ConfigError("drift and variance must be non-negative",
                              field="sensor")

    def make(self, seed):
        """Seeded sensing closure (spec, true offset) -> PmfGrid."""
        if self.kind == "delta":
            return lambda spec, y: make_delta_pmf(spec, y)
        rng = np.random.default_rng(seed)

        def sense(spec, y):
            pmf = make_delta_pmf(spec, y)
            direction = rng.standard_normal(spec.dim)
            norm = np.linalg.norm(direction)
            if norm < 1e-12:
                direction = np.zeros(spec.dim)
                direction[0] = 1.0
                norm = 1.0
            return blur_pmf(pmf, self.drift * direction / norm, self.variance)

        return sense

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "gaussian":
            out["drift"] = self.drift
            out["variance"] = self.variance
        return out

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        return cls(d.get("kind", "delta"), d.get("drift", 0.0),
                   d.get("variance", 0.0))


class SimConfig:
    def __init__(self, dt=0.01, integrator="rk4", max_time=600.0, goal_tol=0.05,
                 sensor=None, seed=0):
        self.dt = float(dt)
        self.integrator = str(integrator).lower()
        self.max_time = float(max_time)
        self.goal_tol = float(goal_tol)
        self.sensor = sensor if sensor is not None else SensorModel()
        self.seed = int(seed)
        if self.dt <= 0:
            raise ConfigError("dt must be positive", field="sim.dt")
        if self.goal_tol <= 0:
            raise ConfigError("goal_tol must be positive", field="sim.goal_tol")
        if self.integrator not in ("rk4", "euler"):
            raise ConfigError("integrator must be RK4 or Euler",
                              field="sim.integrator")

    def to_dict(self):
        return {
            "dt": self.dt,
            "integrator": self.integrator,
            "max_time": self.max_time,
            "goal_tol": self.goal_tol,
            "sensor": self.sensor.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        return cls(
            dt=d.get("dt", 0.01),
            integrator=d.get("integrator", "rk4"),
            max_time=d.get("max_time", 600.0),
            goal_tol=d.get("goal_tol", 0.05),
            sensor=SensorModel.from_dict(d.get("sensor")),
            seed=d.get("seed", 0),
        )


class Trajectory:
    """Row-per-step record; the final state is appended with the control the
    active cell would apply there."""

    def __init__(self, mode):
        self.mode = mode
        self.t = []
        self.x = []
        self.u = []
        self.cell_id = []
        self.V = []
        self.min_h = []
        self.reached = None
        self.crossings = 0

    def append(self, t, x, u, cell_id, V, min_h):
        self.t.append(float(t))
        self.x.append(np.asarray(x, dtype=float).copy())
        self.u.append(np.asarray(u, dtype=float).copy())
        self.cell_id.append(int(cell_id))
        self.V.append(float(V))
        self.min_h.append(float(min_h))

    def arrays(self):
        return (np.asarray(self.t), np.asarray(self.x), np.asarray(self.u),
                np.asarray(self.cell_id), np.asarray(self.V),
                np.asarray(self.min_h))

    def to_csv(self, path):
        t, x, u, cid, V, mh = self.arrays()
        d = x.shape[1] if x.size else 0
        n_u = u.shape[1] if u.size else 0
        header = (
            ["t"]
            + ["x%d" % (i + 1) for i in range(d)]
            + ["u%d" % (i + 1) for i in range(n_u)]
            + ["cell_id", "V", "min_h"]
        )
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(t.shape[0]):
                cols = [repr(float(t[i]))]
                cols += [repr(float(v)) for v in x[i]]
                cols += [repr(float(v)) for v in u[i]]
                cols += [str(cid[i]), repr(float(V[i])), repr(float(mh[i]))]
                fh.write(",".join(cols) + "\n")


def control_input(controller, pmfs):
    """u = sum over landmarks of K_i (R_i P) plus the bias; the feature maps
    are evaluated on the PMFs' own grid, so a finer grid than the one used
    for synthesis is resampled analytically."""
    if len(pmfs) != len(controller.landmarks):
        raise DimensionMismatch(
            "controller expects %d PMFs, got %d"
            % (len(controller.landmarks), len(pmfs))
        )
    spec = pmfs[0].spec
    for p in pmfs[1:]:
        if p.spec != spec:
            raise GridMismatch("all PMFs must share one grid spec")
    mats = controller.control_matrices(spec)
    u = controller.bias.copy()
    for mat, pmf in zip(mats, pmfs):
        u = u + mat @ pmf.vector
    return u


def _barrier_values(controller, cell, x):
    facets = [f for f in controller.facets if f is not None]
    if not facets:
        return np.inf, None
    vals = -(cell.body.A[facets] @ x + cell.body.b[facets])
    j = int(np.argmin(vals))
    return float(vals[j]), facets[j]


def _step(dynamics, x, u, dt, integrator):
    def f(state):
        return dynamics.A @ state + dynamics.B @ u

    if integrator == "euler":
        return x + dt * f(x)
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run_trajectory(env, plan, controllers, config, x0=None):
    """Integrate under the plan; u is recomputed every step from freshly
    sensed PMFs (zero-order hold within a step).

    Patrol mode steps a pointer through the plan entries, advancing when
    the state crosses the active exit face into the successor cell.
    Stabilize mode always drives with the controller of the cell that
    contains the state: crossing an exit face hands over to the cell on
    the far side, and drifting out through a shared non-exit face (legal,
    since shared faces carry no barrier) hands over to whichever cell the
    state landed in, whose controller funnels it back toward the goal.
    """
    ctrl_by_id = {c.cell_id: c for c in controllers}
    sense = config.sensor.make(config.seed)
    x = np.asarray(env.start if x0 is None else x0, dtype=float).copy()
    traj = Trajectory(plan.mode)
    active = 0
    n_entries = len(plan.entries)
    next_on_plan = {plan.entries[i].cell_id: plan.entries[i + 1].cell_id
                    for i in range(n_entries - 1)}
    active_id = plan.entries[0].cell_id
    if not env.cell_by_id(active_id).contains(x):
        inside = env.cells_containing(x)
        if inside:
            active_id = min(c.id for c in inside)
    t = 0.0
    n_steps = int(round(config.max_time / config.dt))

    def observe(ctrl):
        return [sense(ctrl.grid, lm - x) for lm in ctrl.landmarks]

    def handover(ids):
        nxt = next_on_plan.get(active_id)
        return nxt if nxt in ids else min(ids)

    for _ in range(n_steps + 1):
        if plan.mode == "patrol":
            active_id = plan.entries[active].cell_id
        ctrl = ctrl_by_id.get(active_id)
        if ctrl is None:
            raise ConfigError("no controller for cell %d" % active_id,
                              field="controllers")
        cell = env.cell_by_id(active_id)
        u = control_input(ctrl, observe(ctrl))
        min_h, facet = _barrier_values(ctrl, cell, x)
        traj.append(t, x, u, active_id, ctrl.progress(x), min_h)
        if min_h < -SAFETY_TOL:
            raise SafetyViolation(
                "barrier %s of cell %d reached %.3g at t=%.3f"
                % (facet, active_id, min_h, t),
                t=t, x=x.copy(), cell_id=active_id, facet=facet,
                trajectory=traj,
            )
        if plan.mode == "stabilize" and plan.goal is not None:
            if np.linalg.norm(x - plan.goal) <= config.goal_tol:
                traj.reached = True
                return traj
        if t >= config.max_time - 1e-12:
            break
        x = _step(ctrl.dynamics, x, u, config.dt, config.integrator)
        t += config.dt
        inside = env.cells_containing(x)
        if not inside:
            raise LeftFreeSpace(
                "state %s left every cell at t=%.3f" % (x.tolist(), t),
                t=t, x=x.copy(), trajectory=traj,
            )
        if plan.mode == "patrol":
            if ctrl.progress(x) <= 0.0:
                active = (active + 1) % n_entries
                traj.crossings += 1
            continue
        ids = {c.id for c in inside}
        if (ctrl.exit_face is not None and ctrl.progress(x) <= 0.0
                and ids - {active_id}):
            active_id = handover(ids - {active_id})
            traj.crossings += 1
        elif active_id not in ids:
            # one integration step can overshoot a barrier-free shared
            # face by at most |u| dt; only a deeper excursion counts as
            # having left the cell
            depth = float(np.max(cell.body.values(x)))
            if depth > np.linalg.norm(u) * config.dt + 1e-9:
                active_id = handover(ids)
    traj.reached = False if plan.mode == "stabilize" else None
    return traj


def sample_vector_field(cell, controller, resolution, sensor=None, seed=0):
    """Control inputs on an in-cell lattice; rows are (x, u)."""
    res = np.broadcast_to(np.asarray(resolution, dtype=int),
                          (cell.body.dim,)).copy()
    if np.any(res < 2):
        raise ConfigError("resolution must be at least 2 per axis",
                          field="field.resolution")
    sense = (sensor or SensorModel()).make(seed)
    verts = cell.vertices
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    axes = [np.linspace(lo[a], hi[a], res[a]) for a in range(len(res))]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    rows = []
    for x in points:
        if not cell.contains(x):
            continue
        pmfs = [sense(controller.grid, lm - x) for lm in controller.landmarks]
        rows.append(np.concatenate([x, control_input(controller, pmfs)]))
    if not rows:
        return np.zeros((0, 2 * cell.body.dim))
    return np.asarray(rows)


def save_field_csv(arr, d, path):
    """Vector-field CSV: x1..xd then u1..u_{n_u}."""
    arr = np.asarray(arr, dtype=float)
    n_u = arr.shape[1] - d if arr.size else d
    header = ["x%d" % (i + 1) for i in range(d)]
    header += ["u%d" % (i + 1) for i in range(n_u)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
