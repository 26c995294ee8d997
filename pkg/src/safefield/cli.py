"""Command-line front end.

Subcommands: synth (controllers.json), verify (report.json, exit 1 on a
failed certificate), simulate (trajectory CSVs, exit 1 on a safety
violation), field (vector-field CSVs), pipeline (all four in order).
Outputs are deterministic for a fixed config and seed.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import planning, simulation, synthesis, verification
from .clfcbf import LinearDynamics
from .errors import (
    ConfigError,
    LeftFreeSpace,
    NumericalFailure,
    SafeFieldError,
    SafetyViolation,
    SolverFailure,
    SynthesisInfeasible,
    VerificationFailed,
)
from .geometry import environment_from_dict
from .measurement import GridSpec, UncertaintyBounds
from .simulation import SensorModel, SimConfig
from .synthesis import GainBasis

log = logging.getLogger("safefield")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


class RunConfig:
    """Validated run description loaded from a JSON file."""

    def __init__(self, raw, base_dir=".", path=None):
        self.path = path
        env_ref = raw.get("environment")
        if env_ref is None:
            raise ConfigError("missing environment", path=path, field="environment")
        if isinstance(env_ref, str):
            env_path = os.path.join(base_dir, env_ref)
            if not os.path.exists(env_path):
                raise ConfigError("environment file not found",
                                  path=env_path, field="environment")
            with open(env_path) as fh:
                env_ref = _load_json(fh, env_path)
        self.environment = environment_from_dict(env_ref)

        self.alpha_v = float(raw.get("alpha_v", 1.0))
        self.alpha_h = float(raw.get("alpha_h", 100.0))
        if self.alpha_v <= 0 or self.alpha_h <= 0:
            raise ConfigError("alpha_v and alpha_h must be positive",
                              path=path, field="alpha_v")
        self.epsilon = float(raw.get("epsilon", 4.0))
        self.sigma_m = float(raw.get("sigma_m", 16.0))

        grid = raw.get("grid")
        if not isinstance(grid, dict) or "n" not in grid or "width" not in grid:
            raise ConfigError("grid must give n and width",
                              path=path, field="grid")
        self.grid = GridSpec(tuple(grid["n"]), tuple(grid["width"]))

        self.basis = GainBasis(tuple(raw.get("basis", GainBasis.KNOWN)))
        self.omega = raw.get("omega")
        self.delta_cap = raw.get("delta_cap")
        self.mode = str(raw.get("mode", "stabilize")).lower()
        if self.mode not in ("stabilize", "patrol"):
            raise ConfigError("mode must be stabilize or patrol",
                              path=path, field="mode")
        self.sim = SimConfig.from_dict(raw.get("sim"))
        starts = raw.get("starts")
        if starts is None:
            starts = [np.asarray(self.environment.start)]
        self.starts = [np.asarray(s, dtype=float) for s in starts]
        field = raw.get("field") or {}
        self.field_resolution = tuple(field.get("resolution", (12, 12)))
        self.field_cells = field.get("cells")
        self.verify_count = int(raw.get("verify_count", 200))
        self.out = raw.get("out", "out")
        self.seed = int(raw.get("seed", 0))

    @property
    def bounds(self):
        return UncertaintyBounds(self.epsilon, self.sigma_m)


def _load_json(fh, path):
    try:
        return json.load(fh)
    except ValueError as exc:
        raise ConfigError("invalid JSON: %s" % exc, path=path)


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError("config file not found", path=path, field="config")
    with open(path) as fh:
        raw = _load_json(fh, path)
    return RunConfig(raw, base_dir=os.path.dirname(os.path.abspath(path)),
                     path=path)


def _apply_overrides(cfg, args):
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.sim.seed = args.seed
    if args.eps is not None:
        cfg.epsilon = args.eps
    if args.sigma is not None:
        cfg.sigma_m = args.sigma
    if args.sensor is not None:
        cfg.sim.sensor = SensorModel(args.sensor, cfg.sim.sensor.drift,
                                     cfg.sim.sensor.variance)


def _parse_cells(arg):
    if arg is None:
        return None
    try:
        return [int(tok) for tok in arg.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError("cells must be a comma-separated id list",
                          field="cells")


def _entries(cfg, graph):
    env = cfg.environment
    if cfg.mode == "patrol":
        plan = planning.plan_from_start(env, graph, mode="patrol")
        return {e.cell_id: e for e in plan.entries}
    return planning.exit_map_to_goal(env, graph)


def _controllers_path(cfg):
    return os.path.join(cfg.out, "controllers.json")


def _load_controllers(cfg):
    path = _controllers_path(cfg)
    if not os.path.exists(path):
        raise ConfigError("controllers.json not found; run synth first",
                          path=path, field="controllers")
    return synthesis.load_controllers(path)


def cmd_synth(cfg, cells=None):
    env = cfg.environment
    graph = planning.build_graph(env)
    entries = _entries(cfg, graph)
    if cells is not None:
        missing = [c for c in cells if c not in entries]
        if missing:
            raise ConfigError("unknown cell ids %s" % missing, field="cells")
        entries = {c: entries[c] for c in cells}
    dynamics = LinearDynamics.single_integrator(env.dimension)
    controllers = synthesis.synthesize_environment(
        env, entries, graph, dynamics, cfg.grid, cfg.bounds, cfg.basis,
        cfg.alpha_v, cfg.alpha_h, omega=cfg.omega, caps=cfg.delta_cap,
        mode=cfg.mode,
    )
    os.makedirs(cfg.out, exist_ok=True)
    synthesis.save_controllers(controllers, _controllers_path(cfg))
    for ctrl in controllers:
        print("cell %d: %s, min margin %.6g, max |u| %.6g"
              % (ctrl.cell_id, ctrl.status, ctrl.margins.min(),
                 ctrl.saturation["max_u_vertices"]))
    print("wrote %s" % _controllers_path(cfg))
    return EXIT_OK


def cmd_verify(cfg):
    env = cfg.environment
    controllers = _load_controllers(cfg)
    reports = verification.verify_environment(
        controllers, env, count=cfg.verify_count, seed=cfg.seed,
        raise_on_fail=False,
    )
    os.makedirs(cfg.out, exist_ok=True)
    payload = {
        "pass": all(r.passed for r in reports),
        "cells": [r.to_dict() for r in reports],
    }
    path = os.path.join(cfg.out, "report.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    for rep in reports:
        worst = rep.worst()
        print("cell %d: %s (worst slack %s)"
              % (rep.cell_id, "pass" if rep.passed else "FAIL",
                 "none" if worst is None else "%.3g" % worst["worst_slack"]))
    print("wrote %s" % path)
    return EXIT_OK if payload["pass"] else EXIT_FAIL


def cmd_simulate(cfg):
    env = cfg.environment
    controllers = _load_controllers(cfg)
    graph = planning.build_graph(env)
    os.makedirs(cfg.out, exist_ok=True)
    code = EXIT_OK
    for k, start in enumerate(cfg.starts):
        plan = planning.plan_from_start(env, graph, start=start, mode=cfg.mode)
        path = os.path.join(cfg.out, "trajectory_%d.csv" % k)
        try:
            traj = simulation.run_trajectory(env, plan, controllers, cfg.sim,
                                             x0=start)
        except (SafetyViolation, LeftFreeSpace) as exc:
            if exc.trajectory is not None:
                exc.trajectory.to_csv(path)
            print("start %d: FAIL (%s)" % (k, exc))
            code = EXIT_FAIL
            continue
        traj.to_csv(path)
        if cfg.mode == "patrol":
            print("start %d: %d crossings, wrote %s"
                  % (k, traj.crossings, path))
        else:
            print("start %d: reached=%s, wrote %s" % (k, traj.reached, path))
            if not traj.reached:
                code = EXIT_FAIL
    return code


def cmd_field(cfg, cells=None):
    env = cfg.environment
    controllers = {c.cell_id: c for c in _load_controllers(cfg)}
    wanted = cells if cells is not None else cfg.field_cells
    if wanted is None:
        wanted = sorted(controllers)
    os.makedirs(cfg.out, exist_ok=True)
    for cid in wanted:
        if cid not in controllers:
            raise ConfigError("no controller for cell %d" % cid, field="cells")
        cell = env.cell_by_id(cid)
        arr = simulation.sample_vector_field(
            cell, controllers[cid], cfg.field_resolution,
            sensor=cfg.sim.sensor, seed=cfg.seed,
        )
        path = os.path.join(cfg.out, "field_cell%d.csv" % cid)
        simulation.save_field_csv(arr, env.dimension, path)
        print("cell %d: %d lattice points, wrote %s" % (cid, len(arr), path))
    return EXIT_OK


def cmd_pipeline(cfg, cells=None):
    for step in (lambda: cmd_synth(cfg, cells), lambda: cmd_verify(cfg),
                 lambda: cmd_simulate(cfg), lambda: cmd_field(cfg, cells)):
        code = step()
        if code != EXIT_OK:
            return code
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="safefield",
        description="Synthesize, certify and simulate measurement-robust "
                    "per-cell feedback controllers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("synth", "synthesize controllers and write controllers.json"),
        ("verify", "re-check controllers adversarially, write report.json"),
        ("simulate", "run closed-loop trajectories, write CSVs"),
        ("field", "sample per-cell vector fields, write CSVs"),
        ("pipeline", "synth, verify, simulate and field in order"),
    ):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="run config JSON")
        sp.add_argument("--out", help="output directory override")
        sp.add_argument("--seed", type=int, help="seed override")
        sp.add_argument("--cells", help="comma-separated cell id subset")
        sp.add_argument("--sensor", choices=("delta", "gaussian"),
                        help="sensor kind override")
        sp.add_argument("--eps", type=float, help="support half-width override")
        sp.add_argument("--sigma", type=float,
                        help="deviation bound override")
    return parser


def main(argv=None):
    level = os.environ.get("SAFE_FIELD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        cells = _parse_cells(args.cells)
        if args.command == "synth":
            return cmd_synth(cfg, cells)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "field":
            return cmd_field(cfg, cells)
        return cmd_pipeline(cfg, cells)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except (SynthesisInfeasible, SolverFailure, NumericalFailure) as exc:
        print("solver error: %s" % exc, file=sys.stderr)
        return EXIT_SOLVER
    except (VerificationFailed, SafetyViolation, LeftFreeSpace) as exc:
        print("failure: %s" % exc, file=sys.stderr)
        return EXIT_FAIL
    except SafeFieldError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
