"""Config-driven command line front end.

Each run consumes one JSON config (or a named built-in demo), dispatches to
the library, writes plot-ready CSV/JSON artifacts into the output
directory, and finishes with a manifest describing every produced file.
Exit codes: 0 on success, 2 when a solver reports non-convergence (the
artifacts produced so far are still written), 1 on configuration or domain
errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MfgTubesError
from .model import ModelParams, energy
from .spectral import eigen_basis, find_equilibria

SCHEMA_VERSION = 1

_MODEL_KEYS = {"sigma", "mu", "g", "h", "alpha", "epsilon"}
_TASK_KEYS = {
    "equilibria": {"q2_range"},
    "linearize": {"q2_range", "index"},
    "orbit": {"q2_range", "excess_energy"},
    "tube": {"q2_range", "excess_energy", "branch", "side", "d", "n_strands", "t_int", "q1_stop"},
    "bvp": {"bc", "T", "guess", "tol"},
    "continue": {"bc", "seed_T", "guess", "T_range", "step", "tol", "q1_window", "label", "q2_range"},
    "diagram": {"bc", "branches", "tol", "q1_window", "q2_range"},
    "pde": {"grid", "pde", "ic", "fc", "warm_start", "q1_window"},
    "compare": {"bvp", "pde"},
}


def fmt(value: float) -> str:
    """CSV numeric format: 17 significant digits."""
    return f"{float(value):.17g}"


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


@dataclass
class RunManifest:
    config_sha256: str
    tool_version: str
    created: str
    files: list[str] = field(default_factory=list)
    statuses: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "config_sha256": self.config_sha256,
            "tool_version": self.tool_version,
            "created": self.created,
            "files": sorted(self.files),
            "statuses": self.statuses,
        }


class ConfigError(ValueError):
    pass


def validate_config(config: dict) -> dict:
    """Schema-check a run config; unknown keys are rejected."""
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    if config.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {SCHEMA_VERSION}")
    task = config.get("task")
    if task not in _TASK_KEYS:
        raise ConfigError(f"unknown task {task!r}; expected one of {sorted(_TASK_KEYS)}")
    model = config.get("model")
    if not isinstance(model, dict) or set(model) != _MODEL_KEYS:
        raise ConfigError(f"model must define exactly the keys {sorted(_MODEL_KEYS)}")
    allowed = _TASK_KEYS[task] | {"schema", "task", "model", "workers"}
    unknown = set(config) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys for task {task!r}: {sorted(unknown)}")
    return config


def _params(config: dict) -> ModelParams:
    return ModelParams(**{k: float(v) for k, v in config["model"].items()})


def _equilibrium_records(params: ModelParams, q2_range) -> list[dict]:
    records = []
    for eq in find_equilibria(params, tuple(q2_range)):
        a, b, c, d = eq.abcd
        records.append(
            {
                "q2": eq.q2,
                "kind": eq.kind.value,
                "a": a,
                "b": b,
                "c": c,
                "d": d,
                "rates": list(eq.rates),
                "E_eq": eq.energy,
            }
        )
    return records


def _task_equilibria(config, params, out, manifest):
    records = _equilibrium_records(params, config.get("q2_range", (0.5, 200.0)))
    payload = {"params": config["model"], "equilibria": records}
    path = out / "equilibria.json"
    path.write_text(json.dumps(payload, indent=2))
    manifest.files.append(path.name)
    manifest.statuses["equilibria"] = f"{len(records)} found"
    return 0


def _task_linearize(config, params, out, manifest):
    records = find_equilibria(params, tuple(config.get("q2_range", (0.5, 200.0))))
    idx = int(config.get("index", 0))
    if not records:
        raise MfgTubesError("no equilibrium in range")
    eq = records[idx]
    basis = eigen_basis(eq)
    payload = {
        "q2": eq.q2,
        "kind": eq.kind.value,
        "abcd": list(eq.abcd),
        "rates": list(eq.rates),
        "E_eq": eq.energy,
        "T": basis.T.tolist(),
        "a1": basis.a1,
        "a2": basis.a2,
        "q1_coefficient": float(basis.T[0, 0]),
    }
    path = out / "linearize.json"
    path.write_text(json.dumps(payload, indent=2))
    manifest.files.append(path.name)
    manifest.statuses["linearize"] = eq.kind.value
    return 0


def _find_sc_equilibrium(params, config):
    eqs = find_equilibria(params, tuple(config.get("q2_range", (0.5, 10.0))))
    from .spectral import EquilibriumKind

    for eq in eqs:
        if eq.kind is EquilibriumKind.SADDLE_CENTER:
            return eq
    raise MfgTubesError("no saddle x center equilibrium in range")


def _task_orbit(config, params, out, manifest):
    from .orbits import orbit_at_energy

    eq = _find_sc_equilibrium(params, config)
    E = eq.energy + float(config["excess_energy"])
    po = orbit_at_energy(params, eq, E)
    tr = po.samples
    write_csv(
        out / "orbit.csv",
        ["t", "q1", "p1", "q2", "p2", "E"],
        (
            (t, *row, e)
            for t, row, e in zip(tr.times, tr.states, tr.energies())
        ),
    )
    summary = {
        "E": po.energy,
        "t_p": po.period,
        "lambda_u": po.unstable_multiplier,
        "q2_seed": float(po.seed[2]),
    }
    (out / "orbit.json").write_text(json.dumps(summary, indent=2))
    manifest.files += ["orbit.csv", "orbit.json"]
    manifest.statuses["orbit"] = "converged"
    return 0


def _task_tube(config, params, out, manifest):
    from .orbits import orbit_at_energy, tube

    eq = _find_sc_equilibrium(params, config)
    po = orbit_at_energy(params, eq, eq.energy + float(config["excess_energy"]))
    manifold = tube(
        params,
        po,
        config.get("branch", "stable"),
        int(config.get("side", -1)),
        d=config.get("d"),
        n_strands=int(config.get("n_strands", 32)),
        t_int=float(config.get("t_int", 60.0)),
        q1_stop=float(config.get("q1_stop", 12.0)),
    )
    for k, strand in enumerate(manifold.strands):
        name = f"strand_{k:03d}.csv"
        strand.to_csv(out / name)
        manifest.files.append(name)
    summary = {
        "E": po.energy,
        "t_p": po.period,
        "lambda_u": po.unstable_multiplier,
        "d": manifold.displacement,
        "n_strands": len(manifold.strands),
        "branch": manifold.branch.value,
        "side": manifold.side,
        "truncated": manifold.truncated,
    }
    (out / "tube.json").write_text(json.dumps(summary, indent=2))
    manifest.files.append("tube.json")
    manifest.statuses["tube"] = "ok"
    return 0


def _bc_from_config(section) -> "BoundaryConditions":
    from .bvp import BoundaryConditions

    return BoundaryConditions(
        q1_0=float(section["q1_0"]),
        q2_0=float(section["q2_0"]),
        q1_T=float(section["q1_T"]),
        q2_T=float(section["q2_T"]),
    )


def _bvp_guess(params, bc, T, spec):
    from .bvp import ballistic_guess, straight_line_guess

    if spec in (None, "straight"):
        return straight_line_guess(params, bc, T)
    if spec == "ballistic":
        return ballistic_guess(params, bc, T)
    raise ConfigError(f"unknown guess source {spec!r}")


def _solve_bvp_task(config, params):
    from .bvp import solve_bvp

    bc = _bc_from_config(config["bc"])
    T = float(config["T"])
    guess = _bvp_guess(params, bc, T, config.get("guess"))
    return solve_bvp(params, bc, T, guess=guess, tol=float(config.get("tol", 1e-8))), bc


def _task_bvp(config, params, out, manifest):
    from .bvp import annotate_topology
    from .errors import BvpConvergenceError

    try:
        sol, bc = _solve_bvp_task(config, params)
    except BvpConvergenceError as exc:
        (out / "bvp_failure.json").write_text(
            json.dumps({"error": str(exc), "T": config["T"]}, indent=2)
        )
        manifest.files.append("bvp_failure.json")
        manifest.statuses["bvp"] = "unconverged"
        return 2
    eqs = find_equilibria(params, (0.5, 200.0))
    annotate_topology(sol, eqs[0])
    sol.to_csv(out / "bvp_solution.csv")
    summary = {
        "T": sol.T,
        "E": sol.energy,
        "n": sol.rotations,
        "residual": sol.residual,
        "phases": list(sol.phases) if sol.phases else None,
    }
    (out / "bvp_summary.json").write_text(json.dumps(summary, indent=2))
    manifest.files += ["bvp_solution.csv", "bvp_summary.json"]
    manifest.statuses["bvp"] = "converged"
    return 0


def _task_continue(config, params, out, manifest):
    from .bvp import StepPolicy, continue_branch, solve_bvp
    from .errors import BvpConvergenceError

    bc = _bc_from_config(config["bc"])
    T0 = float(config["seed_T"])
    guess = _bvp_guess(params, bc, T0, config.get("guess"))
    try:
        seed = solve_bvp(params, bc, T0, guess=guess, tol=float(config.get("tol", 1e-8)))
    except BvpConvergenceError as exc:
        (out / "continue_failure.json").write_text(json.dumps({"error": str(exc)}, indent=2))
        manifest.files.append("continue_failure.json")
        manifest.statuses["continue"] = "seed unconverged"
        return 2
    eq = find_equilibria(params, tuple(config.get("q2_range", (0.5, 200.0))))[0]
    policy = StepPolicy(**config.get("step", {}))
    branch = continue_branch(
        params,
        bc,
        seed,
        tuple(config.get("T_range", (max(0.2, T0 - 2.0), T0 + 2.0))),
        policy=policy,
        eq=eq,
        q1_window=float(config.get("q1_window", 0.5)),
        label=config.get("label", "B?"),
    )
    write_csv(
        out / "branch.csv",
        ["T", "E", "n"],
        ((s.T, s.energy, s.rotations if s.rotations is not None else -1) for s in branch.solutions),
    )
    manifest.files.append("branch.csv")
    manifest.statuses["continue"] = f"{len(branch.solutions)} points"
    return 0


def _diagram_worker(args):
    config, branch_spec = args
    params = _params(config)
    sub = dict(config)
    sub.update(branch_spec)
    from .bvp import StepPolicy, continue_branch, solve_bvp

    bc = _bc_from_config(sub["bc"])
    T0 = float(sub["seed_T"])
    guess = _bvp_guess(params, bc, T0, sub.get("guess"))
    try:
        seed = solve_bvp(params, bc, T0, guess=guess, tol=float(sub.get("tol", 1e-8)))
    except Exception as exc:  # collected per branch, reported in the table
        return branch_spec.get("label", "?"), None, str(exc)
    eq = find_equilibria(params, tuple(sub.get("q2_range", (0.5, 200.0))))[0]
    branch = continue_branch(
        params,
        bc,
        seed,
        tuple(sub.get("T_range", (max(0.2, T0 - 2.0), T0 + 2.0))),
        policy=StepPolicy(**sub.get("step", {})),
        eq=eq,
        q1_window=float(sub.get("q1_window", 0.5)),
        label=branch_spec.get("label", "B?"),
    )
    rows = [(s.T, s.energy, s.rotations if s.rotations is not None else -1) for s in branch.solutions]
    return branch_spec.get("label", "?"), rows, None


def _task_diagram(config, params, out, manifest, workers=1):
    specs = config["branches"]
    jobs = [(config, spec) for spec in specs]
    results = []
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_diagram_worker, jobs))
    else:
        results = [_diagram_worker(j) for j in jobs]
    rows = []
    status = {}
    for label, branch_rows, error in sorted(results, key=lambda r: r[0]):
        if branch_rows is None:
            status[label] = f"failed: {error}"
            continue
        status[label] = f"{len(branch_rows)} points"
        for T, E, n in sorted(branch_rows):
            rows.append((label, T, E, n))
    with open(out / "diagram.csv", "w", newline="") as fh:
        fh.write("branch,T,E,n\n")
        for label, T, E, n in rows:
            fh.write(f"{label},{fmt(T)},{fmt(E)},{int(n)}\n")
    manifest.files.append("diagram.csv")
    manifest.statuses["diagram"] = status
    return 0 if any(v.endswith("points") for v in status.values()) else 2


def _pde_setup(config, params):
    from .pde import Grid, PdeConfig, gaussian_density

    g = config["grid"]
    grid = Grid(L=float(g["L"]), Nx=int(g["Nx"]), Nt=int(g["Nt"]), T=float(g["T"]))
    p = config.get("pde", {})
    pde_cfg = PdeConfig(
        eps_p=float(p.get("eps_p", 0.01)),
        delta=float(p.get("delta", 0.5)),
        k_max=int(p.get("k_max", 1000)),
        tol=float(p.get("tol", 1e-6)),
    )
    ic, fc = config["ic"], config["fc"]
    m_IC = gaussian_density(float(ic["X"]), params.epsilon * float(ic["S"]), grid)
    m_FC = gaussian_density(float(fc["X"]), params.epsilon * float(fc["S"]), grid)
    return grid, pde_cfg, m_IC, m_FC


def _task_pde(config, params, out, manifest):
    from .errors import NewtonError
    from .pde import extract_moments, phase_rotation_count, planning_solve

    grid, pde_cfg, m_IC, m_FC = _pde_setup(config, params)
    try:
        fields, log = planning_solve(params, m_IC, m_FC, grid, pde_cfg)
    except NewtonError as exc:
        (out / "pde_failure.json").write_text(
            json.dumps({"error": str(exc), "residual_history": exc.residual_history[-10:]}, indent=2)
        )
        manifest.files.append("pde_failure.json")
        manifest.statuses["pde"] = "diverged"
        return 2
    write_csv(out / "density.csv", [fmt(x) for x in grid.x], fields.M)
    write_csv(out / "value.csv", [fmt(x) for x in grid.x], fields.U)
    write_csv(
        out / "convergence.csv",
        ["k", "errU", "errM"],
        zip(log.iterations, log.err_u, log.err_m),
    )
    lagr, phase = extract_moments(fields, grid, params)
    write_csv(
        out / "phase.csv",
        ["t", "q1", "p1", "q2", "p2", "E"],
        (
            (t, *row, e)
            for t, row, e in zip(grid.t, phase, energy(params, phase))
        ),
    )
    n_rot = phase_rotation_count(grid.t, phase, float(config.get("q1_window", 0.5)))
    summary = {
        "converged": log.converged,
        "iterations": len(log.iterations),
        "final_density_max_error": float(np.max(np.abs(fields.M[-1] - m_FC))),
        "rotation_count": int(n_rot),
        "dt": grid.dt,
        "dx": grid.dx,
    }
    (out / "pde_summary.json").write_text(json.dumps(summary, indent=2))
    manifest.files += ["density.csv", "value.csv", "convergence.csv", "phase.csv", "pde_summary.json"]
    manifest.statuses["pde"] = "converged" if log.converged else "unconverged"
    return 0 if log.converged else 2


def _task_compare(config, params, out, manifest):
    from .bvp import rotation_count
    from .errors import BvpConvergenceError
    from .pde import extract_moments, phase_rotation_count, planning_solve

    grid, pde_cfg, m_IC, m_FC = _pde_setup(config["pde"], params)
    fields, log = planning_solve(params, m_IC, m_FC, grid, pde_cfg)
    lagr, phase = extract_moments(fields, grid, params)
    window = float(config["pde"].get("q1_window", 0.5))
    n_pde = phase_rotation_count(grid.t, phase, window)
    report = {"n_pde": int(n_pde), "pde_converged": log.converged}
    code = 0 if log.converged else 2
    try:
        sol, bc = _solve_bvp_task(config["bvp"], params)
        eq = find_equilibria(params, (0.5, 200.0))[0]
        report["n_bvp"] = int(rotation_count(sol, eq, window))
        report["match"] = report["n_bvp"] == report["n_pde"]
    except BvpConvergenceError as exc:
        report["n_bvp"] = None
        report["match"] = False
        report["bvp_error"] = str(exc)
        code = 2
    (out / "compare.json").write_text(json.dumps(report, indent=2))
    manifest.files.append("compare.json")
    manifest.statuses["compare"] = "match" if report.get("match") else "mismatch"
    return code


_TASKS = {
    "equilibria": _task_equilibria,
    "linearize": _task_linearize,
    "orbit": _task_orbit,
    "tube": _task_tube,
    "bvp": _task_bvp,
    "continue": _task_continue,
    "pde": _task_pde,
    "compare": _task_compare,
}


def bundled_demos() -> dict[str, dict]:
    """Named preset configs with the reference parameter sets embedded."""
    ss_model = {"sigma": 1.0, "mu": 2.0, "g": 4.0, "h": 0.0, "alpha": 1.0, "epsilon": 0.05}
    sc_model = {"sigma": 1.0, "mu": 2.0, "g": 4.0, "h": 0.0, "alpha": 3.0, "epsilon": 0.05}
    return {
        "ss-case": {
            "schema": SCHEMA_VERSION,
            "task": "equilibria",
            "model": ss_model,
            "q2_range": [1.0, 50.0],
        },
        "sc-case": {
            "schema": SCHEMA_VERSION,
            "task": "linearize",
            "model": sc_model,
            "q2_range": [1.0, 10.0],
            "index": 0,
        },
        "pde-tworotation": {
            "schema": SCHEMA_VERSION,
            "task": "pde",
            "model": sc_model,
            "grid": {"L": 40.0, "Nx": 500, "Nt": 500, "T": 9.5},
            "pde": {"eps_p": 0.01, "delta": 0.5, "k_max": 1000, "tol": 1e-6},
            "ic": {"X": -10.0, "S": 4.5},
            "fc": {"X": 10.0, "S": 4.5},
        },
    }


def run(config: dict, out_dir, workers: int = 1) -> tuple[int, RunManifest]:
    """Validate and execute one run; returns (exit_code, manifest)."""
    config = validate_config(config)
    params = _params(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    manifest = RunManifest(
        config_sha256=digest,
        tool_version=__version__,
        created=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )
    task = config["task"]
    if task == "diagram":
        code = _task_diagram(config, params, out, manifest, workers=workers)
    else:
        code = _TASKS[task](config, params, out, manifest)
    (out / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2))
    return code, manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfgtubes",
        description="Phase-space toolkit for the reduced-order mean-field game model.",
    )
    parser.add_argument("--config", type=Path, help="path to a JSON run config")
    parser.add_argument("--demo", choices=sorted(bundled_demos()), help="run a bundled preset")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="worker pool size for diagram runs")
    args = parser.parse_args(argv)

    if (args.config is None) == (args.demo is None):
        parser.error("exactly one of --config or --demo is required")
    try:
        if args.demo:
            config = bundled_demos()[args.demo]
        else:
            config = json.loads(args.config.read_text())
        code, _ = run(config, args.out, workers=max(1, args.workers))
        return code
    except (ConfigError, MfgTubesError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
