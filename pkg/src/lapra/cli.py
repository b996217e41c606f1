"""Command line entry points.

Subcommands generate synthetic problems, run the rotation and
translation solvers on g2o files, sweep curvature diagnostics, and
chain the two solve stages into a pipeline. Machine-readable output is
JSON for reports and CSV for traces; everything except the wall_time
field is deterministic for a fixed seed.

Exit codes: 0 on success, 2 on usage or file errors, 3 on numerical
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .decomposition import CommsLedger
from .laplacians import DEFAULT_OVERSAMPLING
from .manifold import NumericalError, RotationState
from .metrics import rotation_rmse, translation_rmse
from .pose_graph import (
    GraphError,
    MeasurementGraph,
    SyntheticSpec,
    generate_grid,
    grid_positions,
    load_g2o,
    partition_contiguous,
    spanning_tree_init,
    write_g2o,
)
from .rotation import (
    RunTrace,
    SolverConfig,
    TraceRow,
    _gradient_and_cost,
    collaborative_solve,
    distance_by_name,
    exact_newton_step,
    hessian_report,
)
from .translation import collaborative_translation_solve, translation_cost

METHODS = ("sparsified", "newton", "block-diagonal", "block-tree")
_METHOD_MODE = {"sparsified": "spectral", "block-diagonal": "block_diagonal", "block-tree": "tree"}


def _resolve_seed(value: int | None) -> int:
    """Explicit flag wins, then the LAPRA_SEED environment variable, then 0."""
    if value is not None:
        return value
    env = os.environ.get("LAPRA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise GraphError(f"LAPRA_SEED is not an integer: {env!r}") from exc
    return 0


def _resolve_threads(value: int | None) -> int:
    if value is not None:
        if value < 1:
            raise GraphError("--threads must be at least 1")
        return value
    return os.cpu_count() or 1


def _load_graph(path: str):
    g, poses = load_g2o(path)
    if not g.edges:
        raise GraphError(f"{path}: file has no measurement edges")
    if not g.is_connected():
        raise GraphError(f"{path}: measurement graph is not connected")
    return g, poses


def _load_poses(path: str):
    g, poses = load_g2o(path)
    if poses is None:
        raise GraphError(f"{path}: file has no complete vertex set")
    return g, poses


def _write_report(report: dict, path: str | None) -> None:
    text = json.dumps(report, indent=2)
    if path is None:
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _maybe(path: str | None, writer) -> None:
    if path is not None:
        writer(path)


def _trace_dicts(trace: RunTrace) -> list[dict]:
    return [
        {
            "iter": r.iter,
            "grad_norm": r.grad_norm,
            "cost": r.cost,
            "cum_upload_bytes": r.cum_upload_bytes,
        }
        for r in trace.rows
    ]


def _newton_solve(g, partition, R0, config: SolverConfig):
    """Exact Newton loop with per-iteration Hessian Schur uploads metered."""
    kind = distance_by_name(config.distance)
    ledger = CommsLedger()
    trace = RunTrace(ledger=ledger)
    R = R0.copy()
    for k in range(config.max_iters + 1):
        B, cost_k = _gradient_and_cost(g, R, kind)
        grad_norm = float(np.linalg.norm(B))
        trace.rows.append(TraceRow(k, grad_norm, cost_k, ledger.total_bytes()))
        if grad_norm <= config.grad_tol:
            trace.converged = True
            break
        if k == config.max_iters:
            break
        round_idx = ledger.begin_round()
        R = exact_newton_step(g, R, kind, partition=partition, ledger=ledger, round_idx=round_idx)
        trace.iterations = k + 1
    return R, trace


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        side=args.side,
        d=3,
        sigma_rot=float(np.deg2rad(args.sigma_deg)),
        edge_prob=args.edge_prob,
        seed=_resolve_seed(args.seed),
    )
    g, truth = generate_grid(spec)
    positions = grid_positions(spec.side, spec.d)
    write_g2o(args.out + ".g2o", g)
    empty = MeasurementGraph(g.d, g.n, [])
    write_g2o(args.out + "_truth.g2o", empty, poses=(truth, positions))
    print(f"wrote {args.out}.g2o ({g.n} vertices, {len(g.edges)} edges) and {args.out}_truth.g2o")
    return 0


# ---------------------------------------------------------------------------
# solve-rotation

def _rotation_run(g, args):
    seed = _resolve_seed(args.seed)
    threads = _resolve_threads(args.threads)
    partition = partition_contiguous(g, args.robots)
    config = SolverConfig(
        epsilon=args.epsilon,
        distance=args.distance,
        grad_tol=args.grad_tol,
        max_iters=args.max_iters,
        seed=seed,
    )
    R0 = spanning_tree_init(g)
    t0 = time.perf_counter()
    if args.method == "newton":
        R, trace = _newton_solve(g, partition, R0, config)
    else:
        R, trace = collaborative_solve(
            g,
            partition,
            R0,
            config,
            schur_mode=_METHOD_MODE[args.method],
            oversampling=args.oversampling,
            threads=threads,
        )
    wall = time.perf_counter() - t0
    config_echo = {
        "input": args.input,
        "robots": args.robots,
        "epsilon": args.epsilon,
        "distance": args.distance,
        "method": args.method,
        "grad_tol": args.grad_tol,
        "max_iters": args.max_iters,
        "seed": seed,
        "oversampling": args.oversampling,
        "threads": threads,
    }
    return R, trace, config_echo, wall


def cmd_solve_rotation(args) -> int:
    g, _ = _load_graph(args.input)
    R, trace, config_echo, wall = _rotation_run(g, args)
    final = {
        "converged": trace.converged,
        "iterations": trace.iterations,
        "grad_norm": trace.final_grad_norm,
        "cost": trace.rows[-1].cost,
        "total_upload_bytes": trace.ledger.total_bytes(),
        "wall_time_sec": wall,
    }
    if args.truth is not None:
        _, (R_true, _) = _load_poses(args.truth)
        final["rotation_rmse_deg"] = rotation_rmse(R, R_true).degrees
    report = {"command": "solve-rotation", "config": config_echo, "final": final,
              "trace": _trace_dicts(trace)}
    _maybe(args.trace, trace.to_csv)
    _maybe(args.ledger, trace.ledger.to_csv)
    if args.save_rotations is not None:
        empty = MeasurementGraph(g.d, g.n, [])
        write_g2o(args.save_rotations, empty, poses=(R, np.zeros((g.n, g.d))))
    _write_report(report, args.report)
    return 0


# ---------------------------------------------------------------------------
# solve-translation

def cmd_solve_translation(args) -> int:
    g, poses = _load_graph(args.input)
    if args.rotations is not None:
        _, (R_hat, _) = _load_poses(args.rotations)
    elif poses is not None:
        R_hat = poses[0]
    else:
        raise GraphError("no rotation estimates: pass --rotations or a g2o file with vertices")
    if R_hat.n != g.n:
        raise GraphError(f"rotation count {R_hat.n} does not match graph size {g.n}")
    seed = _resolve_seed(args.seed)
    threads = _resolve_threads(args.threads)
    partition = partition_contiguous(g, args.robots)
    config = SolverConfig(
        epsilon=args.epsilon,
        grad_tol=args.resid_tol,
        max_iters=args.max_iters,
        seed=seed,
    )
    t0 = time.perf_counter()
    M, trace = collaborative_translation_solve(
        g, partition, R_hat, config, oversampling=args.oversampling, threads=threads
    )
    wall = time.perf_counter() - t0
    final = {
        "converged": trace.converged,
        "iterations": trace.iterations,
        "residual_norm": trace.final_grad_norm,
        "cost": translation_cost(g, R_hat, M),
        "total_upload_bytes": trace.ledger.total_bytes(),
        "wall_time_sec": wall,
    }
    if args.truth is not None:
        _, (R_true, t_true) = _load_poses(args.truth)
        # positions are recovered in the frame of the rotation estimates,
        # so carry them through the aligning rotation before comparing
        S = rotation_rmse(R_hat, R_true).alignment
        final["translation_rmse"] = translation_rmse(M @ S.T, t_true)
    report = {
        "command": "solve-translation",
        "config": {
            "input": args.input,
            "rotations": args.rotations,
            "robots": args.robots,
            "epsilon": args.epsilon,
            "resid_tol": args.resid_tol,
            "max_iters": args.max_iters,
            "seed": seed,
            "oversampling": args.oversampling,
            "threads": threads,
        },
        "final": final,
        "trace": _trace_dicts(trace),
    }
    _maybe(args.trace, trace.to_csv)
    _maybe(args.ledger, trace.ledger.to_csv)
    if args.save_positions is not None:
        empty = MeasurementGraph(g.d, g.n, [])
        write_g2o(args.save_positions, empty, poses=(R_hat, M))
    _write_report(report, args.report)
    return 0


# ---------------------------------------------------------------------------
# validate-hessian

def cmd_validate_hessian(args) -> int:
    from .rotation import assemble_gradient_rhs, centralized_step

    kind = distance_by_name(args.distance)
    base_seed = _resolve_seed(args.seed)
    lines = ["sigma_deg,seed,delta,lambda2,lambda_max,kappa,gamma"]
    for sigma_deg in args.sigma_deg:
        for k in range(args.seeds):
            spec = SyntheticSpec(
                side=args.side,
                d=3,
                sigma_rot=float(np.deg2rad(sigma_deg)),
                edge_prob=args.edge_prob,
                seed=base_seed + k,
            )
            g, _ = generate_grid(spec)
            R = spanning_tree_init(g)
            for _ in range(40):
                if np.linalg.norm(assemble_gradient_rhs(g, R, kind)) <= 1e-8:
                    break
                R = centralized_step(g, R, kind)
            rep = hessian_report(g, R, kind, epsilon=args.epsilon)
            lines.append(
                f"{sigma_deg},{base_seed + k},{rep.delta_empirical!r},{rep.lambda2!r},"
                f"{rep.lambda_max!r},{rep.kappa!r},{rep.gamma!r}"
            )
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


# ---------------------------------------------------------------------------
# pipeline

def cmd_pipeline(args) -> int:
    g, _ = _load_graph(args.input)
    R, rot_trace, config_echo, rot_wall = _rotation_run(g, args)
    t_config = SolverConfig(
        epsilon=args.epsilon,
        grad_tol=args.resid_tol,
        max_iters=args.max_iters,
        seed=_resolve_seed(args.seed),
    )
    partition = partition_contiguous(g, args.robots)
    t0 = time.perf_counter()
    M, tr_trace = collaborative_translation_solve(
        g, partition, R, t_config,
        oversampling=args.oversampling, threads=_resolve_threads(args.threads),
    )
    tr_wall = time.perf_counter() - t0
    final = {
        "rotation_converged": rot_trace.converged,
        "rotation_iterations": rot_trace.iterations,
        "rotation_grad_norm": rot_trace.final_grad_norm,
        "translation_converged": tr_trace.converged,
        "translation_iterations": tr_trace.iterations,
        "translation_residual_norm": tr_trace.final_grad_norm,
        "total_upload_bytes": rot_trace.ledger.total_bytes() + tr_trace.ledger.total_bytes(),
        "wall_time_sec": rot_wall + tr_wall,
    }
    if args.reference is not None:
        _, (R_ref, t_ref) = _load_poses(args.reference)
        err = rotation_rmse(R, R_ref)
        final["rotation_rmse_deg"] = err.degrees
        final["translation_rmse"] = translation_rmse(M @ err.alignment.T, t_ref)
    report = {
        "command": "pipeline",
        "config": dict(config_echo, resid_tol=args.resid_tol, reference=args.reference),
        "final": final,
        "rotation_trace": _trace_dicts(rot_trace),
        "translation_trace": _trace_dicts(tr_trace),
    }
    if args.save_poses is not None:
        empty = MeasurementGraph(g.d, g.n, [])
        write_g2o(args.save_poses, empty, poses=(R, M))
    _write_report(report, args.report)
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common_solver_flags(p, translation: bool = False) -> None:
    p.add_argument("--input", required=True, help="g2o measurement file")
    p.add_argument("--robots", type=int, default=1, help="number of robots (contiguous id blocks)")
    p.add_argument("--epsilon", type=float, default=0.0, help="sparsification parameter")
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: LAPRA_SEED or 0)")
    p.add_argument("--oversampling", type=float, default=DEFAULT_OVERSAMPLING,
                   help="sampling budget multiplier; budgets at or above the exact "
                        "edge count fall back to the exact matrix")
    p.add_argument("--threads", type=int, default=None,
                   help="robot-parallel workers (default: available cores)")
    p.add_argument("--report", default=None, help="write the JSON report here instead of stdout")
    p.add_argument("--trace", default=None, help="per-iteration CSV trace path")
    p.add_argument("--ledger", default=None, help="per-upload CSV ledger path")
    if translation:
        p.add_argument("--resid-tol", type=float, default=1e-10, help="residual stop tolerance")
    else:
        p.add_argument("--distance", choices=("geodesic", "chordal"), default="geodesic")
        p.add_argument("--grad-tol", type=float, default=1e-5)
        p.add_argument("--method", choices=METHODS, default="sparsified")
        p.add_argument("--truth", default=None, help="g2o file with reference poses for RMSE")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lapra", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic grid problem")
    p.add_argument("--side", type=int, default=5)
    p.add_argument("--sigma-deg", type=float, default=0.0, help="rotation noise std deviation")
    p.add_argument("--edge-prob", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.g2o and PREFIX_truth.g2o")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve-rotation", help="rotation averaging on a g2o file")
    _add_common_solver_flags(p)
    p.add_argument("--save-rotations", default=None, help="write solved rotations as a vertex-only g2o")
    p.set_defaults(func=cmd_solve_rotation)

    p = sub.add_parser("solve-translation", help="translation recovery given rotation estimates")
    _add_common_solver_flags(p, translation=True)
    p.add_argument("--rotations", default=None,
                   help="vertex-only g2o with rotation estimates (default: input file vertices)")
    p.add_argument("--truth", default=None, help="g2o file with reference poses for RMSE")
    p.add_argument("--save-positions", default=None, help="write solved positions as a vertex-only g2o")
    p.set_defaults(func=cmd_solve_translation)

    p = sub.add_parser("validate-hessian", help="curvature agreement sweep on synthetic grids")
    p.add_argument("--side", type=int, default=4)
    p.add_argument("--edge-prob", type=float, default=0.3)
    p.add_argument("--sigma-deg", type=float, nargs="+", default=[0.0, 2.0, 5.0, 10.0])
    p.add_argument("--seeds", type=int, default=5, help="instances per noise level")
    p.add_argument("--seed", type=int, default=None, help="base seed (default: LAPRA_SEED or 0)")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--distance", choices=("geodesic", "chordal"), default="chordal")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_validate_hessian)

    p = sub.add_parser("pipeline", help="rotation averaging followed by translation recovery")
    _add_common_solver_flags(p)
    p.add_argument("--resid-tol", type=float, default=1e-10, help="translation residual tolerance")
    p.add_argument("--reference", default=None, help="g2o file with reference poses for RMSE")
    p.add_argument("--save-poses", default=None, help="write solved poses as a vertex-only g2o")
    p.set_defaults(func=cmd_pipeline)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (GraphError, OSError) as exc:
        print(f"lapra: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"lapra: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
