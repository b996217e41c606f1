"""Translation recovery given fixed rotation estimates.

With rotations held fixed the translation problem is linear least
squares whose normal equations are a graph Laplacian system, solved
either exactly or iteratively through the sparsified robot/server
split. Because each pass through an inexact reduced system leaves a
computable residual, repeating the solve on the residual refines the
answer geometrically.
"""

from __future__ import annotations

import numpy as np

from . import decomposition as dd
from .laplacians import DEFAULT_OVERSAMPLING, WeightedGraph, laplacian, solve_grounded
from .manifold import RotationState
from .pose_graph import MeasurementGraph, Partition
from .rotation import RunTrace, SolverConfig, TraceRow, separator_rows_by_owner

__all__ = [
    "translation_weights",
    "assemble_translation_rhs",
    "translation_cost",
    "exact_translation_solve",
    "collaborative_translation_solve",
]


def translation_weights(g: MeasurementGraph) -> WeightedGraph:
    """Edge weights tau of the translation normal equations."""
    return WeightedGraph.from_edge_list(
        g.n, [(e.i, e.j) for e in g.edges], [e.tau for e in g.edges]
    )


def assemble_translation_rhs(g: MeasurementGraph, R_hat: RotationState) -> np.ndarray:
    """Right-hand side of the translation normal equations, one row per vertex.

    Each measurement pushes tau * (R_hat_i t_tilde) onto its head vertex
    and pulls it from its tail, so column sums vanish.
    """
    B = np.zeros((g.n, g.d))
    for e in g.edges:
        w = e.tau * (R_hat.mats[e.i] @ e.t_tilde)
        B[e.j] += w
        B[e.i] -= w
    return B


def translation_cost(g: MeasurementGraph, R_hat: RotationState, t: np.ndarray) -> float:
    """Weighted squared consistency error of translations t (n x d)."""
    total = 0.0
    for e in g.edges:
        r = t[e.j] - t[e.i] - R_hat.mats[e.i] @ e.t_tilde
        total += 0.5 * e.tau * float(r @ r)
    return total


def exact_translation_solve(g: MeasurementGraph, R_hat: RotationState) -> np.ndarray:
    """Minimum-norm translations solving the normal equations exactly."""
    L = laplacian(translation_weights(g))
    B = assemble_translation_rhs(g, R_hat)
    return solve_grounded(L, B)


def collaborative_translation_solve(
    g: MeasurementGraph,
    partition: Partition,
    R_hat: RotationState,
    config: SolverConfig,
    schur_mode: str = "spectral",
    oversampling: float = DEFAULT_OVERSAMPLING,
    threads: int = 1,
    keep_iterates: bool = False,
) -> tuple[np.ndarray, RunTrace]:
    """Iterative refinement of the translation system through the split solver.

    Starting from zero, each sweep solves the compressed system against
    the current residual and adds the correction. With an exact reduced
    system (epsilon = 0) the first sweep already solves the problem; a
    compressed one contracts the error geometrically. Stops when the
    residual norm drops below config.grad_tol or after config.max_iters
    sweeps. The returned estimate has zero column means.

    With keep_iterates=True the trace carries every intermediate
    estimate (before the zero-mean shift) for offline analysis.
    """
    L = laplacian(translation_weights(g))
    blocks, server = dd.build_blocks(L, partition)
    ledger = dd.CommsLedger()
    rng = np.random.default_rng(config.seed)
    dd.sparsified_schur(
        blocks,
        server,
        config.epsilon,
        rng,
        ledger=ledger,
        mode=schur_mode,
        oversampling=oversampling,
        threads=threads,
    )
    B = assemble_translation_rhs(g, R_hat)

    grad_sep_counts = separator_rows_by_owner(g, partition)

    M = np.zeros((g.n, g.d))
    trace = RunTrace(ledger=ledger)
    iterates: list[np.ndarray] = []
    for k in range(config.max_iters + 1):
        E = B - L @ M
        resid = float(np.linalg.norm(E))
        trace.rows.append(TraceRow(k, resid, translation_cost(g, R_hat, M), ledger.total_bytes()))
        if keep_iterates:
            iterates.append(M.copy())
        if resid <= config.grad_tol:
            trace.converged = True
            break
        if k == config.max_iters:
            break
        round_idx = ledger.begin_round()
        if partition.separators.size > 0:
            for a in range(partition.m):
                ledger.record(round_idx, a, "partial_grad", int(grad_sep_counts[a]) * g.d)
        D = dd.solve(blocks, server, E, ledger=ledger, round_idx=round_idx)
        M = M + D
        trace.iterations = k + 1
    if keep_iterates:
        trace.iterates = iterates
    return M - M.mean(axis=0, keepdims=True), trace
