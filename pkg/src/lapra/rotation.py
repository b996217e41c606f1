"""Rotation averaging by Laplacian-preconditioned tangent updates.

Estimates one rotation per vertex from noisy relative measurements by
minimizing a weighted sum of per-edge distances. Each outer iteration
solves a single weighted graph Laplacian system in place of the true
(block-structured) Hessian; the system can be solved centrally or split
across robots through the decomposition module, with every upload
metered.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, null_space

from . import decomposition as dd
from .laplacians import (
    DEFAULT_OVERSAMPLING,
    WeightedGraph,
    laplacian,
    solve_grounded,
)
from .manifold import NumericalError, RotationState, exp_map, hat, log_map
from .metrics import gamma_factor
from .pose_graph import MeasurementGraph, Partition

__all__ = [
    "Distance",
    "GEODESIC",
    "CHORDAL",
    "distance_by_name",
    "SolverConfig",
    "TraceRow",
    "RunTrace",
    "edge_gradient",
    "edge_hessian",
    "cost",
    "assemble_gradient_rhs",
    "laplacian_weights",
    "centralized_step",
    "collaborative_solve",
    "exact_newton_step",
    "assemble_full_hessian",
    "hessian_report",
    "HessianReport",
]


@dataclass(frozen=True)
class Distance:
    """A reshaped per-edge distance: value, first and second derivative in the angle."""

    name: str
    rho: callable
    rho_dot: callable
    rho_ddot: callable
    laplacian_scale: float  # weight multiplier for the surrogate Laplacian
    hessian_limit_scale: float  # per-edge Hessian scale at zero residual


GEODESIC = Distance(
    name="geodesic",
    rho=lambda t: 0.5 * t * t,
    rho_dot=lambda t: t,
    rho_ddot=lambda t: 1.0,
    laplacian_scale=1.0,
    hessian_limit_scale=1.0,
)

CHORDAL = Distance(
    name="chordal",
    rho=lambda t: 2.0 - 2.0 * math.cos(t),
    rho_dot=lambda t: 2.0 * math.sin(t),
    rho_ddot=lambda t: 2.0 * math.cos(t),
    laplacian_scale=2.0,
    hessian_limit_scale=2.0,
)


def distance_by_name(name: str) -> Distance:
    try:
        return {"geodesic": GEODESIC, "chordal": CHORDAL}[name]
    except KeyError:
        raise ValueError(f"unknown distance {name!r}") from None


@dataclass
class SolverConfig:
    epsilon: float = 0.0
    distance: str = "geodesic"
    grad_tol: float = 1e-5
    max_iters: int = 50
    project_horizontal: bool = False
    seed: int = 0


@dataclass
class TraceRow:
    iter: int
    grad_norm: float
    cost: float
    cum_upload_bytes: int


@dataclass
class RunTrace:
    rows: list[TraceRow] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    ledger: dd.CommsLedger | None = None
    iterates: list | None = None  # populated only on request

    @property
    def final_grad_norm(self) -> float:
        return self.rows[-1].grad_norm if self.rows else float("nan")

    def to_csv(self, path: str | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "grad_norm", "cost", "cum_upload_bytes"])
        for r in self.rows:
            w.writerow([r.iter, repr(r.grad_norm), repr(r.cost), r.cum_upload_bytes])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# Per-edge derivatives

_ZERO_RESIDUAL = 1e-8


def _residual(R_i, R_j, R_tilde) -> np.ndarray:
    return log_map(R_tilde.T @ R_i.T @ R_j)


def edge_gradient(R_i, R_j, R_tilde, kind: Distance) -> tuple[np.ndarray, np.ndarray]:
    """Tangent-space gradient of the edge cost at (R_i, R_j).

    Differentiation is through left perturbations Exp(v) R. Returns the
    blocks (g_i, g_j); both vanish at zero residual. The residual angle
    must stay below pi, where the distance is not differentiable.
    """
    v = _residual(R_i, R_j, R_tilde)
    theta = np.linalg.norm(v)
    p = v.shape[0]
    if theta < _ZERO_RESIDUAL:
        return np.zeros(p), np.zeros(p)
    u = v / theta
    rd = kind.rho_dot(theta)
    if p == 1:
        return -rd * u, rd * u
    return -rd * (R_i @ R_tilde @ u), rd * (R_j @ u)


def edge_hessian(R_i, R_j, R_tilde, kind: Distance) -> np.ndarray:
    """2p x 2p second-derivative block of the edge cost.

    Planar problems reduce to a scalar second derivative times the
    difference pattern. In 3D the curvature correction enters through
    the residual axis; at zero residual the block becomes the scaled
    difference pattern exactly, and the formula approaches that limit
    continuously.
    """
    v = _residual(R_i, R_j, R_tilde)
    theta = np.linalg.norm(v)
    p = v.shape[0]
    if p == 1:
        h = kind.rho_ddot(theta)
        return np.array([[h, -h], [-h, h]])
    base = np.block([[np.eye(3), -np.eye(3)], [-np.eye(3), np.eye(3)]])
    if theta < _ZERO_RESIDUAL:
        P = np.zeros((6, 6))
        P[:3, :3] = R_i @ R_tilde
        P[3:, 3:] = R_j
        return kind.hessian_limit_scale * (P @ base @ P.T)
    u = v / theta
    rd = kind.rho_dot(theta)
    alpha = rd / (2.0 * math.tan(theta / 2.0))
    gamma = kind.rho_ddot(theta) - alpha
    beta = rd / 2.0
    Ht = alpha * np.eye(3) + gamma * np.outer(u, u) + beta * hat(u)
    Sym = alpha * np.eye(3) + gamma * np.outer(u, u)
    M = np.block([[Sym, -Ht], [-Ht.T, Sym]])
    P = np.zeros((6, 6))
    P[:3, :3] = R_i @ R_tilde
    P[3:, 3:] = R_j
    return P @ M @ P.T


# ---------------------------------------------------------------------------
# Assembly

def _gradient_and_cost(g: MeasurementGraph, R: RotationState, kind: Distance) -> tuple[np.ndarray, float]:
    B = np.zeros((g.n, g.p))
    total = 0.0
    for e in g.edges:
        v = _residual(R.mats[e.i], R.mats[e.j], e.R_tilde)
        theta = float(np.linalg.norm(v))
        total += e.kappa * kind.rho(theta)
        if theta < _ZERO_RESIDUAL:
            continue
        u = v / theta
        rd = kind.rho_dot(theta)
        if g.p == 1:
            gi, gj = -rd * u, rd * u
        else:
            gi, gj = -rd * (R.mats[e.i] @ e.R_tilde @ u), rd * (R.mats[e.j] @ u)
        B[e.i] -= e.kappa * gi
        B[e.j] -= e.kappa * gj
    return B, total


def cost(g: MeasurementGraph, R: RotationState, kind: Distance) -> float:
    """Total weighted edge cost at the given rotations."""
    return _gradient_and_cost(g, R, kind)[1]


def assemble_gradient_rhs(g: MeasurementGraph, R: RotationState, kind: Distance) -> np.ndarray:
    """Right-hand side for the surrogate system: row i is minus the gradient at vertex i.

    Column sums vanish (each edge contributes equal and opposite blocks
    along the residual axis), so the singular surrogate system is always
    feasible.
    """
    return _gradient_and_cost(g, R, kind)[0]


def laplacian_weights(g: MeasurementGraph, kind: Distance) -> WeightedGraph:
    """Edge weights of the surrogate Laplacian: kappa, doubled for the chordal cost."""
    pairs = [(e.i, e.j) for e in g.edges]
    w = [kind.laplacian_scale * e.kappa for e in g.edges]
    return WeightedGraph.from_edge_list(g.n, pairs, w)


def _apply_update(R: RotationState, V: np.ndarray) -> RotationState:
    out = R.copy()
    for i in range(R.n):
        out.mats[i] = exp_map(V[i]) @ out.mats[i]
    out.renormalize()
    return out


def separator_rows_by_owner(g: MeasurementGraph, partition: Partition) -> np.ndarray:
    """Number of separator rows each robot uploads gradient partials for.

    An edge is held by the robot owning its first endpoint; every
    separator endpoint of a held edge needs that robot's partial sum.
    """
    is_sep = np.zeros(g.n, dtype=bool)
    is_sep[partition.separators] = True
    touched: list[set[int]] = [set() for _ in range(partition.m)]
    for e in g.edges:
        a = partition.owner[e.i]
        for v in (e.i, e.j):
            if is_sep[v]:
                touched[a].add(v)
    return np.array([len(t) for t in touched], dtype=int)


# ---------------------------------------------------------------------------
# Solvers

def centralized_step(g: MeasurementGraph, R: RotationState, kind: Distance) -> RotationState:
    """One exact surrogate step: solve the weighted Laplacian system and retract.

    The singular system is solved to its minimum-norm representative
    (grounding plus zero-mean shift).
    """
    L = laplacian(laplacian_weights(g, kind))
    B = assemble_gradient_rhs(g, R, kind)
    V = solve_grounded(L, B)
    return _apply_update(R, V)


def collaborative_solve(
    g: MeasurementGraph,
    partition: Partition,
    R0: RotationState,
    config: SolverConfig,
    schur_mode: str = "spectral",
    oversampling: float = DEFAULT_OVERSAMPLING,
    threads: int = 1,
) -> tuple[RotationState, RunTrace]:
    """Iterate surrogate steps with the robot/server split system.

    The separator contribution is compressed and uploaded once; each
    iteration then uploads per-robot gradient partial sums for separator
    rows plus reduced right-hand sides, all metered. Stops when the
    gradient norm falls below config.grad_tol or after config.max_iters
    updates; non-convergence is reported in the trace, not raised.
    """
    kind = distance_by_name(config.distance)
    L = laplacian(laplacian_weights(g, kind))
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

    grad_sep_counts = separator_rows_by_owner(g, partition)

    R = R0.copy()
    trace = RunTrace(ledger=ledger)
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
        if partition.separators.size > 0:
            for a in range(partition.m):
                ledger.record(round_idx, a, "partial_grad", int(grad_sep_counts[a]) * g.p)
        V = dd.solve(blocks, server, B, ledger=ledger, round_idx=round_idx)
        if config.project_horizontal:
            V = V - V.mean(axis=0, keepdims=True)
        R = _apply_update(R, V)
        trace.iterations = k + 1
    return R, trace


def exact_newton_step(
    g: MeasurementGraph,
    R: RotationState,
    kind: Distance,
    partition: Partition | None = None,
    ledger: dd.CommsLedger | None = None,
    round_idx: int | None = None,
) -> RotationState:
    """One exact second-order step on the full (projected) Hessian.

    Dense solve, intended for small problems and as a baseline. When a
    partition and ledger are given, the per-robot separator-space
    contributions of the true Hessian are formed and their upload sizes
    metered (kind "schur", one event per robot per call).
    """
    n, p = g.n, g.p
    if n * p > 6000:
        raise NumericalError("problem too large for the dense second-order step")
    H = assemble_full_hessian(g, R, kind)
    B = assemble_gradient_rhs(g, R, kind)
    b = B.reshape(-1)

    ones_dir = np.tile(np.eye(p), (n, 1)) / math.sqrt(n)  # np x p, orthonormal columns
    Pn = ones_dir @ ones_dir.T
    Ph = np.eye(n * p) - Pn
    K = Ph @ H @ Ph
    sigma = max(np.trace(H) / (n * p), 1.0)
    try:
        cf = cho_factor(K + sigma * Pn)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"projected Hessian is not positive definite: {exc}") from exc
    v = cho_solve(cf, b)
    v = v - ones_dir @ (ones_dir.T @ v)  # clean round-off along the gauge direction
    V = v.reshape(n, p)

    if partition is not None and ledger is not None:
        if round_idx is None:
            round_idx = ledger.begin_round()
        for a, S_h in enumerate(_newton_schur_blocks(g, R, kind, partition)):
            nz = int(np.count_nonzero(np.abs(np.triu(S_h)) > 1e-12 * max(1.0, np.abs(S_h).max())))
            ledger.record(round_idx, a, "schur", nz)
    return _apply_update(R, V)


def assemble_full_hessian(g: MeasurementGraph, R: RotationState, kind: Distance) -> np.ndarray:
    """Dense np x np second-derivative matrix of the total cost."""
    n, p = g.n, g.p
    H = np.zeros((n * p, n * p))
    for e in g.edges:
        blk = e.kappa * edge_hessian(R.mats[e.i], R.mats[e.j], e.R_tilde, kind)
        si, sj = e.i * p, e.j * p
        H[si : si + p, si : si + p] += blk[:p, :p]
        H[si : si + p, sj : sj + p] += blk[:p, p:]
        H[sj : sj + p, si : si + p] += blk[p:, :p]
        H[sj : sj + p, sj : sj + p] += blk[p:, p:]
    return H


def _newton_schur_blocks(g, R, kind, partition) -> list[np.ndarray]:
    """Per-robot separator-space contributions of the true Hessian.

    Robot a assembles the Hessian of its local edges over its interior
    plus all separators and eliminates the interior part. Used only for
    communication accounting of the second-order baseline.
    """
    p = g.p
    C = partition.separators
    pos_in_C = np.full(g.n, -1, dtype=int)
    pos_in_C[C] = np.arange(C.size)
    out = []
    for a in range(partition.m):
        F = partition.interiors[a]
        pos_in_F = np.full(g.n, -1, dtype=int)
        pos_in_F[F] = np.arange(F.size)
        nf, ncs = F.size, C.size
        Hff = np.zeros((nf * p, nf * p))
        Hfc = np.zeros((nf * p, ncs * p))
        Hcc = np.zeros((ncs * p, ncs * p))

        def slot(v):
            if pos_in_F[v] >= 0:
                return ("f", pos_in_F[v] * p)
            return ("c", pos_in_C[v] * p)

        for e in g.edges:
            if partition.owner[e.i] != a or partition.owner[e.j] != a:
                continue
            blk = e.kappa * edge_hessian(R.mats[e.i], R.mats[e.j], e.R_tilde, kind)
            for (v, rows) in ((e.i, blk[:p]), (e.j, blk[p:])):
                kv, ov = slot(v)
                for (w, cols) in ((e.i, rows[:, :p]), (e.j, rows[:, p:])):
                    kw, ow = slot(w)
                    if kv == "f" and kw == "f":
                        Hff[ov : ov + p, ow : ow + p] += cols
                    elif kv == "f" and kw == "c":
                        Hfc[ov : ov + p, ow : ow + p] += cols
                    elif kv == "c" and kw == "f":
                        Hfc[ow : ow + p, ov : ov + p] += cols.T
                    else:
                        Hcc[ov : ov + p, ow : ow + p] += cols
        if nf > 0:
            try:
                X = np.linalg.solve(Hff, Hfc)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"robot {a} local Hessian interior block singular: {exc}") from exc
            S = Hcc - Hfc.T @ X
        else:
            S = Hcc
        out.append((S + S.T) / 2.0)
    return out


@dataclass
class HessianReport:
    delta_empirical: float
    kernel_match: bool
    lambda2: float
    lambda_max: float
    mu: float
    lipschitz: float
    kappa: float
    gamma: float
    epsilon: float


def hessian_report(
    g: MeasurementGraph, R: RotationState, kind: Distance, epsilon: float = 0.0
) -> HessianReport:
    """Compare the projected Hessian against the surrogate Laplacian.

    delta_empirical is the tightest symmetric spectral-equivalence
    exponent between the two quadratic forms on the gauge-orthogonal
    subspace; the derived curvature bounds and the worst-case rate
    factor gamma(delta + epsilon) follow from it. Dense, so limited to
    n * p <= 3000.
    """
    n, p = g.n, g.p
    if n * p > 3000:
        raise NumericalError("problem too large for the dense curvature report")
    H = assemble_full_hessian(g, R, kind)
    L = laplacian(laplacian_weights(g, kind)).toarray()
    M = np.kron(L, np.eye(p))

    Q = null_space(np.tile(np.eye(p), (1, n)))  # orthonormal basis orthogonal to the gauge
    Ap = Q.T @ H @ Q
    Bp = Q.T @ M @ Q
    lam = eigh((Ap + Ap.T) / 2.0, (Bp + Bp.T) / 2.0, eigvals_only=True)
    ev_L = np.linalg.eigvalsh(L)
    lambda2, lambda_max = float(ev_L[1]), float(ev_L[-1])
    scale = max(abs(lam).max(), 1.0)
    if lam.min() <= 1e-12 * scale:
        return HessianReport(
            delta_empirical=float("inf"),
            kernel_match=False,
            lambda2=lambda2,
            lambda_max=lambda_max,
            mu=0.0,
            lipschitz=float("inf"),
            kappa=float("inf"),
            gamma=float("inf"),
            epsilon=epsilon,
        )
    delta = float(np.max(np.abs(np.log(lam))))
    mu = math.exp(-delta) * lambda2
    lip = math.exp(delta) * lambda_max
    kappa = lip / mu
    return HessianReport(
        delta_empirical=delta,
        kernel_match=True,
        lambda2=lambda2,
        lambda_max=lambda_max,
        mu=mu,
        lipschitz=lip,
        kappa=kappa,
        gamma=gamma_factor(kappa, delta + epsilon),
        epsilon=epsilon,
    )
