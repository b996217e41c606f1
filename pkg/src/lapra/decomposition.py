"""Split Laplacian solves between robots and a server.

The vertex set is partitioned into per-robot interiors plus a shared
separator set. Robots eliminate their interiors locally and upload a
(possibly sparsified) separator-space contribution once, then per solve
upload a reduced right-hand side. The server solves the separator system
and broadcasts it back for local back-substitution. Downloads are free;
every upload is metered in a CommsLedger.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .laplacians import (
    _is_laplacian_like,
    heuristic_sparsify,
    sparsify,
    upper_triangle_nnz,
    DEFAULT_OVERSAMPLING,
)
from .manifold import NumericalError
from .pose_graph import Partition

__all__ = [
    "CommsLedger",
    "LedgerEvent",
    "RobotBlock",
    "ServerState",
    "build_blocks",
    "sparsified_schur",
    "solve",
    "SCHUR_MODES",
]

BYTES_PER_SCALAR = 8
SCHUR_MODES = ("spectral", "block_diagonal", "tree")
_RESID_TOL = 1e-10


@dataclass
class LedgerEvent:
    round: int
    robot: int
    kind: str  # "schur" | "rhs" | "partial_grad"
    scalars: int

    @property
    def bytes(self) -> int:
        return BYTES_PER_SCALAR * self.scalars


@dataclass
class CommsLedger:
    """Append-only record of robot-to-server uploads."""

    events: list[LedgerEvent] = field(default_factory=list)
    current_round: int = 0

    def record(self, round: int, robot: int, kind: str, scalars: int) -> None:
        if kind not in ("schur", "rhs", "partial_grad"):
            raise ValueError(f"unknown event kind {kind!r}")
        self.events.append(LedgerEvent(round, robot, kind, int(scalars)))

    def begin_round(self) -> int:
        self.current_round += 1
        return self.current_round

    def total_scalars(self) -> int:
        return sum(e.scalars for e in self.events)

    def total_bytes(self) -> int:
        return BYTES_PER_SCALAR * self.total_scalars()

    def bytes_by_kind(self, kind: str) -> int:
        return BYTES_PER_SCALAR * sum(e.scalars for e in self.events if e.kind == kind)

    def to_csv(self, path: str | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "robot", "kind", "scalars", "bytes"])
        for e in self.events:
            w.writerow([e.round, e.robot, e.kind, e.scalars, e.bytes])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass
class RobotBlock:
    """One robot's share of the Laplacian system.

    interior holds global vertex ids; L_ac maps interior rows to the
    global separator ordering. Lcc_local is this robot's local-edge
    contribution to the separator block, so that the per-robot pieces
    plus the cross-edge part add up to the full reduced matrix, and
    adj_sep flags the separators its interior actually touches.
    """

    alpha: int
    interior: np.ndarray
    L_aa: sp.csc_matrix
    L_ac: sp.csr_matrix
    Lcc_local: sp.csr_matrix
    adj_sep: np.ndarray
    lu: object | None = None
    S_tilde: sp.csr_matrix | None = None

    def interior_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.interior.size == 0:
            return np.zeros_like(rhs)
        sol = self.lu.solve(rhs)
        resid = np.linalg.norm(self.L_aa @ sol - rhs)
        if not np.isfinite(resid) or resid > _RESID_TOL * max(1.0, np.linalg.norm(rhs)):
            raise NumericalError(f"robot {self.alpha} interior solve residual {resid:.3e}")
        return sol

    def schur_contribution(self) -> sp.csr_matrix:
        """Exact separator-space contribution after eliminating the interior."""
        if self.interior.size == 0:
            return self.Lcc_local.copy()
        X = self.interior_solve(self.L_ac.toarray())
        S = self.Lcc_local.toarray() - self.L_ac.T @ X
        S = (S + S.T) / 2.0
        S[np.abs(S) < 1e-14 * max(1.0, np.abs(S).max())] = 0.0
        return sp.csr_matrix(S)


@dataclass
class ServerState:
    separators: np.ndarray  # global ids, ascending
    L_Gc: sp.csr_matrix  # cross-robot edges only
    L_full: sp.csr_matrix  # kept for the single-robot fallback
    S_tilde: sp.csr_matrix | None = None
    _lu: object | None = None
    _grounded: bool = True

    def set_reduced(self, S: sp.csr_matrix) -> None:
        self.S_tilde = sp.csr_matrix(S)
        nc = S.shape[0]
        if nc == 0:
            self._lu = None
            return
        if _is_laplacian_like(self.S_tilde):
            # singular: ground the lowest-index separator
            self._grounded = True
            M = self.S_tilde[1:, 1:] if nc > 1 else sp.csr_matrix((0, 0))
        else:
            self._grounded = False
            M = self.S_tilde
        if M.shape[0] == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(sp.csc_matrix(M))
        except RuntimeError as exc:
            raise NumericalError(f"reduced separator system is singular: {exc}") from exc

    def reduced_solve(self, U: np.ndarray) -> np.ndarray:
        """Solve the separator system; result has zero column means."""
        nc = self.S_tilde.shape[0]
        if nc == 0:
            return U[:0]
        if self._grounded:
            if nc == 1:
                return np.zeros_like(U)
            Xg = self._lu.solve(U[1:])
            X = np.vstack([np.zeros((1, U.shape[1])), Xg])
        else:
            X = self._lu.solve(U)
        resid = np.linalg.norm(self.S_tilde @ X - U) if not self._grounded else None
        if resid is not None and resid > _RESID_TOL * max(1.0, np.linalg.norm(U)):
            raise NumericalError(f"reduced solve residual {resid:.3e}")
        return X - X.mean(axis=0, keepdims=True)


def build_blocks(L: sp.spmatrix, partition: Partition) -> tuple[list[RobotBlock], ServerState]:
    """Slice a connected Laplacian into per-robot blocks plus server state.

    Interior factorizations are computed once here and reused by every
    later solve. With a single robot there are no separators and the
    server just keeps a grounded factorization of the whole system.
    """
    L = sp.csr_matrix(L)
    n = L.shape[0]
    if partition.owner.shape[0] != n:
        raise ValueError("partition size does not match matrix")
    C = partition.separators
    pos_in_C = np.full(n, -1, dtype=int)
    pos_in_C[C] = np.arange(C.size)

    coo = sp.coo_matrix(sp.triu(L, k=1))
    owner = partition.owner
    cross_r, cross_c, cross_w = [], [], []
    local_edges: list[list[tuple[int, int, float]]] = [[] for _ in range(partition.m)]
    for a, b, v in zip(coo.row, coo.col, coo.data):
        if v == 0:
            continue
        w = -v
        if w <= 0:
            raise ValueError(f"positive off-diagonal at ({a},{b})")
        if owner[a] != owner[b]:
            cross_r.append(pos_in_C[a])
            cross_c.append(pos_in_C[b])
            cross_w.append(w)
        else:
            local_edges[owner[a]].append((a, b, w))

    nc = C.size
    if cross_r:
        rows = np.array(cross_r + cross_c + cross_r + cross_c)
        cols = np.array(cross_c + cross_r + cross_r + cross_c)
        vals = np.concatenate([-np.array(cross_w), -np.array(cross_w), cross_w, cross_w])
        L_Gc = sp.csr_matrix((vals, (rows, cols)), shape=(nc, nc))
        L_Gc.sum_duplicates()
    else:
        L_Gc = sp.csr_matrix((nc, nc))

    if partition.m == 1 or nc == 0:
        if partition.m > 1:
            raise NumericalError("multi-robot partition with no separators on a connected graph")
        # single robot: no decomposition, keep a grounded whole-problem
        # factorization on the server and a stub block for the robot
        stub = RobotBlock(
            alpha=0,
            interior=np.arange(n),
            L_aa=sp.csc_matrix((0, 0)),
            L_ac=sp.csr_matrix((n, 0)),
            Lcc_local=sp.csr_matrix((0, 0)),
            adj_sep=np.zeros(0, dtype=bool),
        )
        server = ServerState(separators=C, L_Gc=L_Gc, L_full=L)
        server.S_tilde = sp.csr_matrix((0, 0))
        server._grounded = True
        if n > 1:
            try:
                server._lu = spla.splu(sp.csc_matrix(L[1:, 1:]))
            except RuntimeError as exc:
                raise NumericalError(f"grounded system is singular: {exc}") from exc
        return [stub], server

    blocks = []
    for a in range(partition.m):
        F = partition.interiors[a]
        L_aa = sp.csc_matrix(L[F][:, F])
        L_ac = sp.csr_matrix(L[F][:, C])
        # local-edge Laplacian restricted to separator rows/cols
        diag = np.zeros(nc)
        rr, cc, vv = [], [], []
        for (u, v, w) in local_edges[a]:
            for x in (u, v):
                if pos_in_C[x] >= 0:
                    diag[pos_in_C[x]] += w
            if pos_in_C[u] >= 0 and pos_in_C[v] >= 0:
                rr += [pos_in_C[u], pos_in_C[v]]
                cc += [pos_in_C[v], pos_in_C[u]]
                vv += [-w, -w]
        Lcc_local = sp.csr_matrix((vv + list(diag), (rr + list(range(nc)), cc + list(range(nc)))), shape=(nc, nc))
        Lcc_local.sum_duplicates()
        Lcc_local.eliminate_zeros()
        adj = np.asarray((abs(L_ac) > 0).sum(axis=0)).ravel() > 0
        lu = None
        if F.size > 0:
            try:
                lu = spla.splu(L_aa)
            except RuntimeError as exc:
                raise NumericalError(
                    f"robot {a} interior block is singular (interior component "
                    f"not attached to any separator): {exc}"
                ) from exc
        blocks.append(
            RobotBlock(
                alpha=a,
                interior=F,
                L_aa=L_aa,
                L_ac=L_ac,
                Lcc_local=Lcc_local,
                adj_sep=adj,
                lu=lu,
            )
        )

    server = ServerState(separators=C, L_Gc=L_Gc, L_full=L)
    return blocks, server


def sparsified_schur(
    blocks: list[RobotBlock],
    server: ServerState,
    epsilon: float,
    rng: np.random.Generator,
    ledger: CommsLedger | None = None,
    mode: str = "spectral",
    oversampling: float = DEFAULT_OVERSAMPLING,
    threads: int = 1,
) -> None:
    """One-time upload phase: robots send separator-space contributions.

    Each robot eliminates its interior, compresses the result according
    to `mode` (spectral sampling at quality epsilon, or one of the
    heuristic patterns) and uploads it. The server accumulates the
    reduced matrix and factors it for reuse across later solves.
    """
    if mode not in SCHUR_MODES:
        raise ValueError(f"mode must be one of {SCHUR_MODES}")
    if server.separators.size == 0:
        return  # single robot, nothing to exchange
    rngs = rng.spawn(len(blocks))

    def one(idx: int) -> sp.csr_matrix:
        S = blocks[idx].schur_contribution()
        if mode == "spectral":
            return sparsify(S, epsilon, rngs[idx], oversampling=oversampling)
        return heuristic_sparsify(S, mode)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(blocks))))
    else:
        results = [one(i) for i in range(len(blocks))]

    total = sp.csr_matrix(server.L_Gc, copy=True)
    for blk, S_t in zip(blocks, results):
        blk.S_tilde = S_t
        total = total + S_t
        if ledger is not None:
            ledger.record(0, blk.alpha, "schur", upper_triangle_nnz(S_t))
    server.set_reduced(sp.csr_matrix(total))


def solve(
    blocks: list[RobotBlock],
    server: ServerState,
    B: np.ndarray,
    ledger: CommsLedger | None = None,
    round_idx: int | None = None,
) -> np.ndarray:
    """Solve L X = B through the robot/server split.

    B must be n x k with every column orthogonal to the all-ones vector
    (the system is singular and anything else is infeasible). Robots
    upload reduced right-hand sides (metered, separator-adjacent rows
    only); the server solves the separator system and robots
    back-substitute. Returns the full X with the separator rows
    normalized to zero column means.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n = server.L_full.shape[0]
    if B.shape[0] != n:
        raise ValueError("rhs size does not match system")
    colsums = B.sum(axis=0)
    if np.linalg.norm(colsums) > 1e-8 * max(1.0, np.linalg.norm(B)):
        raise NumericalError("rhs not orthogonal to the all-ones vector")

    C = server.separators
    k = B.shape[1]
    if C.size == 0:
        # single robot: grounded whole-problem solve
        X = np.zeros((n, k))
        if n > 1:
            X[1:] = server._lu.solve(B[1:])
        resid = np.linalg.norm(server.L_full @ X - B)
        if resid > _RESID_TOL * max(1.0, np.linalg.norm(B)):
            raise NumericalError(f"grounded solve residual {resid:.3e}")
        return X - X.mean(axis=0, keepdims=True)

    if server.S_tilde is None:
        raise RuntimeError("call sparsified_schur before solve")
    if ledger is not None and round_idx is None:
        round_idx = ledger.begin_round()

    U = B[C].copy()
    Ys = []
    for blk in blocks:
        if blk.interior.size == 0:
            Ys.append(np.zeros((0, k)))
        else:
            Y = blk.interior_solve(B[blk.interior])
            Ys.append(Y)
            U -= blk.L_ac.T @ Y
        if ledger is not None:
            ledger.record(round_idx, blk.alpha, "rhs", int(blk.adj_sep.sum()) * k)

    X_c = server.reduced_solve(U)

    X = np.zeros((n, k))
    X[C] = X_c
    for blk, Y in zip(blocks, Ys):
        if blk.interior.size == 0:
            continue
        X[blk.interior] = Y - blk.interior_solve((blk.L_ac @ X_c))
    return X
