"""Graph Laplacians, Schur complements and spectral sparsification.

All matrices are scipy CSR unless noted. A "Laplacian" here means a
symmetric PSD matrix with non-positive off-diagonal entries and zero row
sums; several routines check or rely on that structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve, eigh, null_space, subspace_angles

from .manifold import NumericalError

__all__ = [
    "WeightedGraph",
    "laplacian",
    "graph_from_laplacian",
    "schur_complement",
    "effective_resistances",
    "sparsify",
    "check_epsilon",
    "heuristic_sparsify",
    "solve_grounded",
    "upper_triangle_nnz",
    "save_triplets",
    "load_triplets",
    "DEFAULT_OVERSAMPLING",
    "EpsilonReport",
]

# Oversampling constant in the sample-count rule of `sparsify`. The rule
# only bites once the separator system is a few hundred vertices; below
# that the input comes back verbatim, which is the conservative choice.
DEFAULT_OVERSAMPLING = 4.0


@dataclass
class WeightedGraph:
    """Undirected weighted graph with positive weights, parallel edges merged."""

    n: int
    edges: np.ndarray  # (m, 2) int, each row i < j
    weights: np.ndarray  # (m,) positive floats

    @classmethod
    def from_edge_list(cls, n: int, pairs, weights) -> "WeightedGraph":
        acc: dict[tuple[int, int], float] = {}
        for (a, b), w in zip(pairs, weights):
            if a == b:
                raise ValueError(f"self loop at vertex {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a},{b}) outside 0..{n - 1}")
            if w <= 0:
                raise ValueError(f"edge ({a},{b}) has non-positive weight {w}")
            key = (min(a, b), max(a, b))
            acc[key] = acc.get(key, 0.0) + float(w)
        if acc:
            keys = sorted(acc)
            edges = np.array(keys, dtype=int)
            ws = np.array([acc[k] for k in keys])
        else:
            edges = np.zeros((0, 2), dtype=int)
            ws = np.zeros(0)
        return cls(n=n, edges=edges, weights=ws)


def laplacian(g: WeightedGraph) -> sp.csr_matrix:
    """Weighted graph Laplacian as CSR."""
    m = g.edges.shape[0]
    if m == 0:
        return sp.csr_matrix((g.n, g.n))
    i, j, w = g.edges[:, 0], g.edges[:, 1], g.weights
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-w, -w, w, w])
    L = sp.csr_matrix((vals, (rows, cols)), shape=(g.n, g.n))
    L.sum_duplicates()
    return L


def graph_from_laplacian(L: sp.spmatrix, tol: float = 0.0) -> WeightedGraph:
    """Recover the weighted graph underlying a Laplacian-structured matrix.

    Off-diagonal entries with magnitude at or below tol (relative to the
    largest entry) are treated as round-off and dropped; a genuinely
    positive off-diagonal raises.
    """
    C = sp.coo_matrix(sp.triu(L, k=1))
    scale = max(abs(C.data).max(), 1.0) if C.nnz else 1.0
    cut = tol * scale
    pairs, ws = [], []
    for a, b, v in zip(C.row, C.col, C.data):
        if abs(v) <= cut:
            continue
        if v > 0:
            raise ValueError(f"positive off-diagonal at ({a},{b}): {v}")
        pairs.append((a, b))
        ws.append(-v)
    return WeightedGraph.from_edge_list(L.shape[0], pairs, ws)


def _is_laplacian_like(A: sp.spmatrix, rtol: float = 1e-8) -> bool:
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return True
    rowsums = np.asarray(A.sum(axis=1)).ravel()
    return bool(np.max(np.abs(rowsums)) <= rtol * scale)


def schur_complement(L: sp.spmatrix, eliminate: np.ndarray) -> sp.csr_matrix:
    """Schur complement onto the vertices not listed in `eliminate`.

    The remaining vertices keep their original relative order. Requires
    the eliminated block to be nonsingular, which for a Laplacian means
    every eliminated component touches a kept vertex.
    """
    L = sp.csr_matrix(L)
    n = L.shape[0]
    elim = np.asarray(eliminate, dtype=int)
    keep = np.setdiff1d(np.arange(n), elim)
    if elim.size == 0:
        return L[keep][:, keep].tocsr()
    L_ff = sp.csc_matrix(L[elim][:, elim])
    L_fc = L[elim][:, keep]
    L_cc = L[keep][:, keep]
    try:
        lu = spla.splu(L_ff)
    except RuntimeError as exc:
        raise NumericalError(f"eliminated block is singular: {exc}") from exc
    X = lu.solve(L_fc.toarray())
    if not np.all(np.isfinite(X)):
        raise NumericalError("eliminated block is singular")
    S = L_cc.toarray() - L_fc.T.toarray() @ X
    S = (S + S.T) / 2.0
    return sp.csr_matrix(S)


def effective_resistances(L: sp.spmatrix, pairs: np.ndarray) -> np.ndarray:
    """Effective resistance across each requested vertex pair.

    Exact dense computation per connected component (grounded inverse).
    Pairs spanning two components have infinite resistance and raise.
    """
    L = sp.csr_matrix(L)
    n = L.shape[0]
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    ncomp, labels = csgraph.connected_components(_support(L), directed=False)
    out = np.empty(pairs.shape[0])
    # group pair queries by component
    by_comp: dict[int, list[int]] = {}
    for idx, (a, b) in enumerate(pairs):
        if labels[a] != labels[b]:
            raise NumericalError(f"vertices {a} and {b} lie in different components")
        by_comp.setdefault(int(labels[a]), []).append(idx)
    for comp, idxs in by_comp.items():
        verts = np.flatnonzero(labels == comp)
        if verts.size > 3000:
            raise NumericalError(f"component of size {verts.size} too large for dense resistances")
        if verts.size == 1:
            raise NumericalError("isolated vertex has no resistances")
        loc = {int(v): k for k, v in enumerate(verts)}
        Lc = L[verts][:, verts].toarray()
        # ground the first vertex of the component; resistances are
        # differences so any ground gives the same answer
        Lg = Lc[1:, 1:]
        try:
            cf = cho_factor(Lg)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"component Laplacian not factorizable: {exc}") from exc
        Minv = cho_solve(cf, np.eye(Lg.shape[0]))
        for idx in idxs:
            a, b = (loc[int(v)] for v in pairs[idx])
            if a == 0:
                out[idx] = Minv[b - 1, b - 1]
            elif b == 0:
                out[idx] = Minv[a - 1, a - 1]
            else:
                out[idx] = Minv[a - 1, a - 1] + Minv[b - 1, b - 1] - 2 * Minv[a - 1, b - 1]
    return out


def _support(L: sp.spmatrix) -> sp.csr_matrix:
    C = sp.coo_matrix(sp.triu(L, k=1))
    mask = C.data != 0
    return sp.csr_matrix(
        (np.ones(mask.sum()), (C.row[mask], C.col[mask])), shape=L.shape
    )


def _component_labels_of(L: sp.spmatrix) -> np.ndarray:
    return csgraph.connected_components(_support(L), directed=False)[1]


def sparsify(
    S: sp.spmatrix,
    epsilon: float,
    rng: np.random.Generator,
    oversampling: float = DEFAULT_OVERSAMPLING,
) -> sp.csr_matrix:
    """Spectral sparsifier of a Laplacian by effective-resistance sampling.

    Draws q = ceil(oversampling * n_c * ln(max(n_c, 2)) / eps'^2) edges
    with replacement, eps' = 1 - exp(-epsilon) and n_c the number of
    non-isolated vertices, each edge with probability proportional to
    w_e * R_e. Sampled copies contribute w_e / (q p_e) and duplicates
    merge. If the budget q already covers every edge, or epsilon is 0,
    the input comes back unchanged. Connectivity of each component is
    re-checked after sampling: on a kernel change the draw is retried up
    to 10 times before falling back to the exact input.
    """
    S = sp.csr_matrix(S)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon == 0.0:
        return S.copy()
    g = graph_from_laplacian(S, tol=1e-12)
    m = g.edges.shape[0]
    if m == 0:
        return S.copy()
    degree = np.zeros(g.n, dtype=int)
    for a, b in g.edges:
        degree[a] += 1
        degree[b] += 1
    n_c = int(np.count_nonzero(degree))
    eps_prime = 1.0 - math.exp(-epsilon)
    q = math.ceil(oversampling * n_c * math.log(max(n_c, 2)) / eps_prime**2)
    if q >= m:
        return S.copy()

    resist = effective_resistances(S, g.edges)
    mass = g.weights * resist
    probs = mass / mass.sum()
    labels_ref = _component_labels_of(S)

    for _ in range(10):
        counts = rng.multinomial(q, probs)
        picked = np.flatnonzero(counts)
        new_w = g.weights[picked] * counts[picked] / (q * probs[picked])
        sampled = WeightedGraph(n=g.n, edges=g.edges[picked], weights=new_w)
        out = laplacian(sampled)
        if np.array_equal(_component_labels_of(out), labels_ref):
            return out
    return S.copy()


@dataclass
class EpsilonReport:
    epsilon_achieved: float
    kernel_match: bool


def check_epsilon(A, B, kernel_tol: float = 1e-10) -> EpsilonReport:
    """Measure how far two PSD matrices are from spectral equivalence.

    Returns the smallest eps with exp(-eps) B <= A <= exp(eps) B on the
    common image, i.e. the largest |log| of the generalized eigenvalues
    after projecting out the null space. kernel_match reports whether
    the two null spaces agree (within 1e-8 radians of subspace angle);
    when they do not, epsilon_achieved is infinite.
    """
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
    B = np.asarray(B.toarray() if sp.issparse(B) else B, dtype=float)
    if A.shape != B.shape:
        raise ValueError("shape mismatch")
    n = A.shape[0]

    def kernel(M):
        w, V = np.linalg.eigh((M + M.T) / 2.0)
        scale = max(abs(w).max(), 1.0)
        return V[:, w <= kernel_tol * scale]

    Ka, Kb = kernel(A), kernel(B)
    if Ka.shape[1] != Kb.shape[1]:
        return EpsilonReport(float("inf"), False)
    if Ka.shape[1] > 0:
        angles = subspace_angles(Ka, Kb)
        if angles.size and angles.max() > 1e-8:
            return EpsilonReport(float("inf"), False)
    if Ka.shape[1] == n:
        return EpsilonReport(0.0, True)
    # orthonormal basis of the common image
    Q = null_space(Kb.T) if Kb.shape[1] > 0 else np.eye(n)
    Ap = Q.T @ A @ Q
    Bp = Q.T @ B @ Q
    try:
        vals = eigh(Ap, Bp, eigvals_only=True)
    except np.linalg.LinAlgError:
        return EpsilonReport(float("inf"), False)
    if np.any(vals <= 0):
        return EpsilonReport(float("inf"), False)
    return EpsilonReport(float(np.max(np.abs(np.log(vals)))), True)


def heuristic_sparsify(S: sp.spmatrix, mode: str) -> sp.csr_matrix:
    """Crude sparsity-pattern baselines, no spectral guarantee.

    mode "block_diagonal" keeps only the diagonal (Jacobi); mode "tree"
    keeps the diagonal plus the off-diagonals of a maximum-weight
    spanning tree per component.
    """
    S = sp.csr_matrix(S)
    if mode == "block_diagonal":
        return sp.csr_matrix(sp.diags(S.diagonal()))
    if mode != "tree":
        raise ValueError(f"unknown mode {mode!r}")
    g = graph_from_laplacian(S, tol=1e-12)
    if g.edges.shape[0] == 0:
        return S.copy()
    W = sp.csr_matrix(
        (g.weights, (g.edges[:, 0], g.edges[:, 1])), shape=S.shape
    )
    # minimum spanning tree of negated weights = maximum-weight tree
    mst = csgraph.minimum_spanning_tree(-W)
    keep = sp.coo_matrix(mst)
    rows, cols = keep.row, keep.col
    vals = -keep.data  # stored negated, flip back to positive weights
    out = sp.lil_matrix(S.shape)
    out.setdiag(S.diagonal())
    for a, b, w in zip(rows, cols, vals):
        out[a, b] = -w
        out[b, a] = -w
    return sp.csr_matrix(out)


def solve_grounded(L: sp.spmatrix, B: np.ndarray) -> np.ndarray:
    """Minimum-norm solution of the singular system L X = B.

    L must be a connected Laplacian and each column of B orthogonal to
    the all-ones vector. Vertex 0 is grounded for the factorization and
    the result is shifted to zero column means, which for a connected
    Laplacian is exactly the minimum-norm representative.
    """
    L = sp.csr_matrix(L)
    n = L.shape[0]
    B = np.asarray(B, dtype=float)
    squeeze = B.ndim == 1
    if squeeze:
        B = B[:, None]
    colsums = B.sum(axis=0)
    if np.linalg.norm(colsums) > 1e-8 * max(1.0, np.linalg.norm(B)):
        raise NumericalError("rhs not orthogonal to the all-ones vector")
    X = np.zeros_like(B)
    if n > 1:
        try:
            lu = spla.splu(sp.csc_matrix(L[1:, 1:]))
        except RuntimeError as exc:
            raise NumericalError(f"grounded Laplacian is singular (graph disconnected?): {exc}") from exc
        X[1:] = lu.solve(B[1:])
    resid = np.linalg.norm(L @ X - B)
    if not np.isfinite(resid) or resid > 1e-10 * max(1.0, np.linalg.norm(B)):
        raise NumericalError(f"grounded solve residual {resid:.3e}")
    X = X - X.mean(axis=0, keepdims=True)
    return X[:, 0] if squeeze else X


def upper_triangle_nnz(A: sp.spmatrix) -> int:
    """Number of structurally nonzero entries on or above the diagonal."""
    A = sp.csr_matrix(A).copy()
    A.eliminate_zeros()
    return int(sp.triu(A, k=0).nnz)


def save_triplets(path: str, A: sp.spmatrix) -> None:
    """Plain-text triplet dump: a header line "n m", then "row col value"."""
    C = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write(f"{C.shape[0]} {C.nnz}\n")
        for r, c, v in zip(C.row, C.col, C.data):
            fh.write(f"{r} {c} {format(float(v), '.17g')}\n")


def load_triplets(path: str) -> sp.csr_matrix:
    with open(path) as fh:
        n, m = (int(s) for s in fh.readline().split())
        rows, cols, vals = [], [], []
        for _ in range(m):
            r, c, v = fh.readline().split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
