"""Post-hoc behaviour analysis.

Covers the potential picture of the one-dimensional loop, PCA-based
effective dimension of behaviour chunks, subspace overlap between chunks,
and hierarchical clustering of controller matrices.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


# ---------------------------------------------------------------------------
# behaviour log

@dataclass
class BehaviorLog:
    """Time-indexed table with named float columns.

    Column ``t`` holds the step index.  Vector quantities are stored as
    several columns sharing a prefix (``s0``, ``s1``, ... or ``C0_1`` for
    matrix entries) and recovered with :meth:`block`.
    """

    columns: list[str]
    rows: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, len(self.columns))
        if len(set(self.columns)) != len(self.columns):
            raise ContractError("duplicate column names")
        if len(self.rows) > 1 and "t" in self.columns:
            t = self.column("t")
            if np.any(np.diff(t) <= 0):
                raise ContractError("log times must be strictly increasing")

    def __len__(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"no column {name!r}") from None

    def block(self, prefix: str) -> np.ndarray:
        """All columns named ``prefix`` or ``prefix<digits...>`` as a matrix."""
        idx = [i for i, c in enumerate(self.columns)
               if c == prefix or (c.startswith(prefix) and c[len(prefix):].replace("_", "").isdigit())]
        if not idx:
            raise KeyError(f"no columns with prefix {prefix!r}")
        return self.rows[:, idx]

    def to_csv(self, path=None) -> str:
        """CSV text with a header row; floats use 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow(["%.17g" % v for v in row])
        text = buf.getvalue()
        if path is not None:
            try:
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write(text)
            except OSError as exc:
                raise OSError(f"cannot write log to {path}: {exc}") from exc
        return text

    @classmethod
    def from_csv(cls, source) -> "BehaviorLog":
        """Parse CSV text or a path written by :meth:`to_csv`."""
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            try:
                with open(source, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise OSError(f"cannot read log {source}: {exc}") from exc
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        data = [[float(v) for v in row] for row in reader if row]
        return cls(header, np.array(data, dtype=float).reshape(-1, len(header)))


# ---------------------------------------------------------------------------
# potential picture of the one-dimensional loop

def hysteresis_potential(z, C: float, h: float):
    """``U(z) = -C ln cosh z - h z + z^2 / 2``.

    ``-dU/dz = C tanh z + h - z`` is the increment of the map
    ``z -> C tanh z + h``.  ``ln cosh`` is evaluated in an overflow-safe form.
    """
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    logcosh = az + np.log1p(np.exp(-2.0 * az)) - math.log(2.0)
    U = -C * logcosh - h * z + 0.5 * z * z
    return float(U) if U.ndim == 0 else U


def saddle_node_threshold(C: float) -> float:
    """Bias magnitude at which one of the two stable states of ``z -> C tanh z + h`` vanishes.

    The tangency ``C g'(z*) = 1`` gives ``tanh z* = sqrt(1 - 1/C)`` and
    ``h_c = C tanh z* - z*``.  Raises :class:`ContractError` for ``C <= 1``
    where the map has a single fixed point.
    """
    if not C > 1.0:
        raise ContractError(f"no bistability for C={C} <= 1")
    t = math.sqrt(1.0 - 1.0 / C)
    return C * t - math.atanh(t)


def count_fixed_points(C: float, h: float, z_max: float | None = None, n_grid: int = 20001) -> int:
    """Number of solutions of ``C tanh z + h = z`` found by sign changes on a grid."""
    z_max = z_max if z_max is not None else abs(C) + abs(h) + 2.0
    z = np.linspace(-z_max, z_max, n_grid)
    f = C * np.tanh(z) + h - z
    sgn = np.sign(f)
    return int(np.count_nonzero(sgn[:-1] * sgn[1:] < 0) + np.count_nonzero(sgn == 0))


def saddle_node_threshold_scan(C: float, h_step: float = 1e-3, h_max: float | None = None) -> float:
    """Brute-force threshold: smallest ``h`` on a grid at which the map has one fixed point.

    Independent of the tangency formula; used as a test oracle.  The fixed
    point count is refined by bisection between the last bistable and the
    first monostable grid value.
    """
    h_max = h_max if h_max is not None else C
    hs = np.arange(0.0, h_max, h_step)
    prev = 0.0
    for h in hs:
        if count_fixed_points(C, h) < 3:
            lo, hi = prev, h
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if count_fixed_points(C, mid, n_grid=200001) >= 3:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
        prev = h
    raise ContractError("no threshold found below h_max")


# ---------------------------------------------------------------------------
# effective dimension

def _pca(chunk: np.ndarray):
    X = np.asarray(chunk, dtype=float)
    X = X - X.mean(axis=0)
    cov = X.T @ X / max(X.shape[0] - 1, 1)
    w, U = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.lexsort((np.arange(len(w)), -w))  # descending, ties by index
    return np.clip(w[order], 0.0, None), U[:, order]


def effective_dimension(chunk, ratio: float = 0.95) -> float:
    """Interpolated number of principal components capturing ``ratio`` of the variance.

    With cumulative ratios ``r_k`` (``r_0 = 0``) and the first ``k`` such that
    ``r_k >= ratio`` the result is ``(k-1) + (ratio - r_{k-1}) / (r_k - r_{k-1})``.
    A chunk without variance has dimension 0.

    Examples
    --------
    >>> rng = np.random.default_rng(0)
    >>> round(effective_dimension(np.outer(rng.normal(size=50), [1.0, 2.0])), 6)
    0.95
    """
    X = np.atleast_2d(np.asarray(chunk, dtype=float))
    if X.shape[0] < 2:
        raise ContractError("effective dimension needs at least two samples")
    w, _ = _pca(X)
    total = w.sum()
    if total <= 0 or total < 1e-14 * np.abs(X).max() ** 2:
        return 0.0
    r = np.concatenate([[0.0], np.cumsum(w) / total])
    k = int(np.searchsorted(r, ratio - 1e-15, side="left"))
    k = min(max(k, 1), len(w))
    return (k - 1) + (ratio - r[k - 1]) / (r[k] - r[k - 1])


def dimension_curve(log, chunk_lengths, ratio: float = 0.95, prefix: str = "s") -> np.ndarray:
    """Mean and standard deviation of the effective dimension per chunk length.

    ``log`` is a :class:`BehaviorLog` (the ``prefix`` block is used) or a
    samples x channels array.  The series is cut into disjoint chunks.
    Returns rows ``(length, mean, std)``.
    """
    X = log.block(prefix) if isinstance(log, BehaviorLog) else np.asarray(log, dtype=float)
    out = []
    for L in chunk_lengths:
        L = int(L)
        n_chunks = X.shape[0] // L
        if L < 2 or n_chunks < 3:
            raise ContractError(f"need at least 3 chunks of length {L}, have {n_chunks}")
        dims = [effective_dimension(X[i * L:(i + 1) * L], ratio) for i in range(n_chunks)]
        out.append((L, float(np.mean(dims)), float(np.std(dims))))
    return np.array(out)


def chunk_overlap(chunk_a, chunk_b, n_components: int = 6) -> float:
    """Distance ``1 - |v| / sqrt(n_components)`` between the principal subspaces.

    ``v_i`` is the largest absolute overlap of the ``i``-th principal
    direction of ``chunk_a`` with any of the leading directions of
    ``chunk_b``.  Components beyond a chunk's rank count as ``v_i = 0``; the
    result is symmetrised so that the distance does not depend on order.
    """
    A = np.asarray(chunk_a, dtype=float)
    B = np.asarray(chunk_b, dtype=float)
    if A.shape[1] != B.shape[1]:
        raise ContractError("chunks must have the same number of channels")
    if min(A.shape[0], B.shape[0]) < n_components:
        raise ContractError(f"chunks need at least {n_components} samples")
    Pa, Pb = _principal(A, n_components), _principal(B, n_components)

    def one_way(P, Q):
        v = np.zeros(n_components)
        if P.shape[1] and Q.shape[1]:
            v[:P.shape[1]] = np.abs(P.T @ Q).max(axis=1)
        return float(np.linalg.norm(v))

    sim = 0.5 * (one_way(Pa, Pb) + one_way(Pb, Pa)) / math.sqrt(n_components)
    return float(min(max(1.0 - sim, 0.0), 1.0))


def overlap_matrix(X, chunk_length: int, n_components: int = 6) -> np.ndarray:
    """Pairwise :func:`chunk_overlap` distances between disjoint chunks of ``X``."""
    X = np.asarray(X, dtype=float)
    n_chunks = X.shape[0] // int(chunk_length)
    if n_chunks < 1:
        raise ContractError(f"series of length {X.shape[0]} has no chunk of length {chunk_length}")
    k = min(n_components, X.shape[1])
    chunks = [X[i * chunk_length:(i + 1) * chunk_length] for i in range(n_chunks)]
    return distance_matrix(chunks, lambda a, b: chunk_overlap(a, b, k))


def _principal(X: np.ndarray, k: int) -> np.ndarray:
    w, U = _pca(X)
    tol = w.max(initial=0.0) * X.shape[1] * 1e-12 if w.size else 0.0
    rank = int(np.count_nonzero(w > tol))
    return U[:, :min(k, rank)]


# ---------------------------------------------------------------------------
# parameter distance and clustering

def param_distance(C1, C2) -> float:
    """``sum_ij (|C1_ij| - |C2_ij|)^2``, blind to sign flips of matrix entries."""
    A = np.asarray(C1, dtype=float)
    B = np.asarray(C2, dtype=float)
    if A.shape != B.shape:
        raise ContractError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.sum((np.abs(A) - np.abs(B)) ** 2))


def distance_matrix(items, metric=param_distance) -> np.ndarray:
    n = len(items)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = metric(items[i], items[j])
    return D


@dataclass
class Dendrogram:
    """Result of agglomerative clustering.

    ``merges`` lists ``(id_a, id_b, height, size)``; leaves have ids
    ``0 .. n-1`` and the cluster created by merge ``k`` has id ``n + k``,
    the convention used by scipy's linkage matrices.
    """

    merges: list[tuple[int, int, float, int]]
    labels: list[str]
    linkage: str = "average"

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    def linkage_matrix(self) -> np.ndarray:
        return np.array([[a, b, h, s] for a, b, h, s in self.merges], dtype=float).reshape(-1, 4)

    def cut(self, n_clusters: int) -> np.ndarray:
        """Flat cluster labels (0-based, ordered by first leaf) for ``n_clusters`` groups."""
        n = self.n_leaves
        if not 1 <= n_clusters <= n:
            raise ContractError(f"cannot cut {n} leaves into {n_clusters} clusters")
        parent = list(range(2 * n))
        for k, (a, b, _, _) in enumerate(self.merges[: n - n_clusters]):
            parent[a] = parent[b] = n + k

        def root(i):
            while parent[i] != i:
                i = parent[i]
            return i

        roots = [root(i) for i in range(n)]
        remap: dict[int, int] = {}
        return np.array([remap.setdefault(r, len(remap)) for r in roots])

    def newick(self) -> str:
        n = self.n_leaves
        if n == 0:
            return ";"
        nodes = {i: (self.labels[i], 0.0) for i in range(n)}
        for k, (a, b, h, _) in enumerate(self.merges):
            (sa, ha), (sb, hb) = nodes.pop(a), nodes.pop(b)
            nodes[n + k] = (f"({sa}:{h - ha:.6g},{sb}:{h - hb:.6g})", h)
        return " ".join(s for s, _ in nodes.values()) + ";"


def hierarchical_cluster(distance_matrix, labels=None, linkage: str = "average") -> Dendrogram:
    """Agglomerative clustering of a precomputed distance matrix.

    ``linkage`` is ``average`` (default), ``single`` or ``complete``.  At
    each step the closest pair of active clusters is merged; ties go to the
    pair with the lowest indices.
    """
    D = np.asarray(distance_matrix, dtype=float)
    n = D.shape[0]
    if D.ndim != 2 or D.shape[1] != n:
        raise ContractError("distance matrix must be square")
    if not np.allclose(D, D.T, rtol=0, atol=1e-12 * max(1.0, np.abs(D).max(initial=0))):
        raise ContractError("distance matrix must be symmetric")
    if np.any(D < 0) or np.any(np.diag(D) != 0):
        raise ContractError("distances must be nonnegative with zero diagonal")
    if linkage not in ("average", "single", "complete"):
        raise ContractError(f"unknown linkage {linkage!r}")
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    active = {i: [i] for i in range(n)}
    ids = list(range(n))          # cluster id per active slot
    dist = D.copy()
    merges = []
    slots = list(range(n))
    for k in range(n - 1):
        best = None
        for ii, p in enumerate(slots):
            for q in slots[ii + 1:]:
                d = dist[p, q]
                if best is None or d < best[0]:
                    best = (d, p, q)
        d, p, q = best
        a, b = ids[p], ids[q]
        size_p, size_q = len(active[p]), len(active[q])
        members = active.pop(p) + active.pop(q)
        merges.append((min(a, b), max(a, b), float(d), len(members)))
        # slot p now holds the merged cluster
        for r in slots:
            if r in (p, q):
                continue
            if linkage == "average":
                nd = (size_p * dist[p, r] + size_q * dist[q, r]) / (size_p + size_q)
            elif linkage == "single":
                nd = min(dist[p, r], dist[q, r])
            else:
                nd = max(dist[p, r], dist[q, r])
            dist[p, r] = dist[r, p] = nd
        active[p] = members
        ids[p] = n + k
        slots.remove(q)
    return Dendrogram(merges, labels, linkage)


__all__ = [
    "BehaviorLog", "hysteresis_potential", "saddle_node_threshold", "count_fixed_points",
    "saddle_node_threshold_scan", "effective_dimension", "dimension_curve", "chunk_overlap",
    "overlap_matrix",
    "param_distance", "distance_matrix", "Dendrogram", "hierarchical_cluster",
]
