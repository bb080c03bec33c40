"""Update-matrix families for sum-weight gossip and checks of their assumptions.

Matrices act on row vectors: one tick maps ``s^T -> s^T K`` and
``w^T -> w^T K``. A family is mass conserving when every ``K`` is
row-stochastic.

Every family draws matrices from per-tick uniform variates, so the engine can
pre-draw the uniforms of each replica's stream and sample many replicas at
once while :meth:`UpdateMatrixSet.sample` stays exactly equivalent.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .graph import Graph, is_connected

ROW_SUM_TOL = 1e-12


class FamilyError(ValueError):
    """Invalid family construction or unsupported operation on a family."""


class Kind(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT_SYNCHRONOUS = "implicit_synchronous"
    # sampler-only family whose moments are Monte Carlo estimates
    IMPLICIT_SAMPLED = "implicit_sampled"


def activation_probabilities(weights, alpha: float) -> np.ndarray:
    """Per-node wake-up probabilities under weight-managed clocks.

    Node ``i`` runs a clock of rate ``alpha + (1 - alpha) * w_i``. With the
    weights summing to ``N`` the rates sum to ``N`` too, so the global tick
    rate is unchanged. Works row-wise on a 2-D batch of weight vectors.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("negative weight in activation sampling")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    lam = alpha + (1.0 - alpha) * w
    return lam / lam.sum(axis=-1, keepdims=True)


def _inverse_cdf(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index of the bin containing ``u`` for each row of cumulative weights."""
    idx = (cum < u[..., None]).sum(axis=-1)
    return np.minimum(idx, cum.shape[-1] - 1)


def _pick_broadcaster(u, weights, alpha, n) -> np.ndarray:
    if weights is None or alpha == 1.0:
        return np.minimum((u * n).astype(np.int64), n - 1)
    p = activation_probabilities(weights, alpha)
    return _inverse_cdf(np.cumsum(p, axis=-1), u)


@dataclass(frozen=True, eq=False)
class UpdateMatrixSet:
    """Finite family ``{K_i}`` with probabilities ``p_i`` or an implicit sampler.

    ``broadcasters[m]`` names the node whose wake-up produces matrix ``m``;
    when present the family supports weight-managed clocks.
    """

    kind: Kind
    n: int
    name: str
    mass_conserving: bool
    matrices: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    broadcasters: Optional[np.ndarray] = None
    closed_moments: Optional[tuple] = None
    moments_source: str = "exact"
    structure: dict = field(default_factory=dict)
    draws_per_tick: int = 2
    draw: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind is Kind.EXPLICIT:
            mats = np.array(self.matrices, dtype=float)
            probs = np.array(self.probs, dtype=float)
            if mats.ndim != 3 or mats.shape[1:] != (self.n, self.n) or len(mats) == 0:
                raise FamilyError(f"matrices must have shape (M, {self.n}, {self.n}), M >= 1")
            if probs.shape != (len(mats),):
                raise FamilyError("need exactly one probability per matrix")
            if np.any(probs <= 0) or abs(probs.sum() - 1.0) > ROW_SUM_TOL:
                raise FamilyError("probabilities must be positive and sum to 1")
            if np.any(mats < 0):
                raise FamilyError("update matrices must be non-negative")
            if self.mass_conserving and _max_row_dev(mats) > ROW_SUM_TOL:
                raise FamilyError("mass-conserving family has a non row-stochastic matrix")
            mats.setflags(write=False)
            probs.setflags(write=False)
            object.__setattr__(self, "matrices", mats)
            object.__setattr__(self, "probs", probs)
            if self.broadcasters is not None:
                b = np.array(self.broadcasters, dtype=np.int64)
                b.setflags(write=False)
                object.__setattr__(self, "broadcasters", b)
                object.__setattr__(self, "_groups", _broadcaster_groups(b, probs, self.n))
            else:
                object.__setattr__(self, "_cum", np.cumsum(probs))
        elif self.draw is None or self.closed_moments is None:
            raise FamilyError("implicit families need a sampler and moments")

    @property
    def broadcaster_indexed(self) -> bool:
        return self.broadcasters is not None or self.structure.get("broadcaster_indexed", False)

    def __len__(self):
        return 0 if self.matrices is None else len(self.matrices)

    def matrices_for(self, u, weights=None, alpha: float = 1.0) -> np.ndarray:
        """Update matrices for a batch of per-tick uniforms.

        ``u`` has shape ``(R, draws_per_tick)``; ``weights`` (``(R, N)``)
        and ``alpha`` drive the broadcaster choice of broadcaster-indexed
        families and are ignored by the others. Returns ``(R, N, N)``.
        """
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.kind is not Kind.EXPLICIT:
            return self.draw(u, weights, alpha)
        return self.matrices[self.indices_for(u, weights, alpha)]

    def indices_for(self, u, weights=None, alpha: float = 1.0) -> np.ndarray:
        if self.kind is not Kind.EXPLICIT:
            raise FamilyError("implicit families have no matrix index")
        u = np.atleast_2d(u)
        if self.broadcasters is None:
            return _inverse_cdf(self._cum, u[:, 0])
        members, cum = self._groups
        b = _pick_broadcaster(u[:, 0], weights, alpha, self.n)
        return members[b, _inverse_cdf(cum[b], u[:, 1])]

    def sample(self, rng: np.random.Generator, weights=None, alpha: float = 1.0) -> np.ndarray:
        """Draw one update matrix using the caller's generator."""
        u = rng.random((1, self.draws_per_tick))
        w = None if weights is None else np.asarray(weights, dtype=float)[None, :]
        return self.matrices_for(u, w, alpha)[0]

    def to_dict(self) -> dict:
        if self.kind is not Kind.EXPLICIT:
            raise FamilyError("only explicit families can be exported")
        doc = {
            "kind": self.kind.value,
            "n": self.n,
            "name": self.name,
            "mass_conserving": self.mass_conserving,
            "matrices": [m.ravel().tolist() for m in self.matrices],
            "probs": self.probs.tolist(),
        }
        if self.broadcasters is not None:
            doc["broadcasters"] = self.broadcasters.tolist()
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "UpdateMatrixSet":
        if doc.get("kind", "explicit") != Kind.EXPLICIT.value:
            raise FamilyError("only explicit families can be imported")
        n = int(doc["n"])
        mats = np.array(doc["matrices"], dtype=float).reshape(-1, n, n)
        mass = doc.get("mass_conserving")
        if mass is None:
            mass = _max_row_dev(mats) <= ROW_SUM_TOL
        return cls(
            Kind.EXPLICIT, n, doc.get("name", "custom"), bool(mass),
            matrices=mats, probs=doc["probs"], broadcasters=doc.get("broadcasters"),
        )

    @classmethod
    def from_json(cls, text: str) -> "UpdateMatrixSet":
        return cls.from_dict(json.loads(text))


def _max_row_dev(mats: np.ndarray) -> float:
    return float(np.abs(mats.sum(axis=-1) - 1.0).max())


def _broadcaster_groups(b, probs, n):
    """Pad per-broadcaster member lists into rectangular lookup tables."""
    groups = [np.flatnonzero(b == i) for i in range(n)]
    if any(len(g) == 0 for g in groups):
        raise FamilyError("every node needs at least one matrix in a broadcaster-indexed family")
    width = max(len(g) for g in groups)
    members = np.zeros((n, width), dtype=np.int64)
    cum = np.ones((n, width))
    for i, g in enumerate(groups):
        members[i, : len(g)] = g
        members[i, len(g):] = g[-1]
        c = np.cumsum(probs[g]) / probs[g].sum()
        cum[i, : len(g)] = c
    return members, cum


def _require_connected(g: Graph, allow_disconnected: bool):
    if not allow_disconnected and not is_connected(g):
        raise FamilyError("graph is disconnected: E[K] cannot be primitive")


def bwgossip_matrix(g: Graph, i: int, live=None) -> np.ndarray:
    """Update matrix of node ``i`` broadcasting to its (live) neighbors.

    Row ``i`` becomes ``1/(|live|+1)`` on ``i`` and on each live neighbor;
    every other row is the identity row.
    """
    nbrs = g.neighbors(i) if live is None else np.asarray(live, dtype=np.int64)
    k = np.eye(g.n)
    share = 1.0 / (len(nbrs) + 1)
    k[i, :] = 0.0
    k[i, i] = share
    k[i, nbrs] = share
    return k


def bwgossip_set(g: Graph, allow_disconnected: bool = False) -> UpdateMatrixSet:
    _require_connected(g, allow_disconnected)
    mats = np.stack([bwgossip_matrix(g, i) for i in range(g.n)])
    return UpdateMatrixSet(
        Kind.EXPLICIT, g.n, "bwgossip", True,
        matrices=mats, probs=np.full(g.n, 1.0 / g.n), broadcasters=np.arange(g.n),
    )


def random_gossip_set(g: Graph, allow_disconnected: bool = False) -> UpdateMatrixSet:
    """Pairwise averaging across one uniformly chosen edge per tick."""
    _require_connected(g, allow_disconnected)
    edges = g.edges()
    if not edges:
        raise FamilyError("graph has no edges")
    mats = np.empty((len(edges), g.n, g.n))
    for m, (i, j) in enumerate(edges):
        d = np.zeros(g.n)
        d[i], d[j] = 1.0, -1.0
        mats[m] = np.eye(g.n) - 0.5 * np.outer(d, d)
    return UpdateMatrixSet(
        Kind.EXPLICIT, g.n, "random_gossip", True,
        matrices=mats, probs=np.full(len(edges), 1.0 / len(edges)),
    )


def broadcast_gossip_set(g: Graph, gamma: float = 0.5, allow_disconnected: bool = False) -> UpdateMatrixSet:
    """Single-variate broadcast gossip: neighbors move toward the broadcaster.

    Each neighbor ``j`` of broadcaster ``i`` sets ``x_j <- gamma*x_j + (1-gamma)*x_i``.
    The matrices are column-stochastic only, so the network sum drifts and
    the consensus value is biased.
    """
    if not 0.0 < gamma < 1.0:
        raise FamilyError(f"gamma must lie in (0, 1), got {gamma}")
    _require_connected(g, allow_disconnected)
    mats = np.empty((g.n, g.n, g.n))
    for i in range(g.n):
        k = np.eye(g.n)
        nbrs = g.neighbors(i)
        k[i, nbrs] = 1.0 - gamma
        k[nbrs, nbrs] = gamma
        mats[i] = k
    return UpdateMatrixSet(
        Kind.EXPLICIT, g.n, "broadcast_gossip", False,
        matrices=mats, probs=np.full(g.n, 1.0 / g.n), broadcasters=np.arange(g.n),
    )


def pushsum_matrix(targets) -> np.ndarray:
    """``K = I/2 + (1/2) sum_i e_i e_{j_i}^T`` for the chosen targets ``j_i``."""
    targets = np.asarray(targets, dtype=np.int64)
    n = len(targets)
    k = 0.5 * np.eye(n)
    np.add.at(k, (np.arange(n), targets), 0.5)
    return k


def pushsum_moments(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ``E[K]`` and ``E[K (x) K]`` of synchronous Push-Sum on ``K_n``."""
    eye = np.eye(n)
    jay = np.full((n, n), 1.0 / n)
    u = eye.ravel()
    ek = 0.5 * eye + 0.5 * jay
    ekk = 0.25 * (np.kron(eye, eye) + np.kron(jay, eye) + np.kron(eye, jay) + np.kron(jay, jay))
    ekk += np.outer(u, u) / (4 * n) - np.outer(u, np.ones(n * n)) / (4 * n * n)
    return ek, ekk


def pushsum_kempe_set(n: int) -> UpdateMatrixSet:
    """Synchronous Push-Sum on the complete graph with self-loops.

    The ``N**N`` member family is never enumerated; its moments are the
    closed forms of :func:`pushsum_moments`.
    """
    if n < 2:
        raise FamilyError(f"need n >= 2, got {n}")

    def draw(u, weights=None, alpha=1.0):
        targets = np.minimum((u * n).astype(np.int64), n - 1)
        r = len(targets)
        k = np.broadcast_to(0.5 * np.eye(n), (r, n, n)).copy()
        rows = np.broadcast_to(np.arange(n), (r, n))
        np.add.at(k, (np.arange(r)[:, None], rows, targets), 0.5)
        return k

    return UpdateMatrixSet(
        Kind.IMPLICIT_SYNCHRONOUS, n, "pushsum", True,
        closed_moments=pushsum_moments(n), moments_source="closed_form",
        structure={"row_stochastic": True, "positive_diagonal": True,
                   "m_K": 0.5, "p_K": float(n) ** (-n)},
        draws_per_tick=n, draw=draw,
    )


def pushsum_enumerated_set(n: int, max_n: int = 5) -> UpdateMatrixSet:
    """All ``N**N`` Push-Sum matrices, each with probability ``N**-N``."""
    if not 2 <= n <= max_n:
        raise FamilyError(f"enumeration supports 2 <= n <= {max_n}, got {n}")
    mats = np.stack([pushsum_matrix(t) for t in itertools.product(range(n), repeat=n)])
    return UpdateMatrixSet(
        Kind.EXPLICIT, n, "pushsum", True,
        matrices=mats, probs=np.full(len(mats), float(n) ** (-n)),
    )


def bwgossip_failure_set(
    g: Graph,
    p_e: float,
    max_degree: int = 15,
    mc_samples: int = 20000,
    seed: int = 0,
) -> UpdateMatrixSet:
    """BWGossip where each broadcast link fails independently with probability ``p_e``.

    The broadcaster splits over its live links only, so every matrix stays
    row-stochastic. Failure subsets are enumerated per broadcaster; when some
    degree exceeds ``max_degree`` the family becomes a sampler whose moments
    are Monte Carlo estimates (``moments_source == "monte_carlo"``).
    """
    if not 0.0 <= p_e < 1.0:
        raise FamilyError(f"p_e must lie in [0, 1), got {p_e}")
    _require_connected(g, False)
    if g.d_max > max_degree:
        return _failure_sampler(g, p_e, mc_samples, seed)
    mats, probs, owners = [], [], []
    for i in range(g.n):
        nbrs = g.neighbors(i)
        d = len(nbrs)
        for alive in itertools.product((True, False), repeat=d):
            alive = np.array(alive, dtype=bool)
            failed = d - int(alive.sum())
            p = (1.0 / g.n) * p_e**failed * (1.0 - p_e) ** (d - failed)
            if p == 0.0:
                continue
            mats.append(bwgossip_matrix(g, i, nbrs[alive]))
            probs.append(p)
            owners.append(i)
    return UpdateMatrixSet(
        Kind.EXPLICIT, g.n, "bwgossip_failure", True,
        matrices=np.stack(mats), probs=np.array(probs), broadcasters=np.array(owners),
    )


def _failure_sampler(g: Graph, p_e: float, mc_samples: int, seed: int) -> UpdateMatrixSet:
    n, dmax = g.n, g.d_max
    nbr_table = [g.neighbors(i) for i in range(n)]

    def draw(u, weights=None, alpha=1.0):
        b = _pick_broadcaster(u[:, 0], weights, alpha, n)
        out = np.broadcast_to(np.eye(n), (len(u), n, n)).copy()
        for r, i in enumerate(b):
            nbrs = nbr_table[i]
            live = nbrs[u[r, 2: 2 + len(nbrs)] >= p_e]
            out[r] = bwgossip_matrix(g, i, live)
        return out

    rng = np.random.default_rng(seed)
    ks = draw(rng.random((mc_samples, 2 + dmax)))
    ek = ks.mean(axis=0)
    ekk = np.einsum("mij,mkl->ikjl", ks, ks).reshape(n * n, n * n) / mc_samples
    p_k = min((1.0 / n) * min(p_e, 1 - p_e) ** int(d) if p_e > 0 else 1.0 / n for d in g.degrees)
    return UpdateMatrixSet(
        Kind.IMPLICIT_SAMPLED, n, "bwgossip_failure", True,
        closed_moments=(ek, ekk), moments_source="monte_carlo",
        structure={"row_stochastic": True, "positive_diagonal": True,
                   "m_K": 1.0 / (dmax + 1), "p_K": p_k, "broadcaster_indexed": True},
        draws_per_tick=2 + dmax, draw=draw,
    )


@dataclass(frozen=True)
class AssumptionReport:
    a1_row_stochastic: bool
    a2_positive_diagonal: bool
    b_primitive: bool
    witness_exponent: Optional[int]
    m_K: float
    p_K: float

    @property
    def ok(self) -> bool:
        return self.a1_row_stochastic and self.a2_positive_diagonal and self.b_primitive

    def failing(self) -> list[str]:
        names = [("A1", self.a1_row_stochastic), ("A2", self.a2_positive_diagonal), ("B", self.b_primitive)]
        return [name for name, ok in names if not ok]

    def to_dict(self) -> dict:
        return {
            "A1": self.a1_row_stochastic,
            "A2": self.a2_positive_diagonal,
            "B": self.b_primitive,
            "witness_exponent": self.witness_exponent,
            "m_K": self.m_K,
            "p_K": self.p_K,
        }


def primitivity_exponent(support: np.ndarray, max_power: Optional[int] = None) -> Optional[int]:
    """Smallest ``m`` with ``support**m > 0`` by boolean powering, or ``None``.

    Stops early once the boolean powers stop changing. ``max_power`` defaults
    to the Wielandt bound ``n**2 - 2n + 2``.
    """
    s = (np.asarray(support) != 0).astype(float)
    n = s.shape[0]
    if max_power is None:
        max_power = n * n - 2 * n + 2
    power = s.copy()
    for m in range(1, max_power + 1):
        if power.all():
            return m
        nxt = (power @ s) > 0
        if np.array_equal(nxt, power > 0):
            return None
        power = nxt.astype(float)
    return None


def expected_matrix(fam: UpdateMatrixSet) -> np.ndarray:
    """``E[K] = sum_i p_i K_i`` (or the family's stored moment)."""
    if fam.kind is Kind.EXPLICIT:
        return np.einsum("m,mij->ij", fam.probs, fam.matrices)
    return fam.closed_moments[0].copy()


def check_assumptions(fam: UpdateMatrixSet) -> AssumptionReport:
    """Verify (A1) row-stochasticity, (A2) positive diagonals and (B) primitivity of E[K]."""
    if fam.kind is Kind.EXPLICIT:
        if len(fam) == 0:
            raise FamilyError("empty family")
        mats = fam.matrices
        a1 = bool(np.all(mats >= 0) and _max_row_dev(mats) <= ROW_SUM_TOL
                  and np.all(fam.probs > 0) and abs(fam.probs.sum() - 1) <= ROW_SUM_TOL)
        a2 = bool(np.all(np.diagonal(mats, axis1=1, axis2=2) > 0))
        m_k = float(mats[mats > 0].min())
        p_k = float(fam.probs.min())
    else:
        st = fam.structure
        a1, a2 = bool(st["row_stochastic"]), bool(st["positive_diagonal"])
        m_k, p_k = float(st["m_K"]), float(st["p_K"])
    ek = expected_matrix(fam)
    witness = primitivity_exponent(ek > 0)
    return AssumptionReport(a1, a2, witness is not None, witness, m_k, p_k)


def check_B3_numeric(fam: UpdateMatrixSet, max_power: Optional[int] = None, max_n: int = 12) -> Optional[int]:
    """Smallest ``k`` with ``support(E[K (x) K])**k > 0``, or ``None``."""
    if fam.kind is not Kind.EXPLICIT:
        raise FamilyError("B3 check needs an explicit family")
    if fam.n > max_n:
        raise FamilyError(
            f"n={fam.n} exceeds the B3 size cap {max_n}; use check_assumptions instead"
        )
    n = fam.n
    ekk = np.einsum("m,mij,mkl->ikjl", fam.probs, fam.matrices, fam.matrices).reshape(n * n, n * n)
    return primitivity_exponent(ekk > 0, max_power)


def b2_witness_sequence(fam: UpdateMatrixSet) -> list[int]:
    """Matrix indices whose product is positive, built from support paths.

    For each ordered pair ``(i, j)`` the shortest path in the support graph
    of ``E[K]`` is turned into a product of member matrices carrying each
    hop; concatenating all of them gives a positive product because every
    member has a positive diagonal. Returns ``[]`` when (B) fails.
    """
    if fam.kind is not Kind.EXPLICIT:
        raise FamilyError("witness search needs an explicit family")
    n = fam.n
    carrier = {}
    for m, k in enumerate(fam.matrices):
        for u, v in zip(*np.nonzero(k)):
            carrier.setdefault((int(u), int(v)), m)
    adj = [[v for v in range(n) if (u, v) in carrier and u != v] for u in range(n)]
    seq = []
    for i in range(n):
        parent = {i: None}
        frontier = [i]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v not in parent:
                        parent[v] = u
                        nxt.append(v)
            frontier = nxt
        if len(parent) < n:
            return []
        for j in range(n):
            hops = []
            v = j
            while parent[v] is not None:
                hops.append(carrier[(parent[v], v)])
                v = parent[v]
            seq.extend(reversed(hops))
    return seq


def default_window_length(fam: UpdateMatrixSet) -> Optional[int]:
    """Shortest positive prefix of the constructive witness, capped at ``2 N**2``."""
    seq = b2_witness_sequence(fam)
    if not seq:
        return None
    prod = np.eye(fam.n)
    cap = 2 * fam.n**2
    for length, m in enumerate(seq[:cap], start=1):
        prod = prod @ fam.matrices[m]
        if np.all(prod > 0):
            return length
    return cap
