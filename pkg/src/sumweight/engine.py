"""Sum-weight gossip runs with error diagnostics and invariant monitors.

A run is a serial stochastic process, but independent replicas are advanced
together: replica ``r`` of seed ``s`` always draws from the stream
``SeedSequence(s, spawn_key=(r,))``, so a replica's trajectory does not
depend on how many others run beside it.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .models import (
    FamilyError,
    Kind,
    UpdateMatrixSet,
    activation_probabilities,
    check_assumptions,
    default_window_length,
)

MASS_RTOL = 1e-9
# slack for rounding in the sup-norm contraction check, relative to |x| scale
CONTRACTION_ATOL = 1e-12
PRODUCT_RTOL = 1e-9
DOUBLY_STOCHASTIC_TOL = 1e-12


class Mode(str, Enum):
    AVERAGE = "average"
    SUM = "sum"
    SINGLE_VARIATE = "single_variate"


class InvariantViolation(RuntimeError):
    """A monitored invariant failed during a run."""


@dataclass(frozen=True)
class SumWeightState:
    s: np.ndarray
    w: np.ndarray
    t: int = 0
    mode: Mode = Mode.AVERAGE
    trigger: Optional[int] = None


def init_state(x0, mode=Mode.AVERAGE, trigger: Optional[int] = None, n: Optional[int] = None) -> SumWeightState:
    x0 = np.asarray(x0, dtype=float)
    mode = Mode(mode)
    if x0.ndim != 1 or len(x0) < 2:
        raise ValueError("x0 must be a vector of length >= 2")
    if n is not None and len(x0) != n:
        raise ValueError(f"x0 has length {len(x0)}, expected {n}")
    w = np.ones_like(x0)
    if mode is Mode.SUM:
        if trigger is None or not 0 <= trigger < len(x0):
            raise ValueError(f"sum mode needs a trigger node in [0, {len(x0)})")
        w = np.zeros_like(x0)
        w[trigger] = 1.0
    return SumWeightState(x0.copy(), w, 0, mode, trigger if mode is Mode.SUM else None)


def step(state: SumWeightState, k) -> SumWeightState:
    k = np.asarray(k, dtype=float)
    n = len(state.s)
    if k.shape != (n, n):
        raise ValueError(f"update matrix shape {k.shape} does not match n={n}")
    if state.mode is Mode.SINGLE_VARIATE:
        return replace(state, s=state.s @ k, t=state.t + 1)
    return replace(state, s=state.s @ k, w=state.w @ k, t=state.t + 1)


def estimates(state: SumWeightState) -> np.ndarray:
    """``s / w`` elementwise; entries with zero weight are NaN (undefined)."""
    out = np.full(len(state.s), np.nan)
    ok = state.w > 0
    out[ok] = state.s[ok] / state.w[ok]
    return out


def sample_activation(weights, alpha: float, rng: np.random.Generator) -> int:
    """Draw the next broadcaster with probability ``(alpha + (1-alpha) w_i) / N``."""
    p = activation_probabilities(weights, alpha)
    return int(rng.choice(len(p), p=p))


def psi_diagnostics(product, weights, x0) -> tuple[float, float]:
    """The two factors bounding the squared error in average mode.

    ``psi1 = ||x(0)||^2 / (min_k w_k)^2`` (``inf`` if a weight is zero) and
    ``psi2 = ||(I - J) P||_F^2`` for the running product ``P``.
    """
    p = np.asarray(product, dtype=float)
    centered = p - p.mean(axis=-2, keepdims=True)
    psi2 = (centered**2).sum(axis=(-2, -1))
    min_w = np.asarray(weights).min(axis=-1)
    x2 = float(np.dot(x0, x0))
    with np.errstate(divide="ignore"):
        psi1 = np.where(min_w > 0, x2 / np.where(min_w > 0, min_w, 1.0) ** 2, np.inf)
    if np.ndim(psi1) == 0:
        return float(psi1), float(psi2)
    return psi1, psi2


def _min_positive(p: np.ndarray) -> np.ndarray:
    return np.where(p > 0, p, np.inf).min(axis=(-2, -1))


@dataclass
class WindowDiagnostics:
    L: int
    product: np.ndarray
    positivity_hits: list = field(default_factory=list)
    min_nonzero_bound_ok: bool = True
    weight_bound_ok: bool = True


def window_diagnostics(matrices, L: int, m_K: float, w0) -> WindowDiagnostics:
    """Replay one run's matrices over disjoint windows of ``L`` ticks.

    Each window product must have all positive entries ``>= m_K**L``. When a
    window product is positive, every weight at its end is at least
    ``m_K**L`` times the largest weight at its start.
    """
    n = len(w0)
    w = np.asarray(w0, dtype=float)
    diag = WindowDiagnostics(L, np.eye(n))
    prod, w_start = np.eye(n), w.copy()
    for t, k in enumerate(matrices, start=1):
        prod = prod @ k
        w = w @ k
        if t % L == 0:
            _close_window(diag, prod, t, m_K, w_start, w)
            prod, w_start = np.eye(n), w.copy()
    return diag


def _close_window(diag: WindowDiagnostics, prod, t, m_K, w_start, w_end):
    bound = m_K ** diag.L
    if _min_positive(prod) < bound * (1 - PRODUCT_RTOL):
        diag.min_nonzero_bound_ok = False
    if np.all(prod > 0):
        diag.positivity_hits.append(t)
        if w_end.min() < bound * w_start.max() * (1 - PRODUCT_RTOL):
            diag.weight_bound_ok = False
    diag.product = prod


@dataclass
class Trace:
    """Per-tick records of one run; ``t`` is strictly increasing."""

    t: np.ndarray
    se: np.ndarray
    inf_err: np.ndarray
    sum_s: np.ndarray
    sum_w: np.ndarray
    min_w: np.ndarray
    psi1: Optional[np.ndarray] = None
    psi2: Optional[np.ndarray] = None
    window: Optional[WindowDiagnostics] = None
    final_estimates: Optional[np.ndarray] = None

    @property
    def columns(self) -> list[str]:
        cols = ["t", "se", "inf_err", "sum_s", "sum_w", "min_w"]
        if self.psi1 is not None:
            cols += ["psi1", "psi2"]
        return cols

    @property
    def records(self) -> list[tuple]:
        arrays = [getattr(self, c) for c in self.columns]
        return [tuple(a[i].item() for a in arrays) for i in range(len(self.t))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for rec in self.records:
            buf.write(",".join(str(rec[0]) if i == 0 else _fmt(v) for i, v in enumerate(rec)) + "\n")
        return buf.getvalue()


def _fmt(v: float) -> str:
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


@dataclass
class BatchResult:
    """Arrays of shape ``(ticks + 1, replicas)`` for a batch of replicas."""

    se: np.ndarray
    inf_err: np.ndarray
    sum_s: np.ndarray
    sum_w: np.ndarray
    min_w: np.ndarray
    final_estimates: np.ndarray
    psi1: Optional[np.ndarray] = None
    psi2: Optional[np.ndarray] = None
    windows: Optional[list] = None
    invariants: dict = field(default_factory=dict)

    @property
    def ticks(self) -> int:
        return self.se.shape[0] - 1

    @property
    def replicas(self) -> int:
        return self.se.shape[1]

    @property
    def mse(self) -> np.ndarray:
        return self.se.mean(axis=1)

    def trace(self, r: int = 0) -> Trace:
        return Trace(
            t=np.arange(self.ticks + 1),
            se=self.se[:, r].copy(),
            inf_err=self.inf_err[:, r].copy(),
            sum_s=self.sum_s[:, r].copy(),
            sum_w=self.sum_w[:, r].copy(),
            min_w=self.min_w[:, r].copy(),
            psi1=None if self.psi1 is None else self.psi1[:, r].copy(),
            psi2=None if self.psi2 is None else self.psi2[:, r].copy(),
            window=None if self.windows is None else self.windows[r],
            final_estimates=self.final_estimates[r].copy(),
        )


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replica,)))


def _is_doubly_stochastic(fam: UpdateMatrixSet) -> bool:
    if fam.kind is not Kind.EXPLICIT:
        return False
    m = fam.matrices
    return bool(
        np.abs(m.sum(axis=-1) - 1).max() <= DOUBLY_STOCHASTIC_TOL
        and np.abs(m.sum(axis=-2) - 1).max() <= DOUBLY_STOCHASTIC_TOL
    )


def run_batch(
    fam: UpdateMatrixSet,
    x0,
    mode=Mode.AVERAGE,
    ticks: int = 1000,
    alpha: float = 1.0,
    seed: int = 0,
    replicas: int = 1,
    trigger: Optional[int] = None,
    diagnostics: bool = False,
    window: Optional[int] = None,
    check_invariants: bool = True,
    first_replica: int = 0,
) -> BatchResult:
    """Run ``replicas`` independent trajectories for ``ticks`` ticks.

    ``alpha`` tunes weight-managed clocks on broadcaster-indexed families and
    is ignored otherwise. With ``diagnostics`` the running product of the
    update matrices is kept (``O(N^2)`` per tick) to report ``psi1``/``psi2``
    and the window checks. With ``check_invariants`` a violated invariant
    raises :class:`InvariantViolation`.
    """
    mode = Mode(mode)
    if ticks < 0 or replicas < 1:
        raise ValueError("need ticks >= 0 and replicas >= 1")
    n = fam.n
    state0 = init_state(x0, mode, trigger, n=n)
    x0 = state0.s
    if mode is Mode.SINGLE_VARIATE and not _is_doubly_stochastic(fam):
        raise FamilyError("single-variate mode needs a doubly-stochastic explicit family")
    target = x0.sum() if mode is Mode.SUM else x0.mean()

    draws = np.stack(
        [replica_rng(seed, first_replica + r).random((ticks, fam.draws_per_tick)) for r in range(replicas)],
        axis=1,
    )
    sw = np.empty((replicas, 2, n))
    sw[:, 0] = x0
    sw[:, 1] = state0.w

    shape = (ticks + 1, replicas)
    se, inf_err = np.empty(shape), np.empty(shape)
    sum_s, sum_w, min_w = np.empty(shape), np.empty(shape), np.empty(shape)

    def record(t):
        s, w = sw[:, 0], sw[:, 1]
        ok = w > 0
        err = np.where(ok, s / np.where(ok, w, 1.0) - target, 0.0)
        se[t] = (err**2).sum(axis=1)
        inf_err[t] = np.abs(err).max(axis=1)
        sum_s[t] = s.sum(axis=1)
        sum_w[t] = w.sum(axis=1)
        min_w[t] = w.min(axis=1)

    psi_on = diagnostics and mode is not Mode.SUM
    psi1 = np.empty(shape) if psi_on else None
    psi2 = np.empty(shape) if psi_on else None
    windows = None
    product_ok = True
    if diagnostics:
        m_k = check_assumptions(fam).m_K
        if window is None:
            window = (default_window_length(fam) if fam.kind is Kind.EXPLICIT else None) or 2 * n * n
        windows = [WindowDiagnostics(window, np.eye(n)) for _ in range(replicas)]
        prod = np.broadcast_to(np.eye(n), (replicas, n, n)).copy()
        wprod = prod.copy()
        w_start = sw[:, 1].copy()
        log_mk = np.log(m_k)
        if psi_on:
            psi1[0], psi2[0] = psi_diagnostics(prod, sw[:, 1], x0)

    record(0)
    for t in range(1, ticks + 1):
        k = fam.matrices_for(draws[t - 1], sw[:, 1], alpha)
        if mode is Mode.SINGLE_VARIATE:
            sw[:, 0] = np.matmul(sw[:, 0:1], k)[:, 0]
        else:
            sw = np.matmul(sw, k)
        record(t)
        if diagnostics:
            prod = np.matmul(prod, k)
            wprod = np.matmul(wprod, k)
            with np.errstate(under="ignore"):
                bound = np.exp(t * log_mk)
            if np.any(_min_positive(prod) < bound * (1 - PRODUCT_RTOL)):
                product_ok = False
            if psi_on:
                psi1[t], psi2[t] = psi_diagnostics(prod, sw[:, 1], x0)
            if t % window == 0:
                for r in range(replicas):
                    _close_window(windows[r], wprod[r], t, m_k, w_start[r], sw[r, 1])
                wprod[:] = np.eye(n)
                w_start = sw[:, 1].copy()

    s, w = sw[:, 0], sw[:, 1]
    final = np.where(w > 0, s / np.where(w > 0, w, 1.0), np.nan)
    result = BatchResult(se, inf_err, sum_s, sum_w, min_w, final, psi1, psi2, windows)
    result.invariants = _check(result, fam, mode, x0, target, state0.w.sum(), product_ok if diagnostics else None)
    if check_invariants:
        bad = [name for name, ok in result.invariants.items() if ok is False]
        if bad:
            raise InvariantViolation(f"invariant(s) violated: {', '.join(bad)}")
    return result


def run(
    fam: UpdateMatrixSet,
    x0,
    mode=Mode.AVERAGE,
    ticks: int = 1000,
    alpha: float = 1.0,
    seed: int = 0,
    trigger: Optional[int] = None,
    diagnostics: bool = False,
    window: Optional[int] = None,
    check_invariants: bool = True,
    replica: int = 0,
) -> Trace:
    """Single trajectory; identical to replica ``replica`` of :func:`run_batch`."""
    res = run_batch(fam, x0, mode, ticks, alpha, seed, 1, trigger, diagnostics, window,
                    check_invariants, first_replica=replica)
    trace = res.trace(0)
    return trace


def _check(res: BatchResult, fam, mode, x0, target, w_total, product_ok) -> dict:
    out = {}
    if fam.mass_conserving:
        s0 = res.sum_s[0]
        tol_s = MASS_RTOL * np.abs(s0) + CONTRACTION_ATOL * np.abs(x0).sum()
        out["mass_s"] = bool(np.all(np.abs(res.sum_s - s0) <= tol_s))
        out["mass_w"] = bool(np.all(np.abs(res.sum_w - w_total) <= MASS_RTOL * w_total))
        scale = max(1.0, float(np.abs(x0).max()), abs(float(target)))
        inc = res.inf_err[1:] - res.inf_err[:-1]
        # estimates with zero weight break the centre-of-mass argument
        defined = (res.min_w[:-1] > 0) & (res.min_w[1:] > 0)
        out["sup_norm_non_increasing"] = bool(np.all(inc[defined] <= CONTRACTION_ATOL * scale))
    if mode is not Mode.SUM and _is_doubly_stochastic(fam):
        out["unit_weights"] = bool(np.all(res.min_w == 1.0) and np.all(res.sum_w == fam.n))
    if res.psi1 is not None:
        bound = res.psi1 * res.psi2
        # the squared error bottoms out at a rounding floor; psi2 does not
        floor = fam.n * (CONTRACTION_ATOL * float(np.abs(x0).max())) ** 2
        out["psi_bound"] = bool(np.all(res.se <= bound * (1 + 1e-9) + floor))
    if product_ok is not None:
        out["running_product_bound"] = product_ok
        out["window_min_entry"] = all(w.min_nonzero_bound_ok for w in res.windows)
        out["window_weight_bound"] = all(w.weight_bound_ok for w in res.windows)
    return out
