"""Generalized Riesz products on a window with their convergence certificates.

A ``RieszState`` holds the partial product sampled at the cell midpoints of
the positive half (a, b) of a symmetric window.  Every integrand used here is
even in tau, so integrals over the full window are twice the half-window sums.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .expsum import ExpSum1D, SampledDensity, eval_grid
from .flatness import Window


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StageDiagnostics:
    Mn: float
    epsN: float
    alphaN: float
    # running product of M_k up to and including this stage
    prodM: float = 1.0

    @property
    def chebyshev(self) -> float:
        """Bound eps_n / alpha_n on the measure of {|Q_n - 1| >= alpha_n}."""
        return self.epsN / self.alphaN if self.alphaN > 0 else 0.0


def stage_diagnostics(Mn: float, epsN: float, prev_prodM: float = 1.0) -> StageDiagnostics:
    prodM = prev_prodM * Mn
    return StageDiagnostics(Mn, epsN, math.sqrt(epsN * prodM), prodM)


def diagnostics_from_schedule(eps, M) -> list[StageDiagnostics]:
    """StageDiagnostics for given eps_n and M_n (scalar M means constant)."""
    eps = np.asarray(eps, dtype=float)
    Ms = np.broadcast_to(np.asarray(M, dtype=float), eps.shape)
    out = []
    prod = 1.0
    for e, m in zip(eps, Ms):
        d = stage_diagnostics(float(m), float(e), prod)
        prod = d.prodM
        out.append(d)
    return out


@dataclass(frozen=True)
class RieszState:
    window: Window
    density: SampledDensity
    stages: tuple = ()
    pi0: float = 1.0
    exceptionalMass: float = 0.0

    def __post_init__(self):
        if self.density.ndim != 1:
            raise ValueError("RieszState holds a 1D density")
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def taus(self) -> np.ndarray:
        return self.density.taus()

    @property
    def alpha_sum(self) -> float:
        return float(math.fsum(d.alphaN for d in self.stages))

    def window_integral(self) -> float:
        return 2.0 * self.density.integral()

    def l1_distance(self, other: "RieszState") -> float:
        if not self.density.same_grid(other.density):
            raise GridMismatch("states live on different grids")
        return 2.0 * self.density.step * float(
            np.sum(np.abs(self.density.values - other.density.values)))

    def save(self, prefix) -> None:
        save_checkpoint(self, prefix)


def half_window_grid(window: Window, step: float) -> tuple[float, float, int]:
    """(origin, step, count) of the midpoint grid on (a, b) with step <= ``step``."""
    n = max(1, math.ceil((window.b - window.a) / step))
    h = (window.b - window.a) / n
    return window.a + 0.5 * h, h, n


def seed_indicator(h: float, taus) -> np.ndarray:
    """Spectral density h sinc^2(h tau) of the normalized base-level indicator."""
    return h * np.sinc(h * np.asarray(taus, dtype=float)) ** 2


def new_state(window: Window, step: float, seed="indicator", h: float = 1.0) -> RieszState:
    """Initial state; ``seed`` is "indicator", "constant", an array or a callable."""
    origin, step, n = half_window_grid(window, step)
    taus = origin + np.arange(n) * step
    if isinstance(seed, str):
        if seed == "indicator":
            vals = seed_indicator(h, taus)
        elif seed == "constant":
            vals = np.ones(n)
        else:
            raise ValueError(f"unknown seed {seed!r}")
    elif callable(seed):
        vals = np.asarray(seed(taus), dtype=float)
    else:
        vals = np.asarray(seed, dtype=float)
    if vals.shape != (n,):
        raise GridMismatch(f"seed has shape {vals.shape}, grid has {n} points")
    return RieszState(window, SampledDensity(origin, step, vals))


def stage_multiplier(state: RieszState, s: ExpSum1D, override: bool = False) -> SampledDensity:
    """|P|^2 of one stage on the state's grid."""
    d = state.density
    return eval_grid(s, d.origin, d.step, len(d.values), override=override)


def accumulate(state: RieszState, qn: SampledDensity) -> RieszState:
    """Multiply by Q_n and record M_n, eps_n = ||Q_n - 1||_1(G) and alpha_n."""
    if not state.density.same_grid(qn):
        raise GridMismatch("Q_n is not sampled on the state's grid")
    q = qn.values
    Mn = max(1.0, float(q.max()))
    eps = 2.0 * qn.step * float(np.sum(np.abs(q - 1.0)))
    prev = state.stages[-1].prodM if state.stages else 1.0
    diag = stage_diagnostics(Mn, eps, prev)
    return RieszState(
        state.window,
        state.density.replace_values(state.density.values * q),
        state.stages + (diag,),
        state.pi0 * (1.0 + diag.alphaN),
        state.exceptionalMass + diag.chebyshev,
    )


@dataclass(frozen=True)
class Certificate:
    alphaSum: float
    chebyshevSum: float
    pi0: float
    majorantIntegral: float
    certified: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_summability(stages, alpha_cap: float = 1.0, chebyshev_cap: float = 1.0) -> Certificate:
    """Sums behind the L1 convergence certificate; no density access.

    The majorant equals Pi0 * prod_{k<=n} M_k on the exceptional set B_n,
    so its integral is bounded by Pi0 * sum (eps_n/alpha_n) prod M_k, which
    is Pi0 * sum alpha_n.
    """
    alphas = [d.alphaN for d in stages]
    cheb = [d.chebyshev for d in stages]
    a_sum = math.fsum(alphas)
    c_sum = math.fsum(cheb)
    pi0 = math.prod(1.0 + a for a in alphas)
    majorant = pi0 * math.fsum(c * d.prodM for c, d in zip(cheb, stages))
    ok = all(math.isfinite(x) for x in (a_sum, c_sum, pi0))
    certified = ok and a_sum <= alpha_cap and c_sum <= chebyshev_cap
    return Certificate(a_sum, c_sum, pi0, majorant, bool(certified))


def convergence_rate_bound(stages, window: Window, eps0_cap: float = 1.0) -> tuple[float, float]:
    """(measure of the good set, Pi0 - 1) with eps0 = sum alpha_n.

    Off the union of the Chebyshev sets, whose total measure in G is at most
    eps0, every partial product deviates from 1 by at most Pi0 - 1.
    """
    alphas = [d.alphaN for d in stages]
    eps0 = math.fsum(alphas)
    pi0 = math.prod(1.0 + a for a in alphas)
    dev = pi0 - 1.0
    if eps0 < min(1.0, eps0_cap) and not dev < 3.0 * eps0 and eps0 > 0:
        raise ArithmeticError(f"Pi0 - 1 = {dev} not below 3*eps0 = {3 * eps0}")
    return window.measure - eps0, dev


def deviation_measure(state: RieszState, threshold: float) -> float:
    """Measure in G of {|prod Q_n - 1| >= threshold}, counted on the grid."""
    v = state.density.values
    return 2.0 * state.density.step * int(np.count_nonzero(np.abs(v - 1.0) >= threshold))


def counterexample_multiplier(n: int, N: int) -> np.ndarray:
    """Q_n at the 2^(N+2) cell midpoints of [0, 1): 1, then 0, then 2."""
    cells = 1 << (N + 2)
    x = (np.arange(cells) + 0.5) / cells
    q = np.ones(cells)
    q[(x >= 1.0 - 2.0**-n) & (x < 1.0 - 2.0 ** (-n - 1))] = 0.0
    q[x >= 1.0 - 2.0 ** (-n - 1)] = 2.0
    return q


def counterexample_product(N: int) -> SampledDensity:
    """prod_{n=0}^{N} Q_n: every Q_n has ||Q_n - 1||_1 = 2^-n and integral 1."""
    if N < 0:
        raise ValueError("N must be >= 0")
    cells = 1 << (N + 2)
    prod = np.ones(cells)
    for n in range(N + 1):
        prod *= counterexample_multiplier(n, N)
    return SampledDensity(0.5 / cells, 1.0 / cells, prod)


@dataclass(frozen=True)
class AtomReport:
    windowIntegrals: list
    nearMass: list
    atomEstimate: float

    def to_dict(self) -> dict:
        return asdict(self)


def _as_density(s) -> tuple[SampledDensity, float]:
    if isinstance(s, RieszState):
        return s.density, 2.0
    return s, 1.0


def detect_atom(states, zeroRadius: float, center: float = 0.0,
                total: float = 1.0) -> AtomReport:
    """Mass left outside the windows, as a proxy for an atom at ``center``.

    For each state the density is integrated over its grid away from the
    ``zeroRadius`` neighbourhood of ``center``; RieszState grids cover the
    positive half of a symmetric window and count twice.  The estimate is
    ``total`` minus the last of those integrals.
    """
    integrals = []
    near = []
    for s in states:
        d, mult = _as_density(s)
        t = d.taus()
        far = np.abs(t - center) >= zeroRadius
        integrals.append(mult * d.step * float(np.sum(d.values[far])))
        near.append(mult * d.step * float(np.sum(d.values[~far])))
    return AtomReport(integrals, near, total - integrals[-1])


def stage_covariance(qs) -> np.ndarray:
    """Grid covariance matrix of Q_n - 1 across stages (diagnostic only)."""
    X = np.array([np.asarray(getattr(q, "values", q), float) - 1.0 for q in qs])
    return X @ X.T / X.shape[1]


def synthetic_multiplier(state: RieszState, eps: float, freq: float) -> SampledDensity:
    """Q = 1 + delta cos(2 pi freq tau), with delta set so ||Q - 1||_1(G) = eps.

    Stand-in for a flat stage whose defect is prescribed exactly.
    """
    t = state.taus
    c = np.cos(2.0 * np.pi * freq * t)
    l1 = 2.0 * state.density.step * float(np.sum(np.abs(c)))
    delta = eps / l1
    if delta >= 1.0:
        raise ValueError(f"eps={eps} needs delta={delta} >= 1; Q would change sign")
    return state.density.replace_values(1.0 + delta * c)


def certified_eps_schedule(eps0: float, M: float, stages: int) -> np.ndarray:
    """eps_n = eps0 4^-n M^-n for n = 1..stages, so alpha_n = sqrt(eps0) 2^-n."""
    n = np.arange(1, stages + 1, dtype=float)
    return eps0 * 4.0**-n * M**-n


def save_checkpoint(state: RieszState, prefix) -> None:
    prefix = Path(prefix)
    state.density.to_csv(prefix.with_suffix(".csv"))
    meta = {
        "window": {"a": state.window.a, "b": state.window.b},
        "origin": state.density.origin,
        "step": state.density.step,
        "count": len(state.density.values),
        "pi0": state.pi0,
        "exceptionalMass": state.exceptionalMass,
        "stages": [asdict(d) for d in state.stages],
    }
    prefix.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_checkpoint(prefix) -> RieszState:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    with open(prefix.with_suffix(".csv"), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    vals = np.array([float(r[1]) for r in rows])
    if len(vals) != meta["count"]:
        raise GridMismatch("checkpoint CSV and JSON disagree on the grid size")
    return RieszState(
        Window(**meta["window"]),
        SampledDensity(meta["origin"], meta["step"], vals),
        tuple(StageDiagnostics(**d) for d in meta["stages"]),
        meta["pi0"],
        meta["exceptionalMass"],
    )
