"""Guided continuous-time jump processes by generator tilting.

Over one edge a continuous-time Markov process is steered towards the
observation by re-weighting every jump rate with the ratio of a tractable
space-time function htilde evaluated after and before the jump.  The log
importance weight accumulates the integral of

    sum_y (q(x, y) - qtilde(x, y)) htilde(t, y) / htilde(t, x)

along the path, which vanishes identically when the surrogate generator
equals the true one.

Two instances are implemented: counting processes conditioned on their
endpoint (Poisson bridges), whose tilted intensity has a closed form that
can be inverted exactly, and finite-state chains weighted by a terminal
vector, simulated by thinning against a per-state piecewise-constant
majoriser with runtime bound checks.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .errors import BoundExceeded, DimMismatch, PastHorizon, ZeroH
from .hfun import DiscreteVec
from .rng import Seed

logger = logging.getLogger(__name__)


# --- Poisson bridge -----------------------------------------------------------

@dataclass(frozen=True)
class PoissonBridgeSpec:
    """Counting process with rate ``rate_fn(count)`` conditioned to hit
    ``target`` at ``horizon``, guided through a constant-rate surrogate."""

    rate_fn: Callable
    rate_tilde: float
    target: int
    horizon: float
    weight_cutoff: float = 1e-4  # stop the weight integral at (1 - cutoff) T

    def __post_init__(self):
        if self.rate_tilde <= 0:
            raise DimMismatch("surrogate rate must be positive")
        if self.horizon <= 0:
            raise DimMismatch("horizon must be positive")


def guided_poisson_rate(t: float, x: int, spec: PoissonBridgeSpec) -> float:
    """Tilted jump intensity (rate_fn(x)/rate_tilde) (target - x)/(T - t)."""
    if t >= spec.horizon:
        raise PastHorizon(f"time {t} is not before the horizon {spec.horizon}")
    if x >= spec.target:
        return 0.0
    return float(spec.rate_fn(x)) / spec.rate_tilde * (spec.target - x) / (
        spec.horizon - t
    )


def _poisson_segment_logw(spec: PoissonBridgeSpec, x: int, a: float, b: float) -> float:
    """Closed-form integral of the weight integrand over [a, b] at count x.

    The integrand (rate(x) - rt)(rt^-1 (target - x)/(T - s) - 1) is a
    rational function of s on a constant-state segment, so the segment
    integral is exact.
    """
    lam = float(spec.rate_fn(x))
    rt, T = spec.rate_tilde, spec.horizon
    hi = T * (1.0 - spec.weight_cutoff)
    a, b = min(a, hi), min(b, hi)
    if b <= a:
        return 0.0
    log_term = np.log(T - a) - np.log(T - b)
    return float((lam - rt) * ((spec.target - x) / rt * log_term - (b - a)))


def simulate_guided_poisson(spec: PoissonBridgeSpec, x0: int, seed: Seed):
    """Sample one guided path and its log weight.

    The tilted intensity c(x)/(T - t) with c(x) = rate(x)(target - x)/rt is
    inverted in closed form, so event times are exact; the weight integral
    is accumulated per constant-state segment up to the cutoff time.
    """
    if x0 > spec.target:
        raise DimMismatch("start above the conditioning endpoint")
    rng = seed.generator()
    T = spec.horizon
    rates = [float(spec.rate_fn(x)) for x in range(x0, spec.target + 1)]
    if min(rates) < spec.rate_tilde - 1e-12:
        logger.warning(
            "surrogate rate %.3g exceeds the minimum forward rate %.3g; "
            "absolute continuity is not guaranteed",
            spec.rate_tilde,
            min(rates),
        )
    t, x = 0.0, int(x0)
    events = []
    logw = 0.0
    while x < spec.target:
        c = float(spec.rate_fn(x)) * (spec.target - x) / spec.rate_tilde
        # next event: T - s = (T - t) exp(-E / c) with E standard exponential
        s = T - (T - t) * np.exp(-rng.exponential() / c)
        if s >= T * (1.0 - 1e-14):
            # numerically at the horizon: place the remaining forced jumps
            remaining = spec.target - x
            gaps = (T - t) * (1.0 - (np.arange(1, remaining + 1)) / (remaining + 1.0))
            for g in gaps[::-1]:
                events.append(T - g)
            logw += _poisson_segment_logw(spec, x, t, T)
            x = spec.target
            t = T
            break
        logw += _poisson_segment_logw(spec, x, t, s)
        events.append(s)
        x += 1
        t = s
    logw += _poisson_segment_logw(spec, x, t, T)
    return np.asarray(events), logw


def poisson_state_at(events: np.ndarray, x0: int, t: float) -> int:
    return int(x0 + np.searchsorted(np.asarray(events), t, side="right"))


# --- finite-state chains ---------------------------------------------------------

@dataclass(frozen=True)
class CtmcGuideSpec:
    """Finite-state chain with generator Q, weighted at the horizon by a
    terminal vector and guided through a tractable surrogate generator."""

    Q: np.ndarray
    Q_tilde: np.ndarray
    horizon: float
    h_terminal: np.ndarray
    grid_cells: int = 1000
    margin: float = 2.0
    quad_tol: float = 1e-8

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        Qt = np.asarray(self.Q_tilde, dtype=float)
        hT = np.asarray(self.h_terminal, dtype=float)
        for name, M in (("Q", Q), ("Q_tilde", Qt)):
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise DimMismatch(f"{name} must be square")
            off = M - np.diag(np.diag(M))
            if np.any(off < -1e-12):
                raise DimMismatch(f"{name} has negative off-diagonal entries")
            if np.max(np.abs(M.sum(axis=1))) > 1e-12:
                raise DimMismatch(f"{name} rows must sum to 0 within 1e-12")
        if Q.shape != Qt.shape or hT.shape != (Q.shape[0],):
            raise DimMismatch("generator and terminal vector shapes disagree")
        if np.any(hT < 0) or hT.sum() <= 0:
            raise DimMismatch("terminal vector must be nonnegative and nonzero")
        if self.horizon <= 0:
            raise DimMismatch("horizon must be positive")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "Q_tilde", Qt)
        object.__setattr__(self, "h_terminal", hT)

    @property
    def size(self) -> int:
        return self.Q.shape[0]


def ctmc_htilde(spec: CtmcGuideSpec, t: float) -> DiscreteVec:
    """htilde(t, .) = expm((T - t) Q_tilde) h_terminal."""
    if not 0.0 <= t <= spec.horizon:
        raise PastHorizon(f"time {t} outside [0, {spec.horizon}]")
    v = expm((spec.horizon - t) * spec.Q_tilde) @ spec.h_terminal
    return DiscreteVec(np.clip(v, 0.0, None))


class _HtildeEvaluator:
    """Fast htilde(t, .) via an eigendecomposition of the surrogate generator,
    falling back to the matrix exponential when that is ill conditioned."""

    def __init__(self, spec: CtmcGuideSpec):
        self.spec = spec
        self.T = spec.horizon
        self._eig = None
        try:
            w, V = np.linalg.eig(spec.Q_tilde)
            if np.linalg.cond(V) < 1e10:
                self._eig = (w, V, np.linalg.solve(V, spec.h_terminal.astype(complex)))
        except np.linalg.LinAlgError:
            pass

    def at(self, t: float) -> np.ndarray:
        if self._eig is None:
            return expm((self.T - t) * self.spec.Q_tilde) @ self.spec.h_terminal
        w, V, c = self._eig
        return np.maximum((V @ (np.exp((self.T - t) * w) * c)).real, 0.0)

    def at_many(self, ts: np.ndarray) -> np.ndarray:
        if self._eig is None:
            return np.stack([self.at(t) for t in ts])
        w, V, c = self._eig
        e = np.exp((self.T - np.asarray(ts))[:, None] * w[None, :])
        return np.maximum(((e * c[None, :]) @ V.T).real, 0.0)


def guided_generator(spec: CtmcGuideSpec, t: float, htilde: np.ndarray | None = None):
    """Tilted generator q(x, y) htilde(t, y)/htilde(t, x) with zero row sums."""
    h = _HtildeEvaluator(spec).at(t) if htilde is None else htilde
    if np.any(h <= 0):
        raise ZeroH("htilde vanishes somewhere at this time")
    G = spec.Q * (h[None, :] / h[:, None])
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    return G


def _simpson_batched(f_vec, a: float, b: float, tol: float) -> float:
    """Adaptive Simpson with all active subintervals evaluated per level."""
    if b <= a:
        return 0.0
    xs = np.array([a, 0.5 * (a + b), b])
    fs = f_vec(xs)
    total = 0.0
    stack = [(a, b, fs[0], fs[1], fs[2], (b - a) / 6.0 * (fs[0] + 4 * fs[1] + fs[2]), 0)]
    while stack:
        mids = np.concatenate(
            [[0.5 * (lo + 0.5 * (lo + hi)), 0.5 * (0.5 * (lo + hi) + hi)]
             for lo, hi, *_ in stack]
        )
        fmids = f_vec(mids)
        nxt = []
        for i, (lo, hi, flo, fmid, fhi, whole, depth) in enumerate(stack):
            m = 0.5 * (lo + hi)
            flm, frm = fmids[2 * i], fmids[2 * i + 1]
            left = (m - lo) / 6.0 * (flo + 4 * flm + fmid)
            right = (hi - m) / 6.0 * (fmid + 4 * frm + fhi)
            err = left + right - whole
            if depth >= 24 or abs(err) <= 15.0 * max(tol * (hi - lo) / (b - a), 1e-300):
                total += left + right + err / 15.0
            else:
                lm, rm = 0.5 * (lo + m), 0.5 * (m + hi)
                nxt.append((lo, m, flo, flm, fmid, left, depth + 1))
                nxt.append((m, hi, fmid, frm, fhi, right, depth + 1))
        stack = nxt
    return total


def simulate_guided_ctmc(spec: CtmcGuideSpec, x0: int, seed: Seed):
    """Sample one guided chain path and its log weight.

    Jump times come from thinning against a per-state piecewise-constant
    majoriser built on a time grid (refreshed per cell and per event); a
    runtime check raises BoundExceeded if the margin was too small.  The
    weight integral runs per constant-state segment with adaptive Simpson.
    """
    R = spec.size
    if not 0 <= x0 < R:
        raise DimMismatch("initial state outside the alphabet")
    ev = _HtildeEvaluator(spec)
    if ev.at(0.0)[x0] <= 0:
        raise ZeroH("htilde vanishes at the initial state")
    rng = seed.generator()
    T = spec.horizon
    grid = np.linspace(0.0, T * (1.0 - 1e-9), spec.grid_cells + 1)
    H = ev.at_many(grid)  # (cells + 1, R)
    if np.any(H <= 0):
        H = np.maximum(H, 1e-300)
    off = spec.Q - np.diag(np.diag(spec.Q))
    rate_table = (H @ off.T) / H  # rate_table[i, x] = sum_y q(x,y) h_y / h_x
    bounds = spec.margin * np.maximum(rate_table[:-1], rate_table[1:])  # per cell
    widths = np.diff(grid)
    cumhaz = np.concatenate(
        [np.zeros((1, R)), np.cumsum(bounds * widths[:, None], axis=0)]
    )  # (cells + 1, R)

    diff = spec.Q - spec.Q_tilde
    exact_surrogate = bool(np.allclose(diff, 0.0, atol=0.0))

    def rate_at(t, x):
        h = ev.at(t)
        if h[x] <= 0:
            raise ZeroH(f"htilde vanished in state {x} at time {t:.6g}")
        return float(off[x] @ h) / h[x], h

    def segment_logw(x, a, b):
        if exact_surrogate or b <= a:
            return 0.0

        def f_vec(ts):
            hs = ev.at_many(ts)
            hx = hs[:, x]
            if np.any(hx <= 0):
                raise ZeroH(f"htilde vanished in state {x}")
            return (hs @ diff[x]) / hx

        return _simpson_batched(f_vec, a, b, spec.quad_tol)

    t, x = 0.0, int(x0)
    times, states = [0.0], [x]
    logw = 0.0
    seg_start = 0.0
    while True:
        # position in state-x cumulative hazard
        j = min(np.searchsorted(grid, t, side="right") - 1, spec.grid_cells - 1)
        base = cumhaz[j, x] + bounds[j, x] * (t - grid[j])
        target_h = base + rng.exponential()
        if target_h >= cumhaz[-1, x]:
            break  # no further proposals before the horizon
        jcell = int(np.searchsorted(cumhaz[:, x], target_h, side="right") - 1)
        jcell = min(jcell, spec.grid_cells - 1)
        s = grid[jcell] + (target_h - cumhaz[jcell, x]) / bounds[jcell, x]
        s = min(max(s, t + 1e-18), grid[-1])
        r, h = rate_at(s, x)
        if r > bounds[jcell, x] * (1.0 + 1e-9):
            raise BoundExceeded(
                f"rate {r:.4g} exceeded the cell bound {bounds[jcell, x]:.4g}; "
                "refine the grid or raise the margin"
            )
        t = s
        if rng.random() < r / bounds[jcell, x]:
            weights = off[x] * h
            weights[x] = 0.0
            y = int(rng.choice(R, p=weights / weights.sum()))
            logw += segment_logw(x, seg_start, s)
            seg_start = s
            x = y
            times.append(s)
            states.append(x)
    logw += segment_logw(x, seg_start, T)
    return np.asarray(times), np.asarray(states, dtype=int), logw


def path_to_csv(times: np.ndarray, states: np.ndarray) -> str:
    """Serialize an event path as CSV with columns time, state."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time", "state"])
    for t, s in zip(times, states):
        writer.writerow([repr(float(t)), int(s)])
    return buf.getvalue()
