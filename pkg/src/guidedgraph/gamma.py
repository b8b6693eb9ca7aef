"""Rules for chains with Gamma-distributed increments on a line graph.

The chain moves by y = x + Gamma(alpha, rate(x)); the backward surrogate
fixes the rate to a constant, under which h keeps the form
h(y) = GammaDensity(target - y; A, rate) and pullback just accumulates the
shape.  The guided one-step law is an exponentially tilted Beta over the
remaining gap, and the per-step weight is

    w(x) = (rate(x)/rate)^alpha * E exp(-xi(x) Z),   Z ~ Beta(alpha, A),

with xi(x) = (rate(x) - rate) (target - x).  The expectation is computed
either by fixed Gauss-Jacobi quadrature (deterministic) or by Monte Carlo
(unbiased, the estimator pseudo-marginal samplers need).

Fusion of two Gamma h's has no closed form; these rules are restricted to
line graphs and interacting systems handle products by filtering each
coordinate on its own line graph.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import DimMismatch, StateBeyondTarget
from .hfun import GammaH
from .rng import Seed

_NODES = 64
_SMALL_SHAPE = 0.02  # below this, quadrature nodes crowd the singular endpoint
_SMALL_SHAPE_MC = 200_000


@lru_cache(maxsize=256)
def _beta_weight_nodes(g1: float, g2: float, n: int = _NODES):
    """Nodes s and weights w with  int_0^1 s^(g1-1)(1-s)^(g2-1) f(s) ds
    = sum w_j f(s_j)."""
    x, w = roots_jacobi(n, g2 - 1.0, g1 - 1.0)
    s = 0.5 * (x + 1.0)
    return s, w * 2.0 ** (-(g1 + g2 - 1.0))


@lru_cache(maxsize=256)
def _left_weight_nodes(g: float, n: int = _NODES):
    """Nodes s and weights w with  int_0^1 s^(g-1) f(s) ds = sum w_j f(s_j)."""
    x, w = roots_jacobi(n, 0.0, g - 1.0)
    s = 0.5 * (x + 1.0)
    return s, w * 2.0 ** (-g)


def tilted_beta_mean_exp(alpha: float, a: float, lam: float, estimator="quadrature",
                         rng: np.random.Generator | None = None, n_mc: int = 10_000) -> float:
    """E exp(-lam Z) for Z ~ Beta(alpha, a)."""
    if alpha <= 0 or a <= 0:
        raise DimMismatch("Beta parameters must be positive")
    if estimator == "quadrature":
        if alpha < _SMALL_SHAPE or a < _SMALL_SHAPE:
            # endpoint singularity too sharp for fixed nodes; fall back to MC
            g = np.random.default_rng(0) if rng is None else rng
            z = g.beta(alpha, a, size=_SMALL_SHAPE_MC)
            return float(np.mean(np.exp(-lam * z)))
        s, w = _beta_weight_nodes(float(alpha), float(a))
        num = float(np.sum(w * np.exp(-lam * s)))
        den = float(np.sum(w))
        return num / den
    if estimator == "monte_carlo":
        if rng is None:
            raise DimMismatch("monte_carlo estimator needs a generator")
        z = rng.beta(alpha, a, size=n_mc)
        return float(np.mean(np.exp(-lam * z)))
    raise DimMismatch(f"unknown estimator {estimator!r}")


def pullback_tilde(h: GammaH, alpha: float) -> GammaH:
    """Pullback through the constant-rate kernel: the shape accumulates."""
    if alpha <= 0:
        raise DimMismatch("increment shape must be positive")
    return GammaH(h.shape_a + alpha, h.rate, h.target)


def log_weight(
    x: float,
    alpha: float,
    rate_x: float,
    rate: float,
    a: float,
    target: float,
    estimator="quadrature",
    rng: np.random.Generator | None = None,
    n_mc: int = 10_000,
) -> float:
    """Per-step log weight alpha log(rate_x/rate) + log E exp(-xi Z).

    With ``estimator='monte_carlo'`` the returned value is the log of an
    estimate that is unbiased on the linear scale.
    """
    x = float(x)
    if x >= target:
        raise StateBeyondTarget(f"state {x} is not below the target {target}")
    xi = (rate_x - rate) * (target - x)
    mean_exp = tilted_beta_mean_exp(alpha, a, xi, estimator, rng, n_mc)
    return float(alpha * np.log(rate_x / rate) + np.log(mean_exp))


# --- exponentially tilted Beta ----------------------------------------------

def expbeta_logpdf_unnorm(z, g1: float, g2: float, lam: float):
    z = np.asarray(z, dtype=float)
    return (g1 - 1.0) * np.log(z) + (g2 - 1.0) * np.log1p(-z) - lam * z


def sample_expbeta(g1: float, g2: float, lam: float, seed) -> float:
    """Draw from the density proportional to z^(g1-1)(1-z)^(g2-1)exp(-lam z).

    Rejection from Beta(g1, g2) with acceptance exp(-lam z) when lam >= 0
    and exp(-lam (z - 1)) when lam < 0; the acceptance probability is
    bounded below for bounded lam.
    """
    rng = seed.generator() if isinstance(seed, Seed) else seed
    batch = max(8, int(4 * (1.0 + abs(lam))))
    while True:
        z = rng.beta(g1, g2, size=batch)
        u = rng.random(batch)
        log_acc = -lam * z if lam >= 0 else -lam * (z - 1.0)
        ok = np.log(u) <= log_acc
        if np.any(ok):
            return float(z[np.argmax(ok)])


def expbeta_unnorm_cdf(t: float, g1: float, g2: float, lam: float) -> float:
    """Unnormalised CDF integral of the tilted Beta density on (0, t]."""
    t = float(t)
    if t <= 0.0:
        return 0.0
    if t >= 1.0:
        s, w = _beta_weight_nodes(float(g1), float(g2))
        return float(np.sum(w * np.exp(-lam * s)))
    if t <= 0.5:
        s, w = _left_weight_nodes(float(g1))
        vals = (1.0 - t * s) ** (g2 - 1.0) * np.exp(-lam * t * s)
        return float(t**g1 * np.sum(w * vals))
    s, w = _left_weight_nodes(float(g2))
    r = 1.0 - t
    zz = 1.0 - r * s
    vals = zz ** (g1 - 1.0) * np.exp(-lam * zz)
    tail = float(r**g2 * np.sum(w * vals))
    return expbeta_unnorm_cdf(1.0, g1, g2, lam) - tail


def expbeta_ppf(u: float, g1: float, g2: float, lam: float) -> float:
    """Quantile of the tilted Beta by safeguarded Newton on the quadrature CDF.

    Gives the fixed-dimension deterministic form of the sampler that
    innovation-driven (pCN) forward passes require.
    """
    total = expbeta_unnorm_cdf(1.0, g1, g2, lam)
    target = float(u) * total
    lo, hi = 0.0, 1.0
    t = 0.5
    for _ in range(100):
        f = expbeta_unnorm_cdf(t, g1, g2, lam) - target
        if f < 0.0:
            lo = t
        else:
            hi = t
        if hi - lo < 1e-14:
            break
        dens = float(np.exp(expbeta_logpdf_unnorm(t, g1, g2, lam)))
        step = t - f / dens if dens > 0 and np.isfinite(dens) else None
        t = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
    return 0.5 * (lo + hi)


def expbeta_ppf_batch(u: np.ndarray, g1: float, g2: float, lam: float,
                      grid: int = 4096) -> np.ndarray:
    """Vectorised quantiles for a batch of uniforms at a common tilt.

    Inverts a dense cumulative grid of the tilted density and polishes with
    two safeguarded Newton steps, so large batches cost an interp plus a
    handful of vector operations.
    """
    u = np.asarray(u, dtype=float)
    lam = float(lam)
    ts = np.linspace(0.0, 1.0, grid + 1)
    mids = 0.5 * (ts[:-1] + ts[1:])
    dens_mid = np.exp(expbeta_logpdf_unnorm(mids, g1, g2, lam))
    # Riemann sums only localise the root; the quadrature CDF refines it.
    cdf = np.concatenate([[0.0], np.cumsum(dens_mid) * (1.0 / grid)])
    total = expbeta_unnorm_cdf(1.0, g1, g2, lam)
    target = u * (cdf[-1] / total) * total  # in grid-cdf units
    t = np.interp(target, cdf, ts)
    t = np.clip(t, 1e-12, 1.0 - 1e-12)
    target = u * total
    sl, wl = _left_weight_nodes(float(g1))
    sr, wr = _left_weight_nodes(float(g2))
    sf, wf = _beta_weight_nodes(float(g1), float(g2))
    full = float(np.sum(wf * np.exp(-lam * sf)))

    def unnorm_cdf_vec(t):
        out = np.empty_like(t)
        left = t <= 0.5
        if np.any(left):
            tt = t[left][:, None]
            vals = (1.0 - tt * sl) ** (g2 - 1.0) * np.exp(-lam * tt * sl)
            out[left] = (tt[:, 0] ** g1) * (vals @ wl)
        if np.any(~left):
            r = 1.0 - t[~left][:, None]
            zz = 1.0 - r * sr
            vals = zz ** (g1 - 1.0) * np.exp(-lam * zz)
            out[~left] = full - (r[:, 0] ** g2) * (vals @ wr)
        return out

    for _ in range(3):
        f = unnorm_cdf_vec(t) - target
        dens = np.exp(expbeta_logpdf_unnorm(t, g1, g2, lam))
        step = np.where(dens > 0, f / np.maximum(dens, 1e-300), 0.0)
        t = np.clip(t - step, 1e-12, 1.0 - 1e-12)
    return t


def forward_draw(h_num: GammaH, x: float, alpha: float, rate_x: float, u: float):
    """One guided step from x driven by a single uniform innovation.

    Draws z from ExpBeta(alpha, A, xi(x)) and lands on y = x + z (target - x),
    always inside (x, target).  Returns (logw_increment, y) with the
    increment given by the quadrature weight.
    """
    x = float(x)
    target, rate = h_num.target, h_num.rate
    if x >= target:
        raise StateBeyondTarget(f"state {x} is not below the target {target}")
    xi = (rate_x - rate) * (target - x)
    z = expbeta_ppf(u, alpha, h_num.shape_a, xi)
    y = x + z * (target - x)
    inc = log_weight(x, alpha, rate_x, rate, h_num.shape_a, target)
    return inc, y


def adjoint_sample_line(alphas, rate: float, x_v: float, seed: Seed) -> np.ndarray:
    """Sample the reverse-time representation of the backward filter.

    On a line graph with constant rate the h at each vertex is exactly the
    density of a process started at the observed endpoint that subtracts an
    independent Gamma(alpha_t, rate) per edge; its weights are identically
    one.  ``alphas`` lists the edge shapes in root-to-leaf order; the
    returned trajectory runs in the same order and ends at ``x_v``.
    """
    rng = seed.generator()
    alphas = np.asarray(alphas, dtype=float)
    decs = rng.gamma(shape=alphas, scale=1.0 / rate)
    traj = np.empty(alphas.shape[0] + 1)
    traj[-1] = x_v
    for i in range(alphas.shape[0] - 1, -1, -1):
        traj[i] = traj[i + 1] - decs[i]
    return traj
