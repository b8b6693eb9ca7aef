"""Independent brute-force references for testing.

Everything here is deliberately written against the raw model definitions,
never against the filtering or sampling code paths, so tests can compare
two genuinely different routes to the same number.  This module must not
import the rule modules (engine, gaussian, discrete, gamma, ctime); a test
enforces that.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import AcceptanceTooLow, SingularCovariance, SpaceMismatch, TooLarge
from .graph import LEAF, TransitionGraph
from .kernels import Dirac, DiscreteMatrix, GaussianAffine
from .spaces import Finite

_LOG2PI = float(np.log(2.0 * np.pi))
_MAX_PATHS = 10_000_000


# --- exact discrete smoothing by enumeration -----------------------------------

@dataclass(frozen=True)
class DiscreteSmoothing:
    latents: tuple
    joint: dict          # assignment tuple (over latents, topo order) -> prob
    marginals: dict      # vertex -> probability vector
    evidence: float      # total probability of the observations
    log_evidence: float


def enumerate_discrete_smoothing(graph: TransitionGraph) -> DiscreteSmoothing:
    """Sum the complete-data likelihood over every latent path.

    Works on any single-parent graph whose latent vertices live on finite
    alphabets.  Exact up to floating point; cost is the product of the
    alphabet sizes, capped at ten million paths.
    """
    latents = graph.latents()
    sizes = []
    for t in latents:
        space = graph.space_of(t)
        if not isinstance(space, Finite):
            raise SpaceMismatch("enumeration needs finite latent spaces")
        sizes.append(space.size)
    total = int(np.prod(sizes)) if sizes else 1
    if total > _MAX_PATHS:
        raise TooLarge(f"{total} paths exceed the enumeration budget")

    def trans_prob(t, x_parent, value):
        k = graph.kernel_of[t]
        if isinstance(k, DiscreteMatrix):
            return float(k.K[int(x_parent), int(value)])
        if isinstance(k, Dirac):
            return 1.0 if int(x_parent) == int(value) else 0.0
        raise SpaceMismatch(f"enumeration cannot price {type(k).__name__}")

    index = {t: i for i, t in enumerate(latents)}
    joint: dict = {}
    evidence = 0.0
    marg = {t: np.zeros(s) for t, s in zip(latents, sizes)}
    for assign in itertools.product(*[range(s) for s in sizes]):
        w = 1.0
        for t in graph.topo_order:
            parent = graph.parents[t][0]
            if parent == graph.root:
                x_parent = graph.root_value
            else:
                x_parent = assign[index[parent]]
            value = (
                graph.observation_of[t]
                if graph.roles[t] == LEAF
                else assign[index[t]]
            )
            w *= trans_prob(t, x_parent, value)
            if w == 0.0:
                break
        if w > 0.0:
            joint[assign] = w
            evidence += w
    if evidence <= 0.0:
        raise TooLarge("observations have zero probability under the model")
    for assign, w in joint.items():
        p = w / evidence
        joint[assign] = p
        for t in latents:
            marg[t][assign[index[t]]] += p
    return DiscreteSmoothing(
        latents, joint, marg, evidence, float(np.log(evidence))
    )


# --- Kalman filter and Rauch-Tung-Striebel smoother ------------------------------

@dataclass(frozen=True)
class KalmanResult:
    chain: tuple
    filtered: dict   # vertex -> (mean, cov) after its observation updates
    smoothed: dict   # vertex -> (mean, cov)
    log_evidence: float


def _logpdf(y, mean, cov):
    y = np.atleast_1d(y)
    mean = np.atleast_1d(mean)
    cov = np.atleast_2d(cov)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SingularCovariance("innovation covariance is singular") from None
    z = np.linalg.solve(L, y - mean)
    return float(-0.5 * z @ z - np.log(np.diag(L)).sum() - 0.5 * len(y) * _LOG2PI)


def kalman_rts_reference(graph: TransitionGraph) -> KalmanResult:
    """Exact filtering and smoothing for an affine-Gaussian latent chain.

    The graph must be a line of latent vertices hanging off the root, with
    any number of affine-Gaussian observation leaves per latent vertex.
    """
    chain = [t for t in graph.topo_order if graph.roles[t] != LEAF]
    prev = graph.root
    for t in chain:
        if graph.parents[t] != (prev,):
            raise SpaceMismatch("reference smoother needs a latent line graph")
        prev = t

    mean = np.atleast_1d(np.asarray(graph.root_value, dtype=float))
    cov = np.zeros((mean.shape[0], mean.shape[0]))
    log_ev = 0.0
    priors, posts = {}, {}
    for t in chain:
        k = graph.kernel_of[t]
        if not isinstance(k, GaussianAffine):
            raise SpaceMismatch("reference smoother needs affine kernels")
        m_pred = k.Phi @ mean + k.beta
        p_pred = k.Phi @ cov @ k.Phi.T + k.Q
        priors[t] = (m_pred, p_pred)
        m_cur, p_cur = m_pred, p_pred
        for leaf in graph.children[t]:
            if graph.roles[leaf] != LEAF:
                continue
            ok = graph.kernel_of[leaf]
            if not isinstance(ok, GaussianAffine):
                raise SpaceMismatch("reference smoother needs affine observations")
            y = np.atleast_1d(np.asarray(graph.observation_of[leaf], dtype=float))
            resid = y - (ok.Phi @ m_cur + ok.beta)
            S = ok.Phi @ p_cur @ ok.Phi.T + ok.Q
            log_ev += _logpdf(y, ok.Phi @ m_cur + ok.beta, S)
            gain = p_cur @ ok.Phi.T @ np.linalg.inv(S)
            m_cur = m_cur + gain @ resid
            p_cur = p_cur - gain @ S @ gain.T
            p_cur = 0.5 * (p_cur + p_cur.T)
        posts[t] = (m_cur, p_cur)
        mean, cov = m_cur, p_cur

    smoothed = {chain[-1]: posts[chain[-1]]}
    for i in range(len(chain) - 2, -1, -1):
        t, t_next = chain[i], chain[i + 1]
        k = graph.kernel_of[t_next]
        m_f, p_f = posts[t]
        m_pred, p_pred = priors[t_next]
        gain = p_f @ k.Phi.T @ np.linalg.inv(p_pred)
        m_s, p_s = smoothed[t_next]
        m = m_f + gain @ (m_s - m_pred)
        P = p_f + gain @ (p_s - p_pred) @ gain.T
        smoothed[t] = (m, 0.5 * (P + P.T))
    return KalmanResult(tuple(chain), posts, smoothed, log_ev)


# --- adaptive Simpson quadrature ---------------------------------------------------

def _simpson(f, a, fa, b, fb):
    m = 0.5 * (a + b)
    fm = f(m)
    return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def quadrature_1d(f, a: float, b: float, rel_tol: float = 1e-8, abs_tol: float = 0.0,
                  max_depth: int = 30) -> float:
    """Adaptive Simpson integral of f on [a, b] with error control.

    The tolerance is anchored to a pilot estimate of the whole integral and
    halved on every split, the textbook scheme, so flat near-zero stretches
    terminate immediately instead of chasing a relative target of zero.
    """
    fa, fb = f(a), f(b)
    m, fm, whole = _simpson(f, a, fa, b, fb)
    _, _, left0 = _simpson(f, a, fa, m, fm)
    _, _, right0 = _simpson(f, m, fm, b, fb)
    pilot = left0 + right0 + (left0 + right0 - whole) / 15.0
    tol0 = max(abs_tol, rel_tol * abs(pilot))
    if tol0 == 0.0:
        tol0 = np.finfo(float).tiny

    def recurse(a, fa, b, fb, m, fm, whole, tol, depth):
        lm, flm, left = _simpson(f, a, fa, m, fm)
        rm, frm, right = _simpson(f, m, fm, b, fb)
        err = left + right - whole
        if depth >= max_depth or abs(err) <= 15.0 * tol:
            return left + right + err / 15.0
        half = 0.5 * tol
        return recurse(a, fa, m, fm, lm, flm, left, half, depth + 1) + recurse(
            m, fm, b, fb, rm, frm, right, half, depth + 1
        )

    return recurse(a, fa, b, fb, m, fm, whole, tol0, 0)


# --- rejection sampling of conditioned paths -----------------------------------------

def rejection_conditioned_paths(
    simulate,
    predicate,
    n_accept: int,
    seed,
    pilot: int = 10_000,
    min_acceptance: float = 1e-4,
):
    """Exact conditional paths by rejection from an unconditional simulator.

    ``simulate(rng)`` produces one path; ``predicate(path)`` accepts it.
    A pilot run estimates the acceptance rate and refuses hopeless setups.
    Returns (paths, estimated acceptance probability).
    """
    rng = np.random.default_rng(seed.seq if hasattr(seed, "seq") else seed)
    hits = 0
    accepted = []
    for _ in range(pilot):
        path = simulate(rng)
        if predicate(path):
            hits += 1
            if len(accepted) < n_accept:
                accepted.append(path)
    p_hat = hits / pilot
    if p_hat < min_acceptance:
        raise AcceptanceTooLow(
            f"pilot acceptance {p_hat:.2e} below {min_acceptance:.0e}"
        )
    while len(accepted) < n_accept:
        path = simulate(rng)
        if predicate(path):
            accepted.append(path)
    return accepted, p_hat
