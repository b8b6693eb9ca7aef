"""Closed-form backward and forward rules for Gaussian transitions.

Transitions are y | x ~ Normal(mu(x), Q(x)); the backward side always uses
an affine surrogate Normal(Phi x + beta, Q).  With h in canonical form
U(c, F, H) everything stays Gaussian: initialisation at observed leaves,
pullback through an affine kernel, pointwise evaluation of the pullback
through the possibly nonlinear forward kernel, the guided one-step sampler,
and marginalisation to product form.

All algebra is arranged so that H itself is never inverted: the identities

    (Q + H^-1)^-1       = H (QH + I)^-1
    (Q + H^-1)^-1 H^-1  = (HQ + I)^-1

hold for any symmetric positive semidefinite H as long as Q is positive
definite, which keeps rank-deficient h's from partial observations usable.
Only marginalisation genuinely needs H^-1; there a tiny jitter is added
with a logged warning when H is numerically singular.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import DimMismatch, SingularC, SingularH, SingularQ
from .hfun import GaussianCanonical, ProductH, log_phi_can_at_zero

logger = logging.getLogger(__name__)

_LOG2PI = float(np.log(2.0 * np.pi))
_RCOND_FLOOR = 1e-12
_JITTER = 1e-10


def _chol(M: np.ndarray, err):
    M = 0.5 * (M + M.T)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise err("matrix is not positive definite") from None
    diag = np.diag(L)
    if diag.min() ** 2 < _RCOND_FLOOR * diag.max() ** 2:
        raise err("reciprocal condition estimate below 1e-12")
    return L

def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def log_normal_density(x, mean, cov, err=SingularQ) -> float:
    """log of the Normal(mean, cov) density at x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = _chol(np.atleast_2d(np.asarray(cov, dtype=float)), err)
    z = np.linalg.solve(L, x - mean)
    return float(-0.5 * z @ z - np.log(np.diag(L)).sum() - 0.5 * x.shape[0] * _LOG2PI)


def leaf_init(y_obs, Phi, beta, Q) -> GaussianCanonical:
    """h at the parent of a leaf with observation y through an affine kernel.

    Returns U(cbar, Fbar, Hbar) with Hbar = Phi' Q^-1 Phi (rank-deficient
    when the observation has fewer dimensions than the state, which later
    fusion or regularisation must repair).
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    y = np.atleast_1d(np.asarray(y_obs, dtype=float))
    L = _chol(np.atleast_2d(np.asarray(Q, dtype=float)), SingularQ)
    Qi_Phi = _chol_solve(L, Phi)
    Hbar = 0.5 * (Phi.T @ Qi_Phi + (Phi.T @ Qi_Phi).T)
    Fbar = Qi_Phi.T @ (y - beta)
    cbar = log_normal_density(beta, y, np.atleast_2d(np.asarray(Q, dtype=float)))
    return GaussianCanonical(cbar, Fbar, Hbar)


def pullback_affine(h: GaussianCanonical, Phi, beta, Q) -> GaussianCanonical:
    """Pull h back through the affine kernel Normal(Phi x + beta, Q).

    Equivalent to Hbar = Phi' C^-1 Phi, Fbar = Phi' C^-1 (H^-1 F - beta),
    cbar = c - log phi_can(0; F, H) + log phi(beta; H^-1 F, C) with
    C = Q + H^-1, rewritten inverse-free in H.
    """
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    F, H = h.F, h.H
    d = F.shape[0]
    if Phi.shape[0] != d or beta.shape[0] != d or Q.shape[0] != d:
        raise DimMismatch(
            f"h lives on dimension {d} but the kernel targets {beta.shape[0]}"
        )
    A = Q @ H + np.eye(d)  # A' = HQ + I
    sign, logdetA = np.linalg.slogdet(A)
    if sign <= 0 or not np.isfinite(logdetA):
        raise SingularC("Q + H^-1 is numerically singular")
    if np.linalg.cond(A) > 1.0 / _RCOND_FLOOR:
        raise SingularC("reciprocal condition estimate below 1e-12")
    Cinv = H @ np.linalg.inv(A)
    Cinv = 0.5 * (Cinv + Cinv.T)
    At_inv_F = np.linalg.solve(A.T, F)  # (HQ + I)^-1 F = C^-1 H^-1 F
    Hbar = Phi.T @ Cinv @ Phi
    Hbar = 0.5 * (Hbar + Hbar.T)
    Fbar = Phi.T @ (At_inv_F - Cinv @ beta)
    cbar = (
        h.c
        - 0.5 * logdetA
        + 0.5 * float(F @ np.linalg.solve(A, Q @ F))
        + float(beta @ At_inv_F)
        - 0.5 * float(beta @ Cinv @ beta)
    )
    return GaussianCanonical(cbar, Fbar, Hbar)


def log_pullback_at(h: GaussianCanonical, mean_fn, cov_fn, x) -> float:
    """log (kappa h)(x) for the kernel Normal(mu(x), Q(x)).

    Equals log varpi(c, F, H) + log phi(H^-1 F; mu(x), Q(x) + H^-1), in a
    form that tolerates rank-deficient H.
    """
    x = np.asarray(x, dtype=float)
    mu = np.atleast_1d(np.asarray(mean_fn(x), dtype=float))
    Q = np.atleast_2d(np.asarray(cov_fn(x), dtype=float))
    F, H = h.F, h.H
    d = F.shape[0]
    LQ = _chol(Q, SingularQ)
    Qi_mu = _chol_solve(LQ, mu)
    b = F + Qi_mu
    A = Q @ H + np.eye(d)
    sign, logdetA = np.linalg.slogdet(A)
    if sign <= 0:
        raise SingularC("Q(x) + H^-1 is numerically singular")
    P = H + _chol_solve(LQ, np.eye(d))  # H + Q^-1
    LP = _chol(P, SingularC)
    z = np.linalg.solve(LP, b)
    return float(h.c - 0.5 * logdetA + 0.5 * z @ z - 0.5 * mu @ Qi_mu)


def guided_step_params(h: GaussianCanonical, mean_fn, cov_fn, x):
    """Mean and covariance of the guided one-step law at x.

    The draw targets the canonical normal with potential F + Q(x)^-1 mu(x)
    and precision H + Q(x)^-1.
    """
    x = np.asarray(x, dtype=float)
    mu = np.atleast_1d(np.asarray(mean_fn(x), dtype=float))
    Q = np.atleast_2d(np.asarray(cov_fn(x), dtype=float))
    d = mu.shape[0]
    LQ = _chol(Q, SingularQ)
    b = h.F + _chol_solve(LQ, mu)
    P = h.H + _chol_solve(LQ, np.eye(d))
    LP = _chol(P, SingularC)
    mean = _chol_solve(LP, b)
    return mean, LP


def forward_draw(h_num: GaussianCanonical, denom_log_at, mean_fn, cov_fn, x, z):
    """One guided transition from x driven by standard normals z.

    Returns ``(logw_increment, y)`` where the increment is
    log (kappa h)(x) - log (kappa_tilde h)(x).
    """
    mean, LP = guided_step_params(h_num, mean_fn, cov_fn, x)
    y = mean + np.linalg.solve(LP.T, np.asarray(z, dtype=float))
    inc = log_pullback_at(h_num, mean_fn, cov_fn, x) - denom_log_at(x)
    return inc, y


def marginalise(h: GaussianCanonical, blocks: list) -> ProductH:
    """Project h over a product space onto product form (moment matching).

    Each component i is sqrt(varpi) * NormalDensity(mu_i, P_ii) with
    mu = H^-1 F and P = H^-1, so the component masses multiply back to the
    mass of h.  ``blocks`` lists the index arrays of the partition.
    """
    H = h.H
    d = H.shape[0]
    try:
        L = _chol(H, SingularH)
    except SingularH:
        logger.warning(
            "marginalise: H numerically singular, adding %.0e jitter", _JITTER
        )
        H = H + _JITTER * np.eye(d)
        L = _chol(H, SingularH)
        h = GaussianCanonical(h.c, h.F, H)
    P = _chol_solve(L, np.eye(d))
    mu = _chol_solve(L, h.F)
    log_mass = h.log_mass()
    idx_all = np.concatenate([np.asarray(b, dtype=int) for b in blocks])
    if sorted(idx_all.tolist()) != list(range(d)):
        raise SingularH("blocks must partition the state dimensions")
    parts = []
    k = len(blocks)
    for b in blocks:
        b = np.asarray(b, dtype=int)
        Pb = P[np.ix_(b, b)]
        Hb = _chol_solve(_chol(Pb, SingularH), np.eye(len(b)))
        Hb = 0.5 * (Hb + Hb.T)
        Fb = Hb @ mu[b]
        cb = log_mass / k + log_phi_can_at_zero(Fb, Hb)
        parts.append(GaussianCanonical(cb, Fb, Hb))
    return ProductH(tuple(parts))


def affine_guided_params(h_num: GaussianCanonical, Phi, beta, Q):
    """Affine form (S, s0, Sigma) of the guided step y = S x + s0 + noise."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = beta.shape[0]
    LQ = _chol(Q, SingularQ)
    Qi = _chol_solve(LQ, np.eye(d))
    P = h_num.H + Qi
    LP = _chol(P, SingularC)
    Sigma = _chol_solve(LP, np.eye(d))
    S = Sigma @ (Qi @ Phi)
    s0 = Sigma @ (h_num.F + Qi @ beta)
    return S, s0, 0.5 * (Sigma + Sigma.T)


def forward_marginal(h_num: GaussianCanonical, Phi, beta, Q, mean, cov):
    """Push a Gaussian marginal through one guided affine step.

    Exact when the per-state weight is constant, which holds whenever the
    backward kernel equals the forward kernel (linear models).
    """
    S, s0, Sigma = affine_guided_params(h_num, Phi, beta, Q)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    m = S @ mean + s0
    C = S @ cov @ S.T + Sigma
    return m, 0.5 * (C + C.T)
