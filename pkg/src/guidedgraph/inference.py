"""Exact-target inference driven by guided forward passes.

Everything here works on the quantity

    log Psi(x) = log h0_tilde(x0) + sum_s log w_s(x_pa(s)),

the tractable part of the likelihood ratio between the conditioned process
and the guided one.  Self-normalised importance sampling, the evidence
identity h0 = h0_tilde E[prod w], and Metropolis-Hastings moves that keep
the exact smoothing or posterior law all reduce to evaluating log Psi.

Latent states are reparametrised through a frozen innovation layout: one
standard normal per innovation slot, so that a preconditioned
Crank-Nicolson proposal on the innovation vector is a valid move for every
edge family (uniform-driven edges read their innovations through the
normal CDF).  The forward map is deterministic given the innovations, so
log Psi is recomputable bit-exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .engine import (
    BackwardPass,
    WeightedSample,
    run_forward_pass,
    run_forward_with_innovations,
    total_innovation_dim,
)
from .errors import AllWeightsZero, DimMismatch
from .gamma import log_weight as gamma_log_weight
from .graph import TransitionGraph
from .kernels import GammaIncrement
from .rng import Seed


# --- importance sampling -------------------------------------------------------

def importance_estimate(
    graph: TransitionGraph,
    bp: BackwardPass,
    functional: Callable,
    B: int,
    seed: Seed,
):
    """Self-normalised estimate of E[functional] under the smoothing law.

    Returns (estimate, standard error, effective sample size).  The
    standard error is the delta-method error of the weighted mean.
    """
    if B < 2:
        raise DimMismatch("importance sampling needs at least two replicas")
    logpsi = np.empty(B)
    vals = np.empty(B)
    for i, s in enumerate(seed.spawn(B)):
        ws = run_forward_pass(graph, bp, s)
        logpsi[i] = bp.log_h0 + ws.logw
        vals[i] = functional(ws)
    shift = logpsi.max()
    if not np.isfinite(shift):
        raise AllWeightsZero("every importance weight vanished")
    w = np.exp(logpsi - shift)
    wn = w / w.sum()
    est = float(wn @ vals)
    se = float(np.sqrt(np.sum(wn**2 * (vals - est) ** 2)))
    ess = float(w.sum() ** 2 / np.sum(w**2))
    return est, se, ess


def evidence_estimate(graph: TransitionGraph, bp: BackwardPass, B: int, seed: Seed):
    """Monte Carlo evidence: log h0_tilde(x0) + log mean(prod w).

    Returns (log evidence estimate, standard error on the log scale).
    """
    logw = np.empty(B)
    for i, s in enumerate(seed.spawn(B)):
        logw[i] = run_forward_pass(graph, bp, s).logw
    shift = logw.max()
    if not np.isfinite(shift):
        raise AllWeightsZero("every importance weight vanished")
    w = np.exp(logw - shift)
    log_ev = bp.log_h0 + shift + float(np.log(w.mean()))
    se = float(w.std() / (w.mean() * np.sqrt(B)))
    return log_ev, se


# --- Markov chain state ----------------------------------------------------------

@dataclass(frozen=True)
class ModelContext:
    """A graph plus a completed backward pass over it."""

    graph: TransitionGraph
    bp: BackwardPass


@dataclass(frozen=True)
class ChainState:
    """Current innovations, parameters and cached log Psi of one chain.

    ``logpsi`` is always recomputable bit-exactly from (z, theta) through
    the deterministic forward map.  For pseudo-marginal chains it holds the
    recycled estimate instead of the exact value.
    """

    z: np.ndarray
    context: ModelContext
    logpsi: float
    sample: WeightedSample
    theta: np.ndarray | None = None
    model: object = None
    iteration: int = 0
    accepted: bool = True

    def recompute(self) -> "ChainState":
        ws = run_forward_with_innovations(self.context.graph, self.context.bp, self.z)
        return replace(self, logpsi=self.context.bp.log_h0 + ws.logw, sample=ws)


def init_chain(
    context: ModelContext,
    seed: Seed,
    theta: np.ndarray | None = None,
    model=None,
    weight_estimator: Callable | None = None,
) -> ChainState:
    dim = total_innovation_dim(context.graph)
    use, est_seed = seed.split()
    z = use.generator().standard_normal(dim)
    ws = run_forward_with_innovations(context.graph, context.bp, z)
    if weight_estimator is None:
        logpsi = context.bp.log_h0 + ws.logw
    else:
        logpsi = context.bp.log_h0 + weight_estimator(
            context.graph, context.bp, ws, est_seed.generator()
        )
    return ChainState(z, context, logpsi, ws, theta=theta, model=model)


def pcn_propose(z: np.ndarray, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Autoregressive proposal alpha z + sqrt(1 - alpha^2) w, reversible
    with respect to the standard normal reference."""
    if not 0.0 <= alpha < 1.0:
        raise DimMismatch("pCN mixing parameter must lie in [0, 1)")
    return alpha * z + np.sqrt(1.0 - alpha * alpha) * rng.standard_normal(z.shape[0])


def _mh_latent_step(
    state: ChainState, alpha: float, seed: Seed, weight_estimator: Callable | None
) -> ChainState:
    prop_seed, est_seed, acc_seed = seed.spawn(3)
    z_new = pcn_propose(state.z, alpha, prop_seed.generator())
    graph, bp = state.context.graph, state.context.bp
    ws = run_forward_with_innovations(graph, bp, z_new)
    if weight_estimator is None:
        logpsi_new = bp.log_h0 + ws.logw
    else:
        logpsi_new = bp.log_h0 + weight_estimator(graph, bp, ws, est_seed.generator())
    log_u = np.log(acc_seed.generator().random())
    if log_u < logpsi_new - state.logpsi:
        return replace(
            state, z=z_new, logpsi=logpsi_new, sample=ws,
            iteration=state.iteration + 1, accepted=True,
        )
    return replace(state, iteration=state.iteration + 1, accepted=False)


def pcn_step(state: ChainState, alpha: float, seed: Seed) -> ChainState:
    """One preconditioned Crank-Nicolson move on the innovation vector."""
    return _mh_latent_step(state, alpha, seed, None)


def pmmh_step(
    state: ChainState, alpha: float, weight_estimator: Callable, seed: Seed
) -> ChainState:
    """Pseudo-marginal variant: log Psi is replaced by the log of an
    estimator that is unbiased on the linear scale; the current estimate is
    recycled until the next acceptance.  With the exact evaluator the move
    is indistinguishable from ``pcn_step``."""
    return _mh_latent_step(state, alpha, seed, weight_estimator)


def exact_weight_evaluator(graph, bp, ws: WeightedSample, rng) -> float:
    return ws.logw


def make_gamma_weight_estimator(n_mc: int) -> Callable:
    """Unbiased Monte Carlo estimator of the product of Gamma-edge weights."""

    def estimator(graph: TransitionGraph, bp: BackwardPass, ws: WeightedSample, rng):
        total = 0.0
        for t in graph.topo_order:
            kernel = graph.kernel_of[t]
            if graph.roles[t] == "leaf" or not isinstance(kernel, GammaIncrement):
                total += ws.increments[t]  # exactly computable terms stay exact
                continue
            h = bp.messages[t].numerator
            x = float(ws.state[graph.parents[t][0]]) if graph.parents[t][0] != graph.root else float(graph.root_value)
            total += gamma_log_weight(
                x, kernel.alpha, kernel.rate_at(x), h.rate, h.shape_a, h.target,
                estimator="monte_carlo", rng=rng, n_mc=n_mc,
            )
        return total

    return estimator


def mh_parameter_step(
    state: ChainState,
    prior_logpdf: Callable,
    scales,
    seed: Seed,
) -> ChainState:
    """Random-walk Metropolis move on log theta with fixed innovations.

    The model rebuilds its kernels (and, when the surrogate depends on
    theta, its backward pass) at the proposal; the same innovation vector
    is pushed through the new guided map.  The acceptance ratio multiplies
    the Psi ratio, the prior ratio and the Jacobian of the log transform.
    When the surrogate is theta-free, log h0_tilde is common to both sides
    and cancels inside the Psi ratio.
    """
    if state.model is None or state.theta is None:
        raise DimMismatch("parameter moves need a model with parameters")
    prop_seed, acc_seed = seed.spawn(2)
    theta = np.asarray(state.theta, dtype=float)
    scales = np.broadcast_to(np.asarray(scales, dtype=float), theta.shape)
    theta_new = np.exp(np.log(theta) + scales * prop_seed.generator().standard_normal(theta.shape[0]))
    context_new = state.model.rebuild(theta_new)
    ws = run_forward_with_innovations(context_new.graph, context_new.bp, state.z)
    logpsi_new = context_new.bp.log_h0 + ws.logw
    log_ratio = (
        logpsi_new
        - state.logpsi
        + prior_logpdf(theta_new)
        - prior_logpdf(theta)
        + float(np.sum(np.log(theta_new) - np.log(theta)))
    )
    log_u = np.log(acc_seed.generator().random())
    if log_u < log_ratio:
        return replace(
            state, theta=theta_new, context=context_new, logpsi=logpsi_new,
            sample=ws, iteration=state.iteration + 1, accepted=True,
        )
    return replace(state, iteration=state.iteration + 1, accepted=False)


# --- trace output -----------------------------------------------------------------

def trace_to_csv(rows: list) -> str:
    """CSV trace with columns iter, logpsi, accepted, then theta components."""
    n_theta = max((len(r[3]) for r in rows if r[3] is not None), default=0)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["iter", "logpsi", "accepted"] + [f"theta{i}" for i in range(n_theta)]
    )
    for it, logpsi, accepted, theta in rows:
        row = [it, repr(float(logpsi)), int(accepted)]
        if theta is not None:
            row += [repr(float(v)) for v in theta]
        writer.writerow(row)
    return buf.getvalue()
