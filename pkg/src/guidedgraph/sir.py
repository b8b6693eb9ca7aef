"""Interacting-particle S/I/R experiment.

A lattice of individuals, each Susceptible, Infected or Recovered, evolves
in discrete time steps of length tau: S -> I at rate lam times the number
of infected neighbours (within a fixed radius), I -> R at rate mu, and
R -> S at rate nu.  A small regularisation delta > 0 lets infections occur
spontaneously so that conditioning on observed configurations can never hit
a zero-probability transition.

The full configuration is observed every few steps; latent configurations
in between plus the rate vector theta = (lam, mu, nu) are sampled jointly:
preconditioned Crank-Nicolson moves on the latent innovations interleaved
with random-walk Metropolis moves on log theta.  Backward filtering runs
on one line graph per individual (the interaction is kept only on the
forward side); the per-individual backward matrices adapt to the current
latent sample for an initial fraction of the iterations and are then
frozen, which keeps the post-adaptation chain exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import run_backward_pass
from .errors import ConfigInvalid
from .graph import build_graph
from .inference import (
    ChainState,
    ModelContext,
    init_chain,
    mh_parameter_step,
    pcn_step,
)
from .kernels import Dirac, DiscreteInteracting, IndependentParticles
from .rng import Seed
from .spaces import Finite, ProductSpace

S, I, R = 0, 1, 2
LETTERS = "SIR"
_COLORS = {
    S: (235, 235, 235),
    I: (204, 41, 41),
    R: (61, 92, 204),
    -1: (130, 130, 130),  # unobserved cell in the observation grid
}


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 5000
    pcn_alpha: float = 0.95
    rw_scales: tuple = (0.1, 0.1, 0.1)
    adapt_fraction: float = 1.0 / 3.0
    mix: float = 0.9  # convex-combination coefficient of the adaptation

    def __post_init__(self):
        if not 0.0 <= self.pcn_alpha < 1.0:
            raise ConfigInvalid("pcn_alpha must lie in [0, 1)")
        if not 0.0 <= self.mix <= 1.0:
            raise ConfigInvalid("mix coefficient must lie in [0, 1]")
        if not 0.0 <= self.adapt_fraction <= 1.0:
            raise ConfigInvalid("adapt_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class SirConfig:
    n: int = 20
    tau: float = 0.1
    steps_between_obs: int = 9   # latent configurations between observations
    num_obs: int = 5             # observation times, including time zero
    theta: tuple = (2.5, 0.6, 0.1)
    delta: float = 0.001
    radius: int = 2
    initial_infected: int = 7
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    seed: int = 0
    output_dir: str = "sir_out"
    theta0: tuple | None = None
    prior_rate: float = 0.1

    def __post_init__(self):
        if min(self.theta) <= 0:
            raise ConfigInvalid("all rates must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ConfigInvalid("delta must lie in (0, 1)")
        if self.tau <= 0:
            raise ConfigInvalid("tau must be positive")
        if self.n < 2 or self.num_obs < 2 or self.steps_between_obs < 0:
            raise ConfigInvalid("degenerate lattice or observation layout")

    @property
    def steps(self) -> int:
        return (self.num_obs - 1) * (self.steps_between_obs + 1)

    @property
    def obs_times(self) -> tuple:
        gap = self.steps_between_obs + 1
        return tuple(j * gap for j in range(self.num_obs))


def infected_neighbour_counts(x: np.ndarray, radius: int) -> np.ndarray:
    """Number of infected neighbours of each individual, excluding itself;
    individuals at the boundary simply have fewer neighbours."""
    inf = (np.asarray(x) == I).astype(float)
    window = np.ones(2 * radius + 1)
    return np.convolve(inf, window, mode="same") - inf


def sir_kernel_rows(x: np.ndarray, theta, delta: float, tau: float, radius: int) -> np.ndarray:
    """Per-individual 3x3 transition matrices given the full configuration."""
    lam, mu, nu = theta
    n = len(x)
    counts = infected_neighbour_counts(x, radius)
    stay_s = (1.0 - delta) * np.exp(-tau * lam * counts)
    stay_i = np.exp(-tau * mu)
    stay_r = np.exp(-tau * nu)
    mats = np.zeros((n, 3, 3))
    mats[:, S, S] = stay_s
    mats[:, S, I] = 1.0 - stay_s
    mats[:, I, I] = stay_i
    mats[:, I, R] = 1.0 - stay_i
    mats[:, R, R] = stay_r
    mats[:, R, S] = 1.0 - stay_r
    return mats


def sir_forward_kernel(x: np.ndarray, i: int, theta, delta: float, tau: float,
                       radius: int = 2) -> np.ndarray:
    """Transition matrix of individual i given the global configuration."""
    return sir_kernel_rows(np.asarray(x), theta, delta, tau, radius)[int(i)]


def forward_simulate(config: SirConfig, seed: Seed) -> np.ndarray:
    """Simulate the full (steps + 1, n) configuration grid."""
    rng = seed.generator()
    grid = np.zeros((config.steps + 1, config.n), dtype=int)
    grid[0, : config.initial_infected] = I
    for t in range(config.steps):
        mats = sir_kernel_rows(grid[t], config.theta, config.delta, config.tau, config.radius)
        rows = mats[np.arange(config.n), grid[t]]
        u = rng.random(config.n)
        grid[t + 1] = np.minimum((np.cumsum(rows, axis=1) < u[:, None]).sum(axis=1), 2)
    return grid


def extract_observations(grid: np.ndarray, obs_times) -> dict:
    return {int(t): grid[int(t)].copy() for t in obs_times}


def ktilde_stack(c: np.ndarray, theta, tau: float) -> np.ndarray:
    """Backward per-individual matrices: the S row uses the adapted
    probabilities c, the I and R rows the current rates."""
    _, mu, nu = theta
    steps, n = c.shape
    stay_i = np.exp(-tau * mu)
    stay_r = np.exp(-tau * nu)
    mats = np.zeros((steps, n, 3, 3))
    mats[:, :, S, S] = c
    mats[:, :, S, I] = 1.0 - c
    mats[:, :, I, I] = stay_i
    mats[:, :, I, R] = 1.0 - stay_i
    mats[:, :, R, R] = stay_r
    mats[:, :, R, S] = 1.0 - stay_r
    return mats


def adaptive_backward_kernels(
    latent_grid: np.ndarray,
    c_old: np.ndarray,
    mix: float,
    lam: float,
    delta: float,
    tau: float,
    radius: int,
) -> np.ndarray:
    """Refresh the adapted S-row probabilities from the current sample.

    c_new = mix * c_old + (1 - mix) * (1 - delta) exp(-tau lam n_i(t)) with
    infected-neighbour counts taken from the current latent grid; rows of
    the resulting matrices stay stochastic by construction.
    """
    steps = c_old.shape[0]
    target = np.empty_like(c_old)
    for t in range(steps):
        counts = infected_neighbour_counts(latent_grid[t], radius)
        target[t] = (1.0 - delta) * np.exp(-tau * lam * counts)
    return mix * c_old + (1.0 - mix) * target


def fill_forward(observations: dict, steps: int, n: int) -> np.ndarray:
    """Hold each observation until the next one; used to seed adaptation."""
    grid = np.zeros((steps + 1, n), dtype=int)
    times = sorted(observations)
    cur = observations[times[0]]
    for t in range(steps + 1):
        if t in observations:
            cur = observations[t]
        grid[t] = cur
    return grid


class SirModel:
    """Graph factory with theta-dependent forward kernels and a shared,
    theta-free backward pass (frozen between adaptations)."""

    def __init__(self, config: SirConfig, observations: dict):
        if 0 not in observations:
            raise ConfigInvalid("the initial configuration must be observed")
        self.config = config
        self.observations = {int(t): np.asarray(v, dtype=int) for t, v in observations.items()}
        for t, v in self.observations.items():
            if v.shape != (config.n,) or not np.all((v >= 0) & (v <= 2)):
                raise ConfigInvalid(f"observation at time {t} is malformed")
        self.bp = None
        self._approx = None

    def make_graph(self, theta):
        cfg = self.config
        theta = tuple(float(v) for v in np.atleast_1d(theta))

        def builder(x, theta=theta):
            return sir_kernel_rows(x, theta, cfg.delta, cfg.tau, cfg.radius)

        vertices = [(0, "root")]
        edges, kernels, observations = [], {}, {}
        space = ProductSpace(tuple(Finite(3) for _ in range(cfg.n)))
        next_leaf = cfg.steps + 1
        for t in range(1, cfg.steps + 1):
            vertices.append((t, "latent"))
            edges.append((t - 1, t))
            kernels[t] = DiscreteInteracting(cfg.n, 3, builder)
            if t in self.observations:
                vertices.append((next_leaf, "leaf"))
                edges.append((t, next_leaf))
                kernels[next_leaf] = Dirac(space)
                observations[next_leaf] = self.observations[t]
                next_leaf += 1
        return build_graph(vertices, edges, kernels, observations, self.observations[0])

    def refresh_backward(self, c: np.ndarray, theta):
        """Rebuild the frozen backward pass from the adapted S-row table."""
        cfg = self.config
        mats = ktilde_stack(c, theta, cfg.tau)
        self._approx = {
            t: IndependentParticles(mats[t - 1]) for t in range(1, cfg.steps + 1)
        }
        graph = self.make_graph(theta)
        self.bp = run_backward_pass(graph, approx_kernels=self._approx)
        return self.bp

    def rebuild(self, theta) -> ModelContext:
        return ModelContext(self.make_graph(theta), self.bp)


def grid_of_state(model: SirModel, state: ChainState) -> np.ndarray:
    cfg = model.config
    grid = np.zeros((cfg.steps + 1, cfg.n), dtype=int)
    grid[0] = model.observations[0]
    for t in range(1, cfg.steps + 1):
        grid[t] = (
            model.observations[t] if t in model.observations else state.sample.state[t]
        )
    return grid


@dataclass
class SirResult:
    config: SirConfig
    theta_trace: np.ndarray       # (iterations, 3)
    logpsi_trace: np.ndarray      # (iterations,)
    accept_latent: np.ndarray     # (iterations,) bool
    accept_theta: np.ndarray      # (iterations,) bool
    grid_initial: np.ndarray
    grid_mid: np.ndarray
    grid_final: np.ndarray

    @property
    def adapt_end(self) -> int:
        return int(self.config.mcmc.adapt_fraction * self.config.mcmc.iterations)

    def post_adaptation_rates(self):
        sl = slice(self.adapt_end, None)
        return (
            float(np.mean(self.accept_latent[sl])),
            float(np.mean(self.accept_theta[sl])),
        )

    def credible_interval(self, component: int, level: float = 0.9):
        sl = self.theta_trace[self.adapt_end :, component]
        lo = (1.0 - level) / 2.0
        return float(np.quantile(sl, lo)), float(np.quantile(sl, 1.0 - lo))


def run_mcmc(config: SirConfig, observations: dict, seed: Seed) -> SirResult:
    """Joint latent-path and parameter sampler on the observed system."""
    model = SirModel(config, observations)
    cfg = config.mcmc
    init_seed, chain_seed, theta_seed = seed.spawn(3)

    if config.theta0 is not None:
        theta = np.asarray(config.theta0, dtype=float)
    else:
        theta = theta_seed.generator().exponential(1.0 / config.prior_rate, size=3)
    prior = lambda th: float(-config.prior_rate * np.sum(th))

    c0 = adaptive_backward_kernels(
        fill_forward(model.observations, config.steps, config.n),
        np.full((config.steps, config.n), 1.0 - config.delta),
        0.0,
        theta[0],
        config.delta,
        config.tau,
        config.radius,
    )
    c = c0
    model.refresh_backward(c, theta)
    state = init_chain(model.rebuild(theta), init_seed, theta=theta, model=model)

    iters = cfg.iterations
    adapt_end = int(cfg.adapt_fraction * iters)
    theta_trace = np.empty((iters, 3))
    logpsi_trace = np.empty(iters)
    acc_l = np.zeros(iters, dtype=bool)
    acc_t = np.zeros(iters, dtype=bool)
    grid_initial = grid_of_state(model, state)
    grid_mid = grid_initial

    for it in range(iters):
        it_seed = chain_seed.child(it)
        if it < adapt_end:
            c = adaptive_backward_kernels(
                grid_of_state(model, state), c, cfg.mix,
                float(state.theta[0]), config.delta, config.tau, config.radius,
            )
            model.refresh_backward(c, state.theta)
            state = replace(
                state, context=ModelContext(state.context.graph, model.bp)
            ).recompute()
        state = pcn_step(state, cfg.pcn_alpha, it_seed.child(0))
        acc_l[it] = state.accepted
        state = mh_parameter_step(state, prior, np.asarray(cfg.rw_scales), it_seed.child(1))
        acc_t[it] = state.accepted
        theta_trace[it] = state.theta
        logpsi_trace[it] = state.logpsi
        if it == iters // 2:
            grid_mid = grid_of_state(model, state)

    return SirResult(
        config, theta_trace, logpsi_trace, acc_l, acc_t,
        grid_initial, grid_mid, grid_of_state(model, state),
    )


# --- artifact emission ----------------------------------------------------------

def grid_to_csv(grid: np.ndarray) -> str:
    lines = [",".join(LETTERS[v] if v >= 0 else "." for v in row) for row in grid]
    return "\n".join(lines) + "\n"


def observations_to_csv(observations: dict) -> str:
    lines = ["time,individual,state"]
    for t in sorted(observations):
        for i, v in enumerate(observations[t]):
            lines.append(f"{t},{i},{LETTERS[int(v)]}")
    return "\n".join(lines) + "\n"


def observations_from_csv(text: str) -> dict:
    rows = text.strip().split("\n")
    if rows[0].strip() != "time,individual,state":
        raise ConfigInvalid("observation CSV must start with 'time,individual,state'")
    cells = {}
    for line in rows[1:]:
        t_s, i_s, sym = line.strip().split(",")
        cells[(int(t_s), int(i_s))] = LETTERS.index(sym.strip().upper())
    times = sorted({t for t, _ in cells})
    n = max(i for _, i in cells) + 1
    out = {}
    for t in times:
        row = np.full(n, -1, dtype=int)
        for i in range(n):
            if (t, i) not in cells:
                raise ConfigInvalid(f"missing state for time {t}, individual {i}")
            row[i] = cells[(t, i)]
        out[t] = row
    return out


def write_ppm(path: str, grid: np.ndarray) -> None:
    """P6 binary heatmap, one pixel per (time, individual) cell."""
    h, w = grid.shape
    header = f"P6\n{w} {h}\n255\n".encode()
    body = bytearray()
    for row in grid:
        for v in row:
            body.extend(_COLORS[int(v)])
    with open(path, "wb") as fh:
        fh.write(header + bytes(body))


def maybe_write_png(path: str, grid: np.ndarray) -> bool:
    try:
        from PIL import Image
    except ImportError:
        return False
    h, w = grid.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    for v, color in _COLORS.items():
        img[grid == v] = color
    Image.fromarray(img, "RGB").save(path)
    return True


def observation_grid(observations: dict, steps: int, n: int) -> np.ndarray:
    grid = np.full((steps + 1, n), -1, dtype=int)
    for t, row in observations.items():
        grid[t] = row
    return grid


def run_experiment(config: SirConfig, observations: dict | None = None,
                   quiet: bool = False) -> dict:
    """Full pipeline: simulate or ingest data, run the sampler, emit artifacts.

    Returns a summary dictionary (also written to summary.json).
    """
    os.makedirs(config.output_dir, exist_ok=True)
    seed = Seed.from_int(config.seed)
    sim_seed, mcmc_seed = seed.split()

    true_grid = None
    if observations is None:
        true_grid = forward_simulate(config, sim_seed)
        observations = extract_observations(true_grid, config.obs_times)

    result = run_mcmc(config, observations, mcmc_seed)

    out = config.output_dir
    _write(out, "observations.csv", observations_to_csv(observations))
    obs_grid = observation_grid(observations, config.steps, config.n)
    _write(out, "obs_grid.csv", grid_to_csv(obs_grid))
    write_ppm(os.path.join(out, "obs_grid.ppm"), obs_grid)
    maybe_write_png(os.path.join(out, "obs_grid.png"), obs_grid)
    if true_grid is not None:
        _write(out, "true_grid.csv", grid_to_csv(true_grid))
        write_ppm(os.path.join(out, "true_grid.ppm"), true_grid)
        maybe_write_png(os.path.join(out, "true_grid.png"), true_grid)
    for name, grid in [
        ("grid_initial", result.grid_initial),
        ("grid_mid", result.grid_mid),
        ("grid_final", result.grid_final),
    ]:
        _write(out, f"{name}.csv", grid_to_csv(grid))
        write_ppm(os.path.join(out, f"{name}.ppm"), grid)
        maybe_write_png(os.path.join(out, f"{name}.png"), grid)

    iters = config.mcmc.iterations
    theta_rows = "\n".join(
        f"{it},{float(result.theta_trace[it, 0])!r},{float(result.theta_trace[it, 1])!r},"
        f"{float(result.theta_trace[it, 2])!r}"
        for it in range(iters)
    )
    _write(out, "theta_trace.csv", "iter,lambda,mu,nu\n" + theta_rows + "\n")
    logpsi_rows = "\n".join(
        f"{it},{float(result.logpsi_trace[it])!r},{int(result.accept_latent[it])},"
        f"{int(result.accept_theta[it])}"
        for it in range(iters)
    )
    _write(
        out,
        "logpsi_trace.csv",
        "iter,logpsi,accepted_latent,accepted_theta\n" + logpsi_rows + "\n",
    )

    rate_l, rate_t = result.post_adaptation_rates()
    summary = {
        "iterations": iters,
        "adapt_end": result.adapt_end,
        "acceptance_latent": rate_l,
        "acceptance_theta": rate_t,
        "posterior_intervals_90": {
            name: result.credible_interval(i)
            for i, name in enumerate(("lambda", "mu", "nu"))
        },
        "posterior_median": {
            name: float(np.median(result.theta_trace[result.adapt_end :, i]))
            for i, name in enumerate(("lambda", "mu", "nu"))
        },
    }
    _write(out, "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    if not quiet:
        print(
            f"acceptance (latent, theta) post adaptation: "
            f"{rate_l:.3f}, {rate_t:.3f}"
        )
        for name, (lo, hi) in summary["posterior_intervals_90"].items():
            print(f"90% interval {name}: [{lo:.3f}, {hi:.3f}]")
    return summary


def _write(out: str, name: str, text: str) -> None:
    with open(os.path.join(out, name), "w", newline="") as fh:
        fh.write(text)
