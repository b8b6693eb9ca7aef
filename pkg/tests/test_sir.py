import numpy as np
import pytest

from guidedgraph import Seed
from guidedgraph.discrete import ParticleSystemKernel, particle_backward_pass
from guidedgraph.errors import ConfigInvalid
from guidedgraph.inference import init_chain, pcn_step
from guidedgraph.kernels import DiscreteInteracting
from guidedgraph.sir import (
    I,
    R,
    S,
    McmcConfig,
    SirConfig,
    SirModel,
    adaptive_backward_kernels,
    extract_observations,
    forward_simulate,
    grid_of_state,
    infected_neighbour_counts,
    ktilde_stack,
    observations_from_csv,
    observations_to_csv,
    run_mcmc,
    sir_forward_kernel,
    sir_kernel_rows,
)


def quick_config(**over):
    base = dict(
        n=8,
        tau=0.1,
        steps_between_obs=3,
        num_obs=3,
        theta=(2.5, 0.6, 0.1),
        delta=0.001,
        mcmc=McmcConfig(iterations=60, pcn_alpha=0.9),
        theta0=(1.0, 1.0, 1.0),
        seed=11,
    )
    base.update(over)
    return SirConfig(**base)


class TestForwardKernel:
    def test_no_infected_neighbours_without_regularisation(self):
        x = np.zeros(5, dtype=int)
        row = sir_forward_kernel(x, 2, (2.5, 0.6, 0.1), 0.0, 0.1)[S]
        np.testing.assert_allclose(row, [1.0, 0.0, 0.0])

    def test_regularisation_gives_spontaneous_infection(self):
        x = np.zeros(5, dtype=int)
        row = sir_forward_kernel(x, 2, (2.5, 0.6, 0.1), 0.001, 0.1)[S]
        np.testing.assert_allclose(row[I], 0.001, rtol=1e-12)

    def test_recovery_probability(self):
        x = np.zeros(5, dtype=int)
        K = sir_forward_kernel(x, 0, (2.5, 0.6, 0.1), 0.001, 0.1)
        np.testing.assert_allclose(K[I, R], 1.0 - np.exp(-0.06), rtol=1e-12)
        np.testing.assert_allclose(K[R, S], 1.0 - np.exp(-0.01), rtol=1e-12)

    def test_rows_stochastic(self, rng):
        x = rng.integers(0, 3, size=12)
        mats = sir_kernel_rows(x, (2.5, 0.6, 0.1), 0.001, 0.1, 2)
        np.testing.assert_allclose(mats.sum(axis=2), 1.0, atol=1e-12)

    def test_neighbour_counts_truncate_at_boundary(self):
        x = np.array([I, I, S, I, I])
        counts = infected_neighbour_counts(x, 2)
        # individual 0 sees only positions 1 and 2 to the right
        assert counts[0] == 1.0
        assert counts[2] == 4.0


class TestForwardSimulate:
    def test_all_susceptible_stays_susceptible_without_delta(self):
        # dynamics under delta = 0: the all-S configuration is absorbing
        x = np.zeros(10, dtype=int)
        rng = Seed.from_int(1).generator()
        for _ in range(30):
            mats = sir_kernel_rows(x, (2.5, 0.6, 0.1), 0.0, 0.1, 2)
            rows = mats[np.arange(10), x]
            u = rng.random(10)
            x = np.minimum((np.cumsum(rows, axis=1) < u[:, None]).sum(axis=1), 2)
        assert np.all(x == S)

    def test_infection_front_moves_right_in_expectation(self):
        cfg = SirConfig(
            n=30, tau=0.1, steps_between_obs=9, num_obs=3,
            theta=(3.0, 0.3, 0.05), delta=0.001, initial_infected=4,
        )
        fronts = np.zeros(cfg.steps + 1)
        for rep, s in enumerate(Seed.from_int(2).spawn(100)):
            grid = forward_simulate(cfg, s)
            for t in range(cfg.steps + 1):
                infected = np.where(grid[t] == I)[0]
                fronts[t] += infected.max() if len(infected) else 0.0
        fronts /= 100.0
        # smoothed over blocks to wash out per-step noise
        blocks = fronts[: 5 * (len(fronts) // 5)].reshape(-1, 5).mean(axis=1)
        assert np.all(np.diff(blocks) > -0.25)

    def test_paper_scale_layout(self):
        cfg = SirConfig(n=100, tau=0.1, steps_between_obs=48, num_obs=20)
        assert cfg.steps == 19 * 49
        assert cfg.obs_times[:3] == (0, 49, 98)
        grid = np.zeros((cfg.steps + 1, cfg.n), dtype=int)
        grid[0, : cfg.initial_infected] = I
        assert (grid[0] == I).sum() == 7


class TestAdaptiveKernels:
    def test_mix_one_keeps_old_values(self, rng):
        grid = rng.integers(0, 3, size=(5, 6))
        c_old = rng.uniform(0.2, 0.9, size=(4, 6))
        c = adaptive_backward_kernels(grid, c_old, 1.0, 2.5, 0.001, 0.1, 2)
        np.testing.assert_allclose(c, c_old)

    def test_mix_zero_uses_fresh_values(self, rng):
        grid = rng.integers(0, 3, size=(5, 6))
        c_old = rng.uniform(0.2, 0.9, size=(4, 6))
        c = adaptive_backward_kernels(grid, c_old, 0.0, 2.5, 0.001, 0.1, 2)
        for t in range(4):
            counts = infected_neighbour_counts(grid[t], 2)
            want = (1.0 - 0.001) * np.exp(-0.1 * 2.5 * counts)
            np.testing.assert_allclose(c[t], want, rtol=1e-12)

    def test_rows_remain_stochastic(self, rng):
        c = rng.uniform(0.1, 0.99, size=(4, 6))
        mats = ktilde_stack(c, (2.5, 0.6, 0.1), 0.1)
        np.testing.assert_allclose(mats.sum(axis=3), 1.0, atol=1e-12)


class TestModelAndChain:
    def test_guided_sample_agrees_with_observations(self):
        cfg = quick_config()
        seed = Seed.from_int(3)
        grid = forward_simulate(cfg, seed.child(0))
        obs = extract_observations(grid, cfg.obs_times)
        model = SirModel(cfg, obs)
        c = np.full((cfg.steps, cfg.n), 0.9)
        model.refresh_backward(c, cfg.theta0)
        state = init_chain(model.rebuild(cfg.theta0), seed.child(1))
        for t in cfg.obs_times[1:]:
            np.testing.assert_array_equal(state.sample.state[t], obs[t])

    def test_fully_observed_grid_has_constant_logpsi(self):
        cfg = quick_config(steps_between_obs=0, num_obs=5)
        seed = Seed.from_int(4)
        grid = forward_simulate(cfg, seed.child(0))
        obs = extract_observations(grid, cfg.obs_times)
        model = SirModel(cfg, obs)
        model.refresh_backward(np.full((cfg.steps, cfg.n), 0.9), cfg.theta0)
        state = init_chain(model.rebuild(cfg.theta0), seed.child(1))
        vals = set()
        for s in seed.child(2).spawn(20):
            state = pcn_step(state, 0.9, s)
            vals.add(state.logpsi)
        assert len(vals) == 1

    def test_backward_pass_matches_diagonalised_filter(self):
        # the engine's line-graph-of-configurations backward pass equals the
        # per-particle diagonalised recursion
        cfg = quick_config()
        seed = Seed.from_int(5)
        grid = forward_simulate(cfg, seed.child(0))
        obs = extract_observations(grid, cfg.obs_times)
        model = SirModel(cfg, obs)
        c = np.full((cfg.steps, cfg.n), 0.85)
        bp = model.refresh_backward(c, cfg.theta0)

        def builder(x):
            return sir_kernel_rows(x, cfg.theta0, cfg.delta, cfg.tau, cfg.radius)

        system = ParticleSystemKernel(
            DiscreteInteracting(cfg.n, 3, builder),
            ktilde_stack(c, cfg.theta0, cfg.tau),
        )
        res = particle_backward_pass(
            system, {t: v for t, v in obs.items() if t > 0}
        )
        for t in range(1, cfg.steps + 1):
            num = bp.messages[t].numerator
            np.testing.assert_allclose(num.vecs, res.h_at(t).vecs, rtol=1e-10)
            den = bp.messages[t].denominator
            np.testing.assert_allclose(den.vecs, res.denom_at(t - 1).vecs, rtol=1e-10)

    def test_unobserved_time_zero_rejected(self):
        cfg = quick_config()
        with pytest.raises(ConfigInvalid):
            SirModel(cfg, {4: np.zeros(cfg.n, dtype=int)})


class TestRunMcmc:
    def test_short_run_produces_consistent_traces(self):
        cfg = quick_config()
        seed = Seed.from_int(6)
        grid = forward_simulate(cfg, seed.child(0))
        obs = extract_observations(grid, cfg.obs_times)
        res = run_mcmc(cfg, obs, seed.child(1))
        assert res.theta_trace.shape == (60, 3)
        assert np.all(res.theta_trace > 0)
        assert np.all(np.isfinite(res.logpsi_trace))
        # grids agree with observations at observed times
        for t in cfg.obs_times:
            np.testing.assert_array_equal(res.grid_final[t], obs[t])

    def test_deterministic_given_seed(self):
        cfg = quick_config()
        seed = Seed.from_int(7)
        grid = forward_simulate(cfg, seed.child(0))
        obs = extract_observations(grid, cfg.obs_times)
        a = run_mcmc(cfg, obs, seed.child(1))
        b = run_mcmc(cfg, obs, seed.child(1))
        np.testing.assert_array_equal(a.theta_trace, b.theta_trace)
        np.testing.assert_array_equal(a.logpsi_trace, b.logpsi_trace)
        np.testing.assert_array_equal(a.grid_final, b.grid_final)


class TestObservationCsv:
    def test_round_trip(self, rng):
        obs = {0: rng.integers(0, 3, size=6), 8: rng.integers(0, 3, size=6)}
        text = observations_to_csv(obs)
        back = observations_from_csv(text)
        for t in obs:
            np.testing.assert_array_equal(back[t], obs[t])

    def test_header_required(self):
        with pytest.raises(ConfigInvalid):
            observations_from_csv("t,i,s\n0,0,S\n")
