import numpy as np
import pytest

from guidedgraph import DiscreteParticlesH, DiscreteVec
from guidedgraph.discrete import (
    ParticleSystemKernel,
    forward_draw,
    forward_measure,
    leaf_init,
    leaf_init_noisy,
    marginalise_factors,
    marginalise_pair,
    particle_backward_pass,
    particles_forward_draw,
    particles_pullback,
    pullback,
)
from guidedgraph.errors import DimMismatch, ZeroDenominator, ZeroHVector
from guidedgraph.kernels import DiscreteInteracting


class TestPullback:
    def test_identity_leaves_h_unchanged(self):
        h = DiscreteVec([0.2, 0.5, 0.3])
        out = pullback(np.eye(3), h)
        np.testing.assert_allclose(out.vec, h.vec)
        np.testing.assert_allclose(out.logc, h.logc)

    def test_uniform_matrix_averages(self):
        h = DiscreteVec([0.1, 0.2, 0.7])
        out = pullback(np.full((3, 3), 1.0 / 3.0), h)
        for k in range(3):
            np.testing.assert_allclose(out.log_at(k), np.log(1.0 / 3.0), rtol=1e-12)

    def test_random_matrix_matches_direct_sum(self, rng):
        K = rng.dirichlet(np.ones(3), size=3)
        raw = rng.uniform(0.1, 2.0, size=3)
        h = DiscreteVec(raw)
        out = pullback(K, h)
        for x in range(3):
            direct = sum(K[x, y] * raw[y] for y in range(3))
            np.testing.assert_allclose(np.exp(out.log_at(x)), direct, rtol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            pullback(np.eye(2), DiscreteVec([0.3, 0.3, 0.4]))


class TestLeafInit:
    def test_point_mass(self):
        np.testing.assert_allclose(leaf_init(0, 3).vec, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(leaf_init(1, 2).vec, [0.0, 1.0])

    def test_noisy_leaf_is_emission_column(self, rng):
        E = rng.dirichlet(np.ones(4), size=3)  # 3 states, 4 symbols
        h = leaf_init_noisy(E, 2)
        for x in range(3):
            np.testing.assert_allclose(np.exp(h.log_at(x)), E[x, 2], rtol=1e-12)

    def test_out_of_range(self):
        with pytest.raises(DimMismatch):
            leaf_init(3, 3)


class TestForwardDraw:
    def test_zero_increment_when_matched(self, rng):
        K = rng.dirichlet(np.ones(3), size=3)
        h = DiscreteVec(rng.uniform(0.1, 1.0, size=3))
        denom = pullback(K, h)
        inc, _ = forward_draw(h, denom, 1, K, 0.37)
        assert abs(inc) < 1e-13

    def test_point_mass_h_forces_state(self, rng):
        K = rng.dirichlet(np.ones(3), size=3)
        h = leaf_init(2, 3)
        denom = pullback(K, h)
        for u in [0.05, 0.5, 0.95]:
            _, k = forward_draw(h, denom, 0, K, u)
            assert k == 2

    def test_law_matches_enumeration(self, rng):
        # empirical guided law vs normalised K[x, .] * h
        K = rng.dirichlet(np.ones(3), size=3)
        h = DiscreteVec(rng.uniform(0.1, 1.0, size=3))
        Kt = rng.dirichlet(np.ones(3), size=3)
        denom = pullback(Kt, h)
        x = 1
        want = K[x] * h.vec
        want = want / want.sum()
        us = rng.random(40_000)
        counts = np.zeros(3)
        for u in us:
            _, k = forward_draw(h, denom, x, K, u)
            counts[k] += 1
        freq = counts / counts.sum()
        np.testing.assert_allclose(freq, want, atol=4 * np.sqrt(0.25 / len(us)))

    def test_zero_denominator(self):
        K = np.array([[1.0, 0.0], [0.0, 1.0]])
        h = leaf_init(1, 2)
        denom = pullback(K, h)
        with pytest.raises(ZeroDenominator):
            forward_draw(h, denom, 0, K, 0.5)

    def test_measure_forward_preserves_mass_when_exact(self, rng):
        K = rng.dirichlet(np.ones(4), size=4)
        h = DiscreteVec(rng.uniform(0.1, 1.0, size=4))
        denom = pullback(K, h)
        mu = rng.dirichlet(np.ones(4))
        nu = forward_measure(K, h, denom, mu)
        np.testing.assert_allclose(nu.sum(), 1.0, atol=1e-12)

    def test_measure_forward_matches_hand_enumeration(self, rng):
        K = rng.dirichlet(np.ones(3), size=3)
        Kt = rng.dirichlet(np.ones(3), size=3)
        raw = rng.uniform(0.1, 1.0, size=3)
        h = DiscreteVec(raw)
        denom = pullback(Kt, h)
        mu = rng.dirichlet(np.ones(3))
        nu = forward_measure(K, h, denom, mu)
        want = np.zeros(3)
        for x in range(3):
            for k in range(3):
                m = raw[k] / (Kt[x] @ raw)
                want[k] += mu[x] * m * K[x, k]
        np.testing.assert_allclose(nu, want, rtol=1e-12)


class TestMarginalisePair:
    def test_product_table_recovers_factors(self):
        a, b = np.array([0.2, 0.8]), np.array([0.1, 0.4, 0.5])
        rows, cols = marginalise_pair(np.outer(a, b))
        np.testing.assert_allclose(np.outer(rows, cols), np.outer(a, b), rtol=1e-12)

    def test_hand_arithmetic(self):
        rows, cols = marginalise_pair(np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_allclose(rows, np.array([3.0, 7.0]) / np.sqrt(10.0))
        np.testing.assert_allclose(cols, np.array([4.0, 6.0]) / np.sqrt(10.0))

    def test_all_ones_table(self):
        rows, cols = marginalise_pair(np.ones((2, 2)))
        np.testing.assert_allclose(rows, [1.0, 1.0])
        np.testing.assert_allclose(cols, [1.0, 1.0])

    def test_factor_masses_multiply_back(self, rng):
        table = rng.uniform(0.1, 1.0, size=(3, 4))
        rows, cols = marginalise_pair(table)
        np.testing.assert_allclose(rows.sum() * cols.sum(), table.sum(), rtol=1e-12)

    def test_vec_form_matches_pair_form(self, rng):
        table = rng.uniform(0.1, 1.0, size=(2, 3))
        h = DiscreteVec(table.reshape(-1))
        parts = marginalise_factors(h, [2, 3])
        rows, cols = marginalise_pair(table)
        np.testing.assert_allclose(np.exp([parts[0].log_at(i) for i in range(2)]), rows, rtol=1e-12)
        np.testing.assert_allclose(np.exp([parts[1].log_at(j) for j in range(3)]), cols, rtol=1e-12)


class TestParticleSystem:
    def _system(self, rng, n=2, R=2, steps=2):
        base = rng.dirichlet(np.ones(R), size=(n, R))

        def build_all(x):
            # infection-style coupling: particle i's matrix tilts with the
            # number of neighbours in state 1
            mats = np.empty((n, R, R))
            load = (np.asarray(x) == 1).sum()
            for i in range(n):
                m = base[i] + 0.1 * load
                mats[i] = m / m.sum(axis=1, keepdims=True)
            return mats

        fwd = DiscreteInteracting(n, R, build_all)
        ktilde = np.stack([rng.dirichlet(np.ones(R), size=(n, R)) for _ in range(steps)])
        return ParticleSystemKernel(fwd, ktilde)

    def test_single_particle_reduces_to_chain_rule(self, rng):
        K = rng.dirichlet(np.ones(3), size=3)
        sys1 = ParticleSystemKernel(
            DiscreteInteracting(1, 3, lambda x: K[None]), K[None, None]
        )
        res = particle_backward_pass(sys1, {1: np.array([2])})
        chain_h = pullback(K, leaf_init(2, 3))
        np.testing.assert_allclose(res.denom_at(0).vecs[0], chain_h.vec, rtol=1e-12)

    def test_weight_formula_is_product_over_particles(self, rng):
        sys2 = self._system(rng)
        res = particle_backward_pass(sys2, {2: np.array([1, 0])})
        x = np.array([0, 1])
        mats = sys2.forward.matrices(x)
        h1 = res.h_at(1)
        d0 = res.denom_at(0)
        inc, _ = particles_forward_draw(h1, d0, x, mats, np.array([0.3, 0.7]))
        want = 0.0
        for i in range(2):
            num = mats[i, x[i]] @ (np.exp(h1.logc[i]) * h1.vecs[i])
            den = np.exp(d0.logc[i]) * d0.vecs[i, x[i]]
            want += np.log(num) - np.log(den)
        np.testing.assert_allclose(inc, want, rtol=1e-10)

    def test_guided_hits_observations(self, rng):
        sys2 = self._system(rng, steps=3)
        obs = {3: np.array([1, 1])}
        res = particle_backward_pass(sys2, obs)
        x = np.array([0, 0])
        for t in range(3):
            mats = sys2.forward.matrices(x)
            _, x = particles_forward_draw(
                res.h_at(t + 1), res.denom_at(t), x, mats, rng.random(2)
            )
        np.testing.assert_array_equal(x, obs[3])

    def test_pullback_vectorises_per_particle(self, rng):
        mats = rng.dirichlet(np.ones(2), size=(3, 2))
        h = DiscreteParticlesH(rng.uniform(0.1, 1.0, size=(3, 2)))
        out = particles_pullback(mats, h)
        for i in range(3):
            single = pullback(mats[i], DiscreteVec(h.vecs[i], h.logc[i]))
            np.testing.assert_allclose(out.vecs[i], single.vec, rtol=1e-12)
