import math

import numpy as np
import pytest

from tipi.errors import ContractError, PlantInstabilityError
from tipi.plants import (ChainPlant, LoopPlant, OscillatorPlant, chain_step, loop_step,
                         oscillator_step)


class TestLoopPlant:
    def test_noise_free_pass_through(self):
        np.testing.assert_array_equal(loop_step(LoopPlant(lam=0.0), [0.5]), [0.5])

    def test_noise_statistics(self):
        p = LoopPlant(lam=0.1, seed=4)
        N = 100_000
        s = np.array([loop_step(p, [0.0])[0] for _ in range(N)])
        assert abs(s.mean()) < 3 * 0.1 / math.sqrt(N)
        assert abs(s.std() / 0.1 - 1) < 0.02

    def test_bistable_loop_keeps_sign(self):
        p = LoopPlant(lam=0.01, seed=0)
        s = np.array([0.5])
        signs = []
        for _ in range(20_000):
            s = loop_step(p, np.tanh(1.1 * s))
            signs.append(np.sign(s[0]))
        assert all(x == 1 for x in signs)

    def test_same_draws_regardless_of_amplitude(self):
        a, b = LoopPlant(lam=0.0, seed=3), LoopPlant(lam=0.2, seed=3)
        loop_step(a, [0.0]); loop_step(b, [0.0])
        np.testing.assert_array_equal(a.rng.standard_normal(2), b.rng.standard_normal(2))

    def test_negative_noise(self):
        with pytest.raises(ContractError):
            LoopPlant(lam=-0.1)


class TestChainPlant:
    def test_rest_pose_stays_put(self):
        p = ChainPlant(N=5, init_spread=0.0)
        for _ in range(200):
            chain_step(p, np.zeros(4))
        assert abs(p.displacement()) < 1e-9

    def test_traveling_wave_moves_forward(self):
        p = ChainPlant(N=6, seed=2)
        w, phase = 2 * math.pi / 100, 0.9
        for t in range(10_000):
            chain_step(p, np.sin(w * t - phase * np.arange(5)))
        assert p.displacement() > 1.0

    def test_constant_action_comes_to_rest(self):
        p = ChainPlant(N=6, seed=5)
        a = np.array([0.8, -0.5, 0.3, 1.0, -1.0])
        for _ in range(500):
            chain_step(p, a)
        x0 = p.com()
        for _ in range(500):
            chain_step(p, a)
        assert abs(p.com() - x0) < 1e-9

    def test_frictionless_momentum_is_conserved(self):
        p = ChainPlant(N=4, mu_forward=0.0, mu_backward=0.0, seed=1, audit=True)
        p0 = p.momentum()
        rng = np.random.default_rng(0)
        for _ in range(300):
            chain_step(p, rng.uniform(-1, 1, 3))
        assert abs(p.momentum() - p0) < 1e-9

    def test_momentum_audit_with_friction_and_slope(self):
        p = ChainPlant(N=4, slope=0.1, drag=5.0, seed=1, audit=True)
        rng = np.random.default_rng(1)
        for _ in range(300):
            chain_step(p, rng.uniform(-1, 1, 3))
        assert p.last_audit_error < 1e-9

    def test_observation_range(self):
        p = ChainPlant(N=4, seed=3)
        for t in range(100):
            s = chain_step(p, np.ones(3) * math.sin(t / 5))
            assert s.shape == (3,) and np.all(np.abs(s) <= 1)

    def test_unstable_step_rejected(self):
        with pytest.raises(PlantInstabilityError):
            ChainPlant(N=4, dt=0.5)

    def test_contracts(self):
        with pytest.raises(ContractError):
            ChainPlant(N=1)
        with pytest.raises(ContractError):
            ChainPlant(mu_forward=0.5, mu_backward=0.1)
        with pytest.raises(ContractError):
            ChainPlant(N=3, mu_forward_per_mass=[0.1])
        with pytest.raises(ContractError):
            chain_step(ChainPlant(N=3), np.zeros(4))

    def test_initial_perturbation_is_seeded(self):
        a = ChainPlant(N=5, seed=1, init_perturbation=0.05, perturbation_seed=7)
        b = ChainPlant(N=5, seed=1, init_perturbation=0.05, perturbation_seed=7)
        c = ChainPlant(N=5, seed=1)
        np.testing.assert_array_equal(a.lengths(), b.lengths())
        assert 0 < np.abs(a.lengths() - c.lengths()).max() <= 0.05 * a.amp + 1e-12


class TestOscillator:
    def test_free_decay_rate(self):
        w0, z, dt = 1.3, 0.08, 0.1
        p = OscillatorPlant(omega0=w0, zeta=z, dt=dt, x0=1.0)
        wd = w0 * math.sqrt(1 - z * z)

        def amp(state):
            x, v = state
            return math.hypot(x, (v + z * w0 * x) / wd)
        prev = amp(p.state)
        for _ in range(50):
            oscillator_step(p, [0.0])
            cur = amp(p.state)
            assert cur / prev == pytest.approx(math.exp(-z * w0 * dt), rel=1e-10)
            prev = cur

    def test_resonance_at_natural_frequency(self):
        freqs = [0.5, 0.8, 0.95, 1.0, 1.05, 1.2, 2.0]
        amps = []
        for w in freqs:
            p = OscillatorPlant(omega0=1.0, zeta=0.05, dt=0.05)
            xs = []
            for t in range(12_000):
                xs.append(oscillator_step(p, [math.sin(w * t * 0.05)])[0])
            amps.append(np.abs(xs[-3000:]).max())
        assert freqs[int(np.argmax(amps))] == 1.0

    def test_noise_variance_scales_quadratically(self):
        v = []
        for lam in (0.01, 0.02):
            p = OscillatorPlant(lam=lam, seed=11)
            v.append(np.var([oscillator_step(p, [0.0])[0] for _ in range(2000)]))
        assert v[1] / v[0] == pytest.approx(4.0, rel=1e-9)

    def test_contracts(self):
        with pytest.raises(ContractError):
            OscillatorPlant(omega0=0.0)
