import math
import unittest

import numpy as np

from isac_detect.channel import (SPEED_OF_LIGHT, PathSet, SamplingGrid, Snapshot,
                                 add_noise, freq_atoms, ls_amplitudes, slow_time_gain,
                                 synthesize_channel, time_atoms)
from isac_detect.errors import (ConfigError, DataError, DegenerateSignalError,
                                RankDeficiencyError)
from isac_detect.preproc import clutter_filter
from isac_detect.scenario import ScenarioSpec, generate_snapshot


def naive_channel(grid, paths):
    f = grid.freq_points()[:, None, None]
    t = grid.time_points()[None, :, None]
    phase = -2j*np.pi*f*paths.taus() + 2j*np.pi*t*paths.alphas()
    return np.sum(paths.gammas() * np.exp(phase), axis=-1)


def random_paths(rng, grid, P):
    return PathSet.from_arrays(
        rng.uniform(0.1, 1, size=P) * np.exp(2j*np.pi*rng.uniform(size=P)),
        rng.uniform(0, 1, size=P) / grid.delta_f,
        rng.uniform(-0.5, 0.5, size=P) / grid.delta_t)


class TestSamplingGrid(unittest.TestCase):
    def test_measurement_constants(self):
        grid = SamplingGrid.measurement_grid()
        assert math.isclose(grid.bandwidth(), 80e6)
        assert math.isclose(grid.delay_resolution(), 12.5e-9, rel_tol=1e-12)
        assert math.isclose(grid.cpi(), 32e-3, rel_tol=1e-12)
        assert math.isclose(grid.doppler_bandwidth(), 3125., rel_tol=1e-12)
        assert math.isclose(grid.max_velocity(), SPEED_OF_LIGHT / (2*3.75e9*320e-6))
        assert abs(grid.max_velocity() - 124.91) < 0.01

    def test_centered_band(self):
        grid = SamplingGrid(64, 8, 1e6, 1e-3)
        assert grid.f_start == -32e6
        assert np.isclose(grid.freq_points().mean(), -0.5e6)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            SamplingGrid(0, 8, 1e6, 1e-3)
        with self.assertRaises(ConfigError):
            SamplingGrid(8, 8, -1., 1e-3)
        with self.assertRaises(ConfigError):
            SamplingGrid(8, 8, 1e6, math.inf)

    def test_dict(self):
        grid = SamplingGrid(64, 32, 1.25e6, 1e-3, t_start=0.5)
        assert SamplingGrid.from_dict(grid.to_dict()) == grid


class TestPathSet(unittest.TestCase):
    def test_clutter_split(self):
        paths = PathSet.from_arrays([1, 2j, 3], [1e-7, 2e-7, 3e-7], [0., 10., -0.])
        assert len(paths.clutter()) == 2
        assert len(paths.targets()) == 1
        assert paths.targets()[0].gamma == 2j

    def test_records(self):
        paths = PathSet.from_arrays([1+2j, -0.5j], [1e-7, 2e-7], [5., -7.])
        back = PathSet.from_records(paths.to_records())
        assert back == paths
        assert back.etas().shape == (2, 2)
        assert PathSet().etas().shape == (0, 2)


class TestForwardModel(unittest.TestCase):
    def test_matches_naive_sum(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            grid = SamplingGrid(int(rng.integers(1, 65)), int(rng.integers(1, 17)),
                                rng.uniform(1e4, 1e6), rng.uniform(1e-5, 1e-3))
            paths = random_paths(rng, grid, int(rng.integers(1, 9)))
            h = synthesize_channel(grid, paths)
            h_naive = naive_channel(grid, paths)
            assert np.linalg.norm(h - h_naive) <= 1e-12 * np.linalg.norm(h_naive)

    def test_empty_is_zero(self):
        grid = SamplingGrid(16, 4, 1e6, 1e-3)
        assert np.array_equal(synthesize_channel(grid, PathSet()), np.zeros((16, 4)))

    def test_nonfinite(self):
        grid = SamplingGrid(16, 4, 1e6, 1e-3)
        with self.assertRaises(DataError):
            synthesize_channel(grid, PathSet.from_arrays([1.], [math.nan], [0.]))

    def test_unit_path_at_origin(self):
        grid = SamplingGrid(8, 4, 1e6, 1e-3, f_start=0.)
        h = synthesize_channel(grid, PathSet.from_arrays([1.], [0.], [0.]))
        assert np.allclose(h, 1.)


class TestNoise(unittest.TestCase):
    def test_snr(self):
        rng = np.random.default_rng(1)
        h = rng.standard_normal((256, 128)) + 1j*rng.standard_normal((256, 128))
        y, sigma2 = add_noise(h, 10., rng)
        assert math.isclose(sigma2, np.mean(np.abs(h)**2) / 10)
        noise = y - h
        assert abs(np.mean(np.abs(noise)**2) / sigma2 - 1) < 0.02
        assert abs(np.var(noise.real) / np.var(noise.imag) - 1) < 0.05

    def test_noiseless(self):
        h = np.ones((4, 4), dtype=np.complex128)
        y, sigma2 = add_noise(h, math.inf, np.random.default_rng(0))
        assert sigma2 == 0.
        assert np.array_equal(y, h)
        assert y is not h

    def test_errors(self):
        rng = np.random.default_rng(0)
        with self.assertRaises(DegenerateSignalError):
            add_noise(np.zeros((4, 4)), 10., rng)
        with self.assertRaises(DataError):
            add_noise(np.ones((4, 4)), -math.inf, rng)
        with self.assertRaises(DataError):
            add_noise(np.ones((4, 4)), math.nan, rng)

    def test_reconstruct(self):
        spec = ScenarioSpec(SamplingGrid(32, 16, 1e6, 1e-3))
        snapshot = generate_snapshot(spec, 7, 3)
        assert np.array_equal(snapshot.reconstruct(), snapshot.y)
        with self.assertRaises(DataError):
            Snapshot(spec.grid, snapshot.y).reconstruct()

    def test_shape_mismatch(self):
        with self.assertRaises(DataError):
            Snapshot(SamplingGrid(32, 16, 1e6, 1e-3), np.zeros((16, 32)))


class TestLeastSquares(unittest.TestCase):
    def test_noiseless_recovery(self):
        rng = np.random.default_rng(2)
        grid = SamplingGrid(32, 16, 1e6, 1e-3)
        for _ in range(50):
            K = int(rng.integers(1, 6))
            # distinct delay bins keep the atoms well separated
            tau_bins = rng.permutation(30)[:K] + rng.uniform(-0.2, 0.2, size=K) + 1
            gammas = rng.standard_normal(K) + 1j*rng.standard_normal(K)
            paths = PathSet.from_arrays(gammas, tau_bins / grid.bandwidth(),
                                        rng.uniform(-0.4, 0.4, size=K) / grid.delta_t)
            y = synthesize_channel(grid, paths)
            est = ls_amplitudes(y, grid, paths.etas())
            assert np.allclose(est, gammas, rtol=0, atol=1e-8)

    def test_duplicate_atoms(self):
        grid = SamplingGrid(32, 16, 1e6, 1e-3)
        etas = np.array([[1e-7, 10.], [3e-7, -20.], [1e-7, 10.]])
        y = np.ones(grid.shape, dtype=np.complex128)
        with self.assertRaises(RankDeficiencyError) as ctx:
            ls_amplitudes(y, grid, etas)
        assert ctx.exception.pair == (0, 2)

    def test_invalid(self):
        grid = SamplingGrid(8, 4, 1e6, 1e-3)
        y = np.ones(grid.shape)
        with self.assertRaises(ConfigError):
            ls_amplitudes(y, grid, np.zeros((0, 2)))
        with self.assertRaises(DataError):
            ls_amplitudes(np.ones((4, 8)), grid, [[0., 0.]])
        with self.assertRaises(DataError):
            ls_amplitudes(y, grid, [[math.inf, 0.]])

    def test_single_atom_closed_form(self):
        rng = np.random.default_rng(3)
        grid = SamplingGrid(32, 16, 1e6, 1e-3)
        for _ in range(20):
            y = rng.standard_normal(grid.shape) + 1j*rng.standard_normal(grid.shape)
            eta = (rng.uniform(0, 1) / grid.delta_f, rng.uniform(-0.5, 0.5) / grid.delta_t)
            atom = np.outer(freq_atoms(grid, eta[0])[:, 0], time_atoms(grid, eta[1])[:, 0])
            expected = np.vdot(atom, y) / (grid.n_freq * grid.n_time)
            assert np.isclose(ls_amplitudes(y, grid, [eta])[0], expected, rtol=1e-12, atol=0)

    def test_filtered_recovery(self):
        rng = np.random.default_rng(4)
        grid = SamplingGrid(32, 16, 1e6, 1e-3)
        static = PathSet.from_arrays([2., -1j], [3e-7, 7e-6], [0., 0.])
        for _ in range(30):
            K = int(rng.integers(1, 5))
            tau_bins = rng.permutation(30)[:K] + rng.uniform(-0.2, 0.2, size=K) + 1
            alpha_bins = rng.choice([-1, 1], size=K) * rng.uniform(0.1, 0.4, size=K)
            gammas = rng.standard_normal(K) + 1j*rng.standard_normal(K)
            paths = PathSet.from_arrays(gammas, tau_bins / grid.bandwidth(),
                                        alpha_bins / grid.delta_t)
            y = clutter_filter(synthesize_channel(grid, paths + static))
            est = ls_amplitudes(y, grid, paths.etas(), clutter_filter=True)
            assert np.allclose(est, gammas, rtol=0, atol=1e-8)

    def test_filtered_static_atom(self):
        grid = SamplingGrid(32, 16, 1e6, 1e-3)
        etas = np.array([[1e-7, 20.], [2e-7, 0.], [3e-7, 0.]])
        y = np.ones(grid.shape, dtype=np.complex128)
        with self.assertRaises(RankDeficiencyError) as ctx:
            ls_amplitudes(y, grid, etas, clutter_filter=True)
        assert ctx.exception.pair == (1, 1)


class TestSlowTimeGain(unittest.TestCase):
    def test_values(self):
        grid = SamplingGrid(32, 16, 1e6, 1e-3)
        assert slow_time_gain(grid, 0.) == 0.
        cycles = np.array([1, 2, -3, 7]) / grid.cpi()
        assert np.allclose(slow_time_gain(grid, cycles), 1., rtol=0, atol=1e-12)

    def test_matches_filtered_norm(self):
        rng = np.random.default_rng(5)
        grid = SamplingGrid(32, 16, 1e6, 1e-3, t_start=0.3)
        alphas = rng.uniform(-0.5, 0.5, size=50) / grid.delta_t
        norms = np.sum(np.abs(time_atoms(grid, alphas, clutter_filter=True))**2, axis=0)
        assert np.allclose(slow_time_gain(grid, alphas), norms / grid.n_time,
                           rtol=1e-10, atol=1e-14)


class TestLinearity(unittest.TestCase):
    def test_superposition(self):
        rng = np.random.default_rng(6)
        grid = SamplingGrid(32, 16, 1e6, 1e-3)
        for _ in range(20):
            a = random_paths(rng, grid, int(rng.integers(1, 6)))
            b = random_paths(rng, grid, int(rng.integers(1, 6)))
            h = synthesize_channel(grid, a + b)
            assert np.allclose(h, synthesize_channel(grid, a) + synthesize_channel(grid, b),
                               rtol=0, atol=1e-12)

    def test_permutation(self):
        rng = np.random.default_rng(7)
        grid = SamplingGrid(32, 16, 1e6, 1e-3)
        for _ in range(20):
            paths = random_paths(rng, grid, 6)
            order = rng.permutation(6)
            shuffled = PathSet.from_arrays(paths.gammas()[order], paths.taus()[order],
                                           paths.alphas()[order])
            assert np.allclose(synthesize_channel(grid, shuffled),
                               synthesize_channel(grid, paths), rtol=0, atol=1e-12)

    def test_gain_scaling(self):
        rng = np.random.default_rng(8)
        grid = SamplingGrid(32, 16, 1e6, 1e-3)
        paths = random_paths(rng, grid, 4)
        h = synthesize_channel(grid, paths)
        for c in (2., 0.5, -1., 3*np.exp(0.4j)):
            scaled = synthesize_channel(grid, PathSet.from_arrays(
                c*paths.gammas(), paths.taus(), paths.alphas()))
            if c in (2., 0.5, -1.):
                assert np.array_equal(scaled, c*h)
            assert math.isclose(np.sum(np.abs(scaled)**2), abs(c)**2 * np.sum(np.abs(h)**2),
                                rel_tol=1e-13)
