import unittest

import numpy as np

from isac_detect.channel import SPEED_OF_LIGHT, SamplingGrid
from isac_detect.data import (RX_POSITIONS, TRACK_NAMES, ReplicaConfig, clutter_points,
                              simulate_link)
from isac_detect.errors import ConfigError

GRID = SamplingGrid(n_freq=256, n_time=100, delta_f=312.5e3, delta_t=320e-6)
CFG = ReplicaConfig(grid=GRID, n_snapshots=6, n_clutter=10)


class TestReplicaConfig(unittest.TestCase):
    def test_gate(self):
        tau_max, alpha_max = CFG.gate()
        assert np.isclose(tau_max, 1.5e-6*312.5e3)
        assert np.isclose(alpha_max, 400*320e-6)
        with self.assertRaises(ConfigError):
            ReplicaConfig(grid=GRID, max_delay=1e-5)
        with self.assertRaises(ConfigError):
            ReplicaConfig(grid=GRID, max_doppler=2000.)

    def test_invalid(self):
        for kwargs in [dict(n_snapshots=0), dict(snapshot_spacing=0.), dict(n_clutter=-1),
                       dict(snr_db=np.inf), dict(clutter_magnitude=(0.5, 0.2)),
                       dict(target_magnitude=0.), dict(uav_speed=-1.), dict(uav_radius=0.)]:
            with self.assertRaises(ConfigError):
                ReplicaConfig(grid=GRID, **kwargs)

    def test_dict(self):
        assert ReplicaConfig.from_dict(CFG.to_dict()) == CFG
        assert np.isclose(CFG.duration(), 5*0.2 + GRID.cpi())


class TestSimulateLink(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.link = simulate_link(CFG, 3, 1)

    def test_structure(self):
        link = self.link
        assert link.name == list(RX_POSITIONS)[1]
        assert len(link.snapshots) == 6
        assert np.allclose(link.times, 0.2*np.arange(6))
        for s, snapshot in enumerate(link.snapshots):
            label = snapshot.label
            assert len(label) == 1 + 10 + 3
            assert len(label.clutter()) == 11
            assert np.allclose(label.targets().etas(),
                               [link.groundtruth[track][s] for track in TRACK_NAMES])
            assert snapshot.seed == (3, 6 + s)

    def test_tracks_in_gate(self):
        for track in TRACK_NAMES:
            gt = self.link.groundtruth[track]
            assert gt.shape == (6, 2)
            assert np.all((gt[:, 0] > 0) & (gt[:, 0] < CFG.max_delay))
            assert np.all(np.abs(gt[:, 1]) < CFG.max_doppler)

    def test_uav_continuity(self):
        gt = self.link.groundtruth["UAV"]
        # the bistatic delay changes at most at twice the speed of light fraction
        max_step = 2*CFG.uav_speed*CFG.snapshot_spacing / SPEED_OF_LIGHT
        assert np.all(np.abs(np.diff(gt[:, 0])) <= max_step*(1 + 1e-9))
        assert np.all(np.abs(gt[:, 1]) <= 2*CFG.uav_speed*GRID.carrier_hz/SPEED_OF_LIGHT)

    def test_reconstruct(self):
        snapshot = self.link.snapshots[4]
        assert np.array_equal(snapshot.reconstruct(), snapshot.y)
        again = simulate_link(CFG, 3, 1)
        assert np.array_equal(again.snapshots[2].y, self.link.snapshots[2].y)

    def test_clutter(self):
        points = clutter_points(CFG, 3)
        assert points.shape == (10, 3)
        assert np.all(np.abs(points[:, :2]) <= 15) and np.all(points[:, 2] >= 0)
        assert np.array_equal(points, clutter_points(CFG, 3))
        assert not np.array_equal(points, clutter_points(CFG, 4))
