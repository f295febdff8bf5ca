import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np

from isac_detect.channel import SamplingGrid
from isac_detect.detector import Detection
from isac_detect.errors import FormatError
from isac_detect.formats import (read_detections, read_feature_tensor, read_pgm,
                                 read_snapshot, write_detections, write_feature_tensor,
                                 write_pgm, write_snapshot)
from isac_detect.scenario import ScenarioSpec, generate_snapshot


class TestSnapshotFiles(unittest.TestCase):
    def test_round_trip(self):
        spec = ScenarioSpec(SamplingGrid(32, 16, 1e6, 1e-3, t_start=0.25))
        snapshot = generate_snapshot(spec, 5, 2)
        with TemporaryDirectory() as directory:
            path = Path(directory)/"snapshot.dds"
            write_snapshot(path, snapshot, "abc")
            assert path.stat().st_size == 52 + 32*16*8
            back = read_snapshot(path)
        assert back.grid == snapshot.grid
        assert np.array_equal(back.y, snapshot.y.astype(np.complex64))
        assert back.label == snapshot.label
        assert back.seed == (5, 2)
        assert back.snr_db == snapshot.snr_db

    def test_byte_identical(self):
        spec = ScenarioSpec(SamplingGrid(32, 16, 1e6, 1e-3))
        with TemporaryDirectory() as directory:
            a, b = Path(directory)/"a.dds", Path(directory)/"b.dds"
            write_snapshot(a, generate_snapshot(spec, 1, 0))
            write_snapshot(b, generate_snapshot(spec, 1, 0))
            assert a.read_bytes() == b.read_bytes()
            assert a.with_suffix(".json").read_bytes() == b.with_suffix(".json").read_bytes()

    def test_bad_files(self):
        spec = ScenarioSpec(SamplingGrid(32, 16, 1e6, 1e-3))
        with TemporaryDirectory() as directory:
            path = Path(directory)/"snapshot.dds"
            write_snapshot(path, generate_snapshot(spec, 1, 0))
            raw = path.read_bytes()
            path.write_bytes(raw[:-8])
            with self.assertRaises(FormatError):
                read_snapshot(path)
            path.write_bytes(b"XXXX" + raw[4:])
            with self.assertRaises(FormatError):
                read_snapshot(path)
            path.write_bytes(raw[:20])
            with self.assertRaises(FormatError):
                read_snapshot(path)
            path.write_bytes(raw)
            path.with_suffix(".json").write_text("{")
            with self.assertRaises(FormatError):
                read_snapshot(path)
            assert read_snapshot(path, with_label=False).label is None


class TestFeatureFiles(unittest.TestCase):
    def test_tensor(self):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((6, 16, 8)).astype(np.float32)
        tau, alpha = np.arange(16)*2e-9, (np.arange(8) - 4)*7.5
        with TemporaryDirectory() as directory:
            path = Path(directory)/"features.ftn"
            write_feature_tensor(path, data, tau, alpha, "f"*64)
            back = read_feature_tensor(path)
        assert np.array_equal(back.data, data)
        assert np.allclose(back.tau_axis, tau) and np.allclose(back.alpha_axis, alpha)
        assert back.config_hash == "f"*64

    def test_map(self):
        m = np.arange(12, dtype=np.float32).reshape(3, 4)
        with TemporaryDirectory() as directory:
            path = Path(directory)/"map.ftn"
            write_feature_tensor(path, m, np.arange(3.), np.arange(4.))
            back = read_feature_tensor(path)
            assert back.data.shape == (3, 4)
            with self.assertRaises(FormatError):
                write_feature_tensor(path, np.zeros(3), np.arange(3.), np.arange(1.))


class TestDetectionFiles(unittest.TestCase):
    def test_round_trip(self):
        detections = {3: [Detection(1.25e-7, -31.5, 0.5-0.25j, 42.)],
                      0: [Detection(1e-8, 0.1, 1j, 20.), Detection(2e-8, 3.3, -1+0j, 19.)],
                      7: []}
        with TemporaryDirectory() as directory:
            path = Path(directory)/"detections.csv"
            write_detections(path, detections)
            header = path.read_text().splitlines()[0]
            back = read_detections(path)
        assert header == "snapshot_index,tau_s,alpha_hz,gamma_re,gamma_im,score"
        assert sorted(back) == [0, 3]
        assert back[0] == detections[0] and back[3] == detections[3]

    def test_empty(self):
        with TemporaryDirectory() as directory:
            path = Path(directory)/"detections.csv"
            write_detections(path, {})
            assert read_detections(path) == {}
            path.write_text("")
            assert read_detections(path) == {}
            path.write_text("snapshot_index,tau_s\n0,1e-7\n")
            with self.assertRaises(FormatError):
                read_detections(path)


class TestPGM(unittest.TestCase):
    def test_round_trip(self):
        # 9, 10, 11, 12, 13 and 32 are whitespace bytes
        image = np.array([[9, 10, 11, 12], [13, 32, 0, 255]], dtype=np.float64)
        with TemporaryDirectory() as directory:
            path = Path(directory)/"map.pgm"
            write_pgm(path, image, lo=0., hi=255.)
            assert path.read_bytes().startswith(b"P5\n4 2\n255\n")
            back = read_pgm(path)
        assert np.array_equal(back, image.astype(np.uint8))

    def test_scaling(self):
        with TemporaryDirectory() as directory:
            path = Path(directory)/"map.pgm"
            write_pgm(path, np.array([[-60., -30., 0., 10.]]), lo=-60., hi=0.)
            assert list(read_pgm(path)[0]) == [0, 128, 255, 255]
            write_pgm(path, np.zeros((2, 2)))
            assert np.all(read_pgm(path) == 0)

    def test_bad(self):
        with TemporaryDirectory() as directory:
            path = Path(directory)/"map.pgm"
            # a color PPM
            path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
            with self.assertRaises(FormatError):
                read_pgm(path)
            path.write_bytes(b"not an image")
            with self.assertRaises(FormatError):
                read_pgm(path)
            path.write_bytes(b"P5\n2 2\n255\n\x00")
            with self.assertRaises(FormatError):
                read_pgm(path)
