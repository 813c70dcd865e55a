import numpy as np
import pytest

from densecount import fileio


class TestPgm:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = np.round(rng.random((12, 17)) * 255) / 255.0
        path = tmp_path / "img.pgm"
        fileio.write_pgm(path, img)
        back = fileio.read_pgm(path)
        np.testing.assert_allclose(back, img, atol=1e-12)

    def test_values_clipped(self, tmp_path):
        path = tmp_path / "clip.pgm"
        fileio.write_pgm(path, np.array([[-1.0, 2.0]]))
        np.testing.assert_array_equal(fileio.read_pgm(path), [[0.0, 1.0]])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
        with pytest.raises(fileio.FileFormatError, match="magic"):
            fileio.read_pgm(path)

    def test_truncated_data(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(fileio.FileFormatError, match="truncated"):
            fileio.read_pgm(path)

    def test_deterministic_bytes(self, tmp_path):
        img = np.linspace(0, 1, 64).reshape(8, 8)
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        fileio.write_pgm(a, img)
        fileio.write_pgm(b, img)
        assert a.read_bytes() == b.read_bytes()


class TestDensityFile:
    def test_roundtrip_float32_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        dense = rng.random((9, 5)).astype(np.float32).astype(np.float64)
        path = tmp_path / "map.dmap"
        fileio.write_density(path, dense)
        np.testing.assert_array_equal(fileio.read_density(path), dense)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dmap"
        path.write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(fileio.FileFormatError, match="magic"):
            fileio.read_density(path)

    def test_bad_version(self, tmp_path):
        import struct

        path = tmp_path / "v99.dmap"
        path.write_bytes(struct.pack("<4sIII", b"DMAP", 99, 1, 1) + bytes(4))
        with pytest.raises(fileio.FileFormatError, match="version"):
            fileio.read_density(path)

    def test_truncated(self, tmp_path):
        import struct

        path = tmp_path / "short.dmap"
        path.write_bytes(struct.pack("<4sIII", b"DMAP", 1, 4, 4) + bytes(7))
        with pytest.raises(fileio.FileFormatError, match="truncated"):
            fileio.read_density(path)


class TestTables:
    def test_annotation_roundtrip(self, tmp_path):
        annotations = {
            "a": np.array([[1.5, 2.25], [3.0, 4.0]]),
            "b": np.zeros((0, 2)),
            "c": np.array([[0.1, 0.2]]),
        }
        path = tmp_path / "annotations.csv"
        fileio.write_annotations(path, annotations)
        back = fileio.read_annotations(path)
        # images without points do not appear in the table
        assert set(back) == {"a", "c"}
        np.testing.assert_array_equal(back["a"], annotations["a"])
        np.testing.assert_array_equal(back["c"], annotations["c"])

    def test_split_roundtrip(self, tmp_path):
        assignment = {"x0": "train", "x1": "val", "x2": "test"}
        path = tmp_path / "split.csv"
        fileio.write_split(path, assignment)
        assert fileio.read_split(path) == assignment

    def test_bad_headers(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("foo,bar\n")
        with pytest.raises(fileio.FileFormatError):
            fileio.read_annotations(p)
        with pytest.raises(fileio.FileFormatError):
            fileio.read_split(p)


class TestHeatmap:
    def test_writes_image_and_sidecar(self, tmp_path):
        path = tmp_path / "heat.pgm"
        fileio.write_heatmap(path, np.array([[0.0, 5.0], [2.5, -5.0]]))
        img = fileio.read_pgm(path)
        assert img.min() == 0.0 and img.max() == 1.0
        sidecar = (tmp_path / "heat.pgm.scale.txt").read_text()
        assert "min -5.0" in sidecar and "max 5.0" in sidecar

    def test_constant_map(self, tmp_path):
        path = tmp_path / "flat.pgm"
        fileio.write_heatmap(path, np.full((3, 3), 7.0))
        np.testing.assert_array_equal(fileio.read_pgm(path), np.zeros((3, 3)))
