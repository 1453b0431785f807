import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetradar.errors import LengthMismatchError, ScanParseError, ScanValidationError
from hetradar.scan_model import (FourDScan, ManifestEntry, PolarGrid, PolarImage, RadarPoint,
                                 SequenceManifest, SpinningScan, load_fourd_scan, load_manifest,
                                 load_polar_image, load_spinning_scan, save_fourd_scan,
                                 save_manifest, save_polar_image, save_spinning_scan)

HEADER = "x,y,z,doppler,rcs\n"


def test_csv_row_maps_to_point(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "1.0,2.0,0.5,-0.3,12.5\n")
    scan = load_fourd_scan(p)
    assert len(scan) == 1
    assert scan[0] == RadarPoint(1.0, 2.0, 0.5, -0.3, 12.5)


def test_header_only_is_empty_scan(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER)
    scan = load_fourd_scan(p)
    assert len(scan) == 0 and scan.points.shape == (0, 5)


@pytest.mark.parametrize("col", range(5))
def test_nan_in_any_column_is_rejected(tmp_path, col):
    vals = ["1.0", "2.0", "0.5", "-0.3", "12.5"]
    vals[col] = "NaN"
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "1,1,1,0,0\n" + ",".join(vals) + "\n")
    with pytest.raises(ScanValidationError, match="line 3"):
        load_fourd_scan(p)


def test_malformed_row_names_line(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "1,1,1,0,0\n1,1,1,0,0\n1,abc,1,0,0\n")
    with pytest.raises(ScanParseError, match="line 4"):
        load_fourd_scan(p)
    p.write_text(HEADER + "1,1,1,0\n")
    with pytest.raises(ScanParseError, match="line 2"):
        load_fourd_scan(p)


def test_zero_range_point_rejected():
    with pytest.raises(ScanValidationError):
        RadarPoint(0.0, 0.0, 0.0, 1.0, 1.0)
    with pytest.raises(ScanValidationError):
        FourDScan(0.0, np.array([[0.0, 0.0, 0.0, 1.0, 1.0]]))


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite, finite, finite), max_size=20))
def test_fourd_roundtrip_is_bit_exact(tmp_path_factory, rows):
    rows = [r for r in rows if math.sqrt(r[0] ** 2 + r[1] ** 2 + r[2] ** 2) > 0]
    scan = FourDScan(1.5, np.array(rows, dtype=np.float64).reshape(-1, 5))
    d = tmp_path_factory.mktemp("rt")
    for fmt in ("csv", "binary"):
        save_fourd_scan(scan, d / f"s.{fmt}", fmt)
        back = load_fourd_scan(d / f"s.{fmt}", fmt, 1.5)
        assert back == scan
        assert back.points.tobytes() == scan.points.tobytes()


def test_binary_truncated(tmp_path):
    scan = FourDScan(0.0, np.ones((3, 5)))
    save_fourd_scan(scan, tmp_path / "s.bin", "binary")
    data = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-8])
    with pytest.raises(LengthMismatchError):
        load_fourd_scan(tmp_path / "t.bin", "binary")


def _rspn(n_r, n_a, values):
    return struct.pack("<4sIId", b"RSPN", n_r, n_a, 0.5) + np.asarray(values, "<f4").tobytes()


def test_spinning_shape_and_length(tmp_path):
    (tmp_path / "a.rspn").write_bytes(_rspn(4, 8, np.arange(32)))
    scan = load_spinning_scan(tmp_path / "a.rspn")
    assert scan.shape == (4, 8)
    assert scan.power[1, 0] == 8
    (tmp_path / "b.rspn").write_bytes(_rspn(4, 8, np.arange(31)))
    with pytest.raises(LengthMismatchError):
        load_spinning_scan(tmp_path / "b.rspn")


def test_spinning_zero_payload_is_valid(tmp_path):
    (tmp_path / "z.rspn").write_bytes(_rspn(4, 8, np.zeros(32)))
    scan = load_spinning_scan(tmp_path / "z.rspn")
    assert not scan.power.any()


def test_spinning_roundtrip_and_validation(tmp_path, rng):
    scan = SpinningScan(2.0, rng.uniform(0, 100, (16, 24)).astype(np.float32), 0.39)
    save_spinning_scan(scan, tmp_path / "s.rspn")
    assert load_spinning_scan(tmp_path / "s.rspn", 2.0) == scan
    with pytest.raises(ScanValidationError):
        SpinningScan(0.0, -np.ones((2, 2)), 1.0)
    with pytest.raises(ScanValidationError):
        SpinningScan(0.0, np.ones((2, 2)), 0.0)


def test_polar_image_roundtrip(tmp_path, rng):
    g = PolarGrid(32, 64, 50.0, 1.0)
    img = PolarImage(g, rng.uniform(0, 100, (32, 64)), 3.25)
    save_polar_image(img, tmp_path / "i.npz")
    assert load_polar_image(tmp_path / "i.npz") == img
    with pytest.raises(ScanValidationError):
        PolarImage(g, -np.ones((32, 64)), 0.0)


def test_grid_validation():
    with pytest.raises(ScanValidationError):
        PolarGrid(0, 10, 1.0, 1.0)
    with pytest.raises(ScanValidationError):
        PolarGrid(10, 10, 1.0, 7.0)


def test_manifest_roundtrip_and_missing_file(tmp_path):
    (tmp_path / "a.csv").write_text(HEADER)
    m = SequenceManifest([ManifestEntry("a.csv", 0.5, 1.0, 2.0, 0.1, "fourd")], tmp_path)
    save_manifest(m, tmp_path / "m.jsonl")
    back = load_manifest(tmp_path / "m.jsonl")
    assert back.entries == m.entries
    np.testing.assert_array_equal(back.poses(), [[1.0, 2.0, 0.1]])
    (tmp_path / "a.csv").unlink()
    with pytest.raises(ScanValidationError, match="missing"):
        load_manifest(tmp_path / "m.jsonl")
    (tmp_path / "bad.jsonl").write_text('{"path": "x"}\n')
    with pytest.raises(ScanParseError, match="line 1"):
        load_manifest(tmp_path / "bad.jsonl", check_files=False)
