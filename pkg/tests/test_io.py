import struct

import numpy as np
import pytest

import featlens as fl
from featlens.io import DataFormatError, FBIN_MAGIC


def test_csv_parse(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("id,f0,f1\na,0,1\nb,2,3\n")
    m = fl.load_features(path)
    assert m.ids == ("a", "b")
    np.testing.assert_array_equal(m.values, [[0.0, 1.0], [2.0, 3.0]])


def test_csv_inconsistent_width(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("id,f0,f1\na,0,1,9\n")
    with pytest.raises(DataFormatError, match="row has 3 values"):
        fl.load_features(path)


def test_csv_non_numeric_cell(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("id,f0\na,zap\n")
    with pytest.raises(DataFormatError, match="non-numeric"):
        fl.load_features(path)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("sample,f0\na,1\n")
    with pytest.raises(DataFormatError, match="header"):
        fl.load_features(path)


def test_fbin_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    m = fl.FeatureMatrix([f"s{i}" for i in range(7)], rng.normal(size=(7, 3)))
    path = tmp_path / "f.fbin"
    fl.write_features(m, path)
    back = fl.load_features(path)
    assert back.ids == m.ids
    np.testing.assert_array_equal(back.values, m.values)


def test_csv_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(1)
    m = fl.FeatureMatrix(["a", "b"], rng.normal(size=(2, 4)))
    path = tmp_path / "f.csv"
    fl.write_features(m, path)
    back = fl.load_features(path)
    np.testing.assert_array_equal(back.values, m.values)


def test_fbin_truncated_rows(tmp_path):
    path = tmp_path / "f.fbin"
    header = struct.pack("<4sHIQ", FBIN_MAGIC, 1, 4, 10)
    path.write_bytes(header + b"\x00" * (4 * 4 * 9))  # 9 of 10 declared rows
    with pytest.raises(DataFormatError, match="declares 10 rows but holds 9"):
        fl.load_features(path, "fbin")


def test_fbin_bad_magic(tmp_path):
    path = tmp_path / "f.fbin"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(DataFormatError, match="magic"):
        fl.load_features(path, "fbin")


def test_fbin_id_count_mismatch(tmp_path):
    path = tmp_path / "f.fbin"
    ids = b"a\nb\nc"
    payload = (
        struct.pack("<4sHIQ", FBIN_MAGIC, 1, 2, 2)
        + b"\x00" * 16
        + struct.pack("<I", len(ids))
        + ids
    )
    path.write_bytes(payload)
    with pytest.raises(DataFormatError, match="3 ids for 2 rows"):
        fl.load_features(path, "fbin")


def test_load_labels(tmp_path):
    path = tmp_path / "l.csv"
    path.write_text("id,tss\na,22\nb,85\n")
    t = fl.load_labels(path)
    assert t.categories("tss") == ("22", "85")


def test_load_labels_duplicate_id(tmp_path):
    path = tmp_path / "l.csv"
    path.write_text("id,tss\na,22\na,85\n")
    with pytest.raises(DataFormatError, match="duplicate"):
        fl.load_labels(path)


def test_load_labels_empty_file(tmp_path):
    path = tmp_path / "l.csv"
    path.write_text("")
    with pytest.raises(DataFormatError, match="empty"):
        fl.load_labels(path)


def test_load_labels_missing_sentinel(tmp_path):
    path = tmp_path / "l.csv"
    path.write_text("id,tss,grade\na,22,\nb,,2\n")
    t = fl.load_labels(path)
    assert t.columns["grade"] == (fl.MISSING, "2")
    assert t.columns["tss"] == ("22", fl.MISSING)


def test_manifest_checksum_guard(tmp_path):
    fpath = tmp_path / "f.csv"
    lpath = tmp_path / "l.csv"
    m = fl.FeatureMatrix(["a"], np.ones((1, 2)))
    fl.write_features(m, fpath)
    lpath.write_text("id,c\na,1\n")
    manifest = fl.make_manifest(fpath, lpath, "epoch-020")
    features, labels = fl.load_manifest_data(manifest)
    assert features.ids == ("a",)

    fpath.write_text("id,f0,f1\na,9,9\n")  # mutate after manifest creation
    with pytest.raises(DataFormatError, match="checksum mismatch"):
        fl.load_manifest_data(manifest)


def test_normalize_option(tmp_path):
    path = tmp_path / "f.csv"
    fl.write_features(fl.FeatureMatrix(["a", "b"], [[3.0, 4.0], [0.0, 0.0]]), path)
    m = fl.load_features(path, normalize=True)
    np.testing.assert_allclose(m.values[0], [0.6, 0.8], rtol=1e-6)
    np.testing.assert_array_equal(m.values[1], [0.0, 0.0])  # zero rows stay zero
