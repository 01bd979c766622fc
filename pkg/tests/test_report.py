import json
import os
from pathlib import Path

import numpy as np
import pytest

import featlens as fl
from featlens.probe import ProbeConfig
from featlens.report import (
    RunPlan,
    canonical_json,
    document_to_dict,
    run,
    summary_text,
    write_report,
)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    m, t = fl.gen_blobs(fl.BlobSpec(n_samples=700, dim=24, n_classes=4, class_separation=8.0, seed=1))
    m, t = fl.inject_batch_effect(m, t, fl.BatchEffectSpec(n_sites=3, offset_magnitude=6.0, seed=2))
    fl.write_features(m, root / "f.fbin")
    fl.write_labels(t, root / "l.csv")
    return fl.make_manifest(root / "f.fbin", root / "l.csv", "epoch-020"), root


def _plan(manifests, **overrides):
    defaults = dict(
        manifests=manifests,
        n_neighbors_grid=(10,),
        min_dist_grid=(0.1,),
        sample_sizes=(400,),
        probe_columns=("site",),
        umap_epochs=40,
        probe=ProbeConfig(runs=2, epochs=4, seed=0),
        seed=0,
    )
    defaults.update(overrides)
    return RunPlan(**defaults)


def test_smallest_plan_produces_one_of_each(corpus):
    manifest, _ = corpus
    doc = run(_plan((manifest,)))
    assert len(doc.embeddings) == 1
    assert len(doc.probes) == 1
    assert not doc.failures
    cell = doc.embeddings[0]
    assert cell.tag == "epoch-020"
    assert set(cell.metrics["silhouette"]) == {"class", "site"}
    assert cell.metrics["knn_preservation"]["k"] == 10
    assert doc.probes[0].result.label_column == "site"
    assert doc.probes[0].result.mean_accuracy > doc.probes[0].result.chance_baseline


def test_two_tags_compared(corpus, tmp_path):
    manifest, root = corpus
    m2, t2 = fl.gen_blobs(fl.BlobSpec(n_samples=700, dim=24, n_classes=4, class_separation=8.0, seed=9))
    m2, t2 = fl.inject_batch_effect(m2, t2, fl.BatchEffectSpec(n_sites=3, offset_magnitude=0.0, seed=2))
    fl.write_features(m2, tmp_path / "f2.fbin")
    fl.write_labels(t2, tmp_path / "l2.csv")
    manifest2 = fl.make_manifest(tmp_path / "f2.fbin", tmp_path / "l2.csv", "epoch-040")
    doc = run(_plan((manifest, manifest2)))
    tags = {p.tag: p.result.mean_accuracy for p in doc.probes}
    assert set(tags) == {"epoch-020", "epoch-040"}
    # the injected site effect is decodable in one snapshot and absent in the other
    assert tags["epoch-020"] > 0.8
    assert abs(tags["epoch-040"] - doc.probes[1].result.chance_baseline) < 0.15


def test_grid_and_sample_sizes_cross_product(corpus):
    manifest, _ = corpus
    doc = run(
        _plan(
            (manifest,),
            n_neighbors_grid=(8, 12),
            min_dist_grid=(0.0, 0.25),
            sample_sizes=(200, 400),
        )
    )
    assert len(doc.embeddings) == 8
    keys = {c.key for c in doc.embeddings}
    assert len(keys) == 8
    sizes = {c.sample_size for c in doc.embeddings}
    assert sizes == {200, 400}


def test_caching_equivalence(corpus, monkeypatch):
    # two min_dist cells share one kNN graph; cached and uncached runs agree
    manifest, _ = corpus
    import featlens.report as report_mod

    calls = {"n": 0}
    original_knn = report_mod.knn

    def counting_knn(*args, **kwargs):
        calls["n"] += 1
        return original_knn(*args, **kwargs)

    monkeypatch.setattr(report_mod, "knn", counting_knn)
    plan = _plan((manifest,), n_neighbors_grid=(9,), min_dist_grid=(0.05, 0.3))
    doc_cached = run(plan)
    cached_calls = calls["n"]
    calls["n"] = 0
    doc_nocache = run(_plan(
        (manifest,), n_neighbors_grid=(9,), min_dist_grid=(0.05, 0.3), use_cache=False
    ))
    assert cached_calls == 1
    assert calls["n"] == 2
    a = document_to_dict(doc_cached)
    b = document_to_dict(doc_nocache)
    a["generated_at"] = b["generated_at"] = "X"
    assert canonical_json(a) == canonical_json(b)


def test_report_roundtrip_byte_identical(corpus, tmp_path):
    manifest, _ = corpus
    doc = run(_plan((manifest,)))
    out = write_report(doc, tmp_path / "site")
    text = (out / "report.json").read_text()
    assert canonical_json(json.loads(text)) == text
    assert (out / "summary.txt").exists()
    assert (out / "index.html").exists()


def test_report_schema_content(corpus, tmp_path):
    manifest, _ = corpus
    doc = run(_plan((manifest,)))
    payload = document_to_dict(doc)
    assert payload["version"] == "1.0"
    assert payload["datasets"][0]["tag"] == "epoch-020"
    assert payload["datasets"][0]["checksum"].startswith("sha256:")
    cell = payload["embeddings"][0]
    sample_set = payload["sample_sets"][0]
    assert cell["sample_set"] == sample_set["key"]
    assert len(cell["coords"]) == 2 * len(sample_set["ids"])
    assert set(sample_set["labels"]) == {"class", "site"}
    # coordinates are 6-significant-digit stable
    assert all(float(f"{v:.6g}") == v for v in cell["coords"])
    probe = payload["probes"][0]
    assert probe["label_column"] == "site"
    assert len(probe["runs"]) == 2
    assert "confusion" in probe["runs"][0]


def test_failures_recorded_not_fatal(corpus, tmp_path):
    manifest, _ = corpus
    bad = fl.Manifest(
        feature_source=str(tmp_path / "missing.fbin"),
        feature_format="fbin",
        label_source=str(tmp_path / "missing.csv"),
        tag="broken",
        checksum="sha256:0",
    )
    doc = run(_plan((manifest, bad)))
    assert len(doc.embeddings) == 1  # good manifest still processed
    assert any(f["key"] == "broken" and f["stage"] == "load" for f in doc.failures)


def test_probe_failure_isolated(corpus):
    manifest, _ = corpus
    doc = run(_plan((manifest,), probe_columns=("site", "no_such_column")))
    assert any("no_such_column" in f["key"] for f in doc.failures)
    assert len(doc.probes) == 1
    assert len(doc.embeddings) == 1


def test_unwritable_dir_raises(corpus):
    manifest, _ = corpus
    doc = run(_plan((manifest,)))
    if os.geteuid() == 0:
        pytest.skip("running as root: directory permissions are not enforced")
    with pytest.raises(OSError, match="not writable"):
        write_report(doc, "/proc/definitely/not/writable")


def test_summary_mentions_probe_and_cells(corpus):
    manifest, _ = corpus
    doc = run(_plan((manifest,)))
    text = summary_text(doc)
    assert "site" in text
    assert "chance" in text
    assert "epoch-020/s400/k10/d0.1" in text


def test_probe_embeddings_flag(corpus):
    manifest, _ = corpus
    doc = run(_plan((manifest,), probe_embeddings=True))
    spaces = {p.space for p in doc.probes}
    assert "features" in spaces
    assert any(s.startswith("embedding:") for s in spaces)


def test_raw_tag_embedded_not_probed(corpus, tmp_path):
    manifest, _ = corpus
    m_raw, t_raw = fl.gen_blobs(fl.BlobSpec(n_samples=700, dim=6, n_classes=4, seed=3))
    m_raw, t_raw = fl.inject_batch_effect(m_raw, t_raw, fl.BatchEffectSpec(n_sites=3, offset_magnitude=0.0, seed=2))
    fl.write_features(m_raw, tmp_path / "raw.fbin")
    fl.write_labels(t_raw, tmp_path / "raw.csv")
    raw_manifest = fl.make_manifest(tmp_path / "raw.fbin", tmp_path / "raw.csv", "raw-pixels")
    doc = run(_plan((manifest, raw_manifest), raw_tags=("raw-pixels",)))
    assert {c.space for c in doc.embeddings} == {"features", "raw"}
    assert all(p.tag != "raw-pixels" for p in doc.probes)
