import numpy as np
import pytest

import featlens as fl
from featlens.data import Violation


def test_validate_ok():
    m = fl.FeatureMatrix(["a", "b", "c"], np.zeros((3, 4), dtype=np.float32))
    verdict = fl.validate_features(m)
    assert verdict.ok and not verdict.violations


def test_validate_nan_reports_row():
    values = np.zeros((3, 4), dtype=np.float32)
    values[2, 1] = np.nan
    verdict = fl.validate_features(fl.FeatureMatrix(["a", "b", "c"], values))
    assert not verdict.ok
    kinds = {v.kind: v for v in verdict.violations}
    assert "non_finite" in kinds
    assert kinds["non_finite"].rows == (2,)


def test_validate_duplicate_id():
    verdict = fl.validate_features(
        fl.FeatureMatrix(["a", "a", "b"], np.zeros((3, 2), dtype=np.float32))
    )
    assert not verdict.ok
    assert any(v.kind == "duplicate_id" and "'a'" in v.detail for v in verdict.violations)


def test_validate_infinity_detected():
    values = np.ones((2, 2), dtype=np.float32)
    values[0, 0] = np.inf
    assert not fl.validate_features(fl.FeatureMatrix(["a", "b"], values)).ok


def test_feature_matrix_shape_checks():
    with pytest.raises(ValueError):
        fl.FeatureMatrix(["a", "b"], np.zeros((3, 2)))
    with pytest.raises(ValueError):
        fl.FeatureMatrix(["a"], np.zeros(3))


def test_feature_matrix_immutability():
    m = fl.FeatureMatrix(["a"], np.zeros((1, 2)))
    with pytest.raises(ValueError):
        m.values[0, 0] = 1.0


def test_label_table_rejects_duplicates_and_fills_sentinel():
    with pytest.raises(ValueError):
        fl.LabelTable(["a", "a"], {"c": ["1", "2"]})
    t = fl.LabelTable(["a", "b"], {"c": ["1", ""]})
    assert t.columns["c"] == ("1", fl.MISSING)


def test_join_full_overlap():
    m = fl.FeatureMatrix(["a", "b", "c"], np.arange(6, dtype=np.float32).reshape(3, 2))
    t = fl.LabelTable(["a", "b", "c"], {"tss": ["1", "2", "1"]})
    joined = fl.join(m, t, "tss")
    assert joined.n_dropped == 0
    assert joined.matrix.ids == ("a", "b", "c")
    assert joined.labels == ("1", "2", "1")


def test_join_drops_missing_ids_and_counts():
    m = fl.FeatureMatrix(["a", "b", "c"], np.arange(6, dtype=np.float32).reshape(3, 2))
    t = fl.LabelTable(["a", "c"], {"tss": ["1", "2"]})
    joined = fl.join(m, t, "tss")
    assert joined.n_dropped == 1
    assert joined.matrix.ids == ("a", "c")
    np.testing.assert_array_equal(joined.matrix.values, m.values[[0, 2]])


def test_join_unknown_column():
    m = fl.FeatureMatrix(["a"], np.zeros((1, 2)))
    t = fl.LabelTable(["a"], {"x": ["1"]})
    with pytest.raises(KeyError):
        fl.join(m, t, "tss")


def test_join_idempotent():
    m = fl.FeatureMatrix(["a", "b", "c", "d"], np.arange(8, dtype=np.float32).reshape(4, 2))
    t = fl.LabelTable(["b", "c", "a"], {"col": ["x", "y", "z"]})
    once = fl.join(m, t, "col")
    twice = fl.join(once.matrix, t, "col")
    assert twice.matrix.ids == once.matrix.ids
    assert twice.labels == once.labels
    assert twice.n_dropped == 0
    np.testing.assert_array_equal(twice.matrix.values, once.matrix.values)


def test_probe_result_mean_matches_runs():
    runs = [
        fl.ProbeRun(seed=i, split_seed=i, test_accuracy=a, confusion=np.eye(2, dtype=int))
        for i, a in enumerate([0.5, 0.75, 1.0])
    ]
    result = fl.ProbeResult.from_runs("c", ("x", "y"), runs, chance_baseline=0.5)
    accs = np.array([r.test_accuracy for r in runs])
    assert abs(result.mean_accuracy - accs.mean()) < 1e-12
    assert abs(result.std_accuracy - accs.std()) < 1e-12


def test_report_document_rejects_unknown_tag():
    e = fl.EmbeddingResult(["a"], np.zeros((1, 2)), {"seed": 0}, "known")
    cell = fl.data.EmbeddingCell(key="k", tag="unknown", sample_size=1, space="features", embedding=e)
    with pytest.raises(ValueError):
        fl.ReportDocument(
            version="1.0",
            datasets=({"tag": "known"},),
            embeddings=(cell,),
            probes=(),
            generated_at="now",
        )
