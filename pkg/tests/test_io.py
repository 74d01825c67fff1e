import json

import jsonschema
import numpy as np
import pytest

from sparsefof.functional import Grid
from sparsefof.io import (
    CoefficientSet,
    Dataset,
    read_coefficients,
    read_csv_matrix,
    read_dataset,
    validate,
    write_coefficients,
    write_csv_matrix,
    write_dataset,
)


@pytest.fixture
def data(rng):
    g = Grid.uniform(9)
    feats = [rng.standard_normal((6, 9)) for _ in range(3)]
    return Dataset(feats, rng.standard_normal((6, 9)), g, ["a", "b", "c"])


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_dataset_round_trip_is_exact(tmp_path, data, fmt):
    manifest = write_dataset(tmp_path / "d", data, fmt)
    back = read_dataset(manifest)
    assert back.feature_names == ("a", "b", "c")
    for f, g in zip(data.features, back.features):
        np.testing.assert_array_equal(f, g)
    np.testing.assert_array_equal(back.response, data.response)
    np.testing.assert_allclose(back.grid.points, data.grid.points)
    assert read_dataset(tmp_path / "d").n == 6


def test_binary_layout_is_feature_major(tmp_path, data):
    write_dataset(tmp_path, data, "binary")
    raw = np.fromfile(tmp_path / "features.bin", dtype="<f8")
    np.testing.assert_array_equal(raw[:9], data.features[0][0])
    np.testing.assert_array_equal(raw[54:63], data.features[1][0])


def test_scalar_dataset(tmp_path, rng):
    g = Grid.uniform(5)
    d = Dataset([rng.standard_normal((4, 5))], rng.standard_normal(4), g, mode="scalar")
    assert d.response.shape == (4, 1)
    back = read_dataset(write_dataset(tmp_path, d))
    assert back.mode == "scalar"
    np.testing.assert_array_equal(back.response, d.response)


def test_truncated_binary_rejected(tmp_path, data):
    write_dataset(tmp_path, data, "binary")
    raw = np.fromfile(tmp_path / "features.bin", dtype="<f8")
    raw[:-1].tofile(tmp_path / "features.bin")
    with pytest.raises(ValueError):
        read_dataset(tmp_path)


def test_dataset_shape_checks(rng):
    g = Grid.uniform(4)
    with pytest.raises(ValueError):
        Dataset([rng.standard_normal((3, 5))], rng.standard_normal((3, 4)), g)
    with pytest.raises(ValueError):
        Dataset([np.zeros((3, 4))] * 2, np.zeros((3, 4)), g, ["x", "x"])


def test_csv_matrix_rejects_non_finite(tmp_path):
    (tmp_path / "m.csv").write_text("1,2\nnan,3\n")
    with pytest.raises(ValueError):
        read_csv_matrix(tmp_path / "m.csv")
    write_csv_matrix(tmp_path / "ok.csv", [[0.1, 1 / 3]])
    assert read_csv_matrix(tmp_path / "ok.csv")[0, 1] == 1 / 3


def test_manifest_schema_violation(tmp_path, data):
    write_dataset(tmp_path, data)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    del doc["n"]
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(jsonschema.ValidationError):
        read_dataset(tmp_path)


def test_coefficient_round_trip(tmp_path, rng):
    blocks = [rng.standard_normal((7, 7)), rng.standard_normal((7, 7))]
    coefs = CoefficientSet(["u", "v", "w"], [0, 2], blocks, rng.standard_normal(7), info={"k": 3})
    write_coefficients(tmp_path, coefs)
    validate(json.loads((tmp_path / "coefficients.json").read_text()), "coefficients")
    back = read_coefficients(tmp_path)
    assert back.selected == [0, 2] and back.info["k"] == 3
    for a, b in zip(blocks, back.blocks):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.intercept, coefs.intercept)


def test_scalar_coefficients_are_curves(tmp_path, rng):
    curve = rng.standard_normal(5)
    write_coefficients(tmp_path, CoefficientSet(["u"], [0], [curve], 0.5, mode="scalar"))
    back = read_coefficients(tmp_path)
    np.testing.assert_array_equal(back.blocks[0], curve)
    assert back.intercept.shape == (1,)


def test_empty_coefficient_set(tmp_path):
    write_coefficients(tmp_path, CoefficientSet(["u", "v"], [], [], np.zeros(3)))
    assert read_coefficients(tmp_path).selected == []
