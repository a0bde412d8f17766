"""Tests for SVD entropy and spectrum reports."""

import csv
import math

import numpy as np
import pytest

from muonlab.errors import ConfigError, EntropyUndefinedError
from muonlab.matrix import as_matrix
from muonlab.orthogonalizer import newton_schulz
from muonlab.spectral import spectrum_report, svd_entropy, write_spectra

# --- svd_entropy -----------------------------------------------------------------


def test_flat_spectrum_scores_one():
    assert svd_entropy([1.0, 1.0, 1.0, 1.0]) == 1.0
    assert svd_entropy(np.full(37, 0.3)) == pytest.approx(1.0, abs=1e-15)


def test_rank_one_scores_zero():
    assert svd_entropy([1.0, 0.0, 0.0, 0.0]) == 0.0


def test_half_rank_scores_one_half():
    assert svd_entropy([1.0, 1.0, 0.0, 0.0]) == pytest.approx(0.5, abs=1e-15)


def test_two_unequal_values():
    p = np.array([0.8, 0.2])
    expected = -float(np.sum(p * np.log(p))) / math.log(2)
    assert svd_entropy([2.0, 1.0]) == pytest.approx(expected, rel=1e-14)


def test_single_value_scores_zero():
    assert svd_entropy([5.0]) == 0.0


def test_explicit_n_counts_missing_values_as_zero():
    assert svd_entropy([1.0, 1.0], n=4) == pytest.approx(0.5, abs=1e-15)


def test_scale_and_permutation_invariance(rng):
    for _ in range(20):
        sigma = rng.uniform(0.0, 3.0, size=int(rng.integers(2, 40)))
        base = svd_entropy(sigma)
        assert svd_entropy(sigma * 1e5) == pytest.approx(base, rel=1e-12)
        assert svd_entropy(sigma * 1e-5) == pytest.approx(base, rel=1e-12)
        assert svd_entropy(rng.permutation(sigma)) == pytest.approx(base, rel=1e-12)
        assert 0.0 <= base <= 1.0 + 1e-15


def test_subnormal_values_count_as_zero():
    assert svd_entropy([1.0, 1e-310]) == 0.0


@pytest.mark.parametrize(
    ("sigma", "kwargs"),
    [([1.0, -0.5], {}), ([1.0, math.nan], {}), ([1.0, 1.0, 1.0], {"n": 2})],
)
def test_invalid_spectra(sigma, kwargs):
    with pytest.raises(ValueError):
        svd_entropy(sigma, **kwargs)


def test_all_zero_is_undefined():
    with pytest.raises(EntropyUndefinedError):
        svd_entropy([0.0, 0.0, 0.0])


def test_padding_with_a_zero_value_lowers_entropy(rng):
    for _ in range(20):
        sigma = np.sort(rng.uniform(0.1, 3.0, size=int(rng.integers(2, 30))))[::-1]
        n = sigma.size
        padded = np.append(sigma, 0.0)
        assert svd_entropy(padded, n=n + 1) < svd_entropy(sigma, n=n)
    assert svd_entropy([3.0, 1.0, 0.0], n=3) < svd_entropy([3.0, 1.0], n=2)


# --- spectrum_report -------------------------------------------------------------


def test_gaussian_beats_rank_deficient(rng, with_spectrum):
    weights = {
        "dense": rng.standard_normal((32, 32)),
        "low": with_spectrum((32, 32), np.array([3.0, 1.0])),
    }
    summary = spectrum_report(weights, {"dense": "a", "low": "b"})
    dense = summary.reports["dense"].entropy
    low = summary.reports["low"].entropy
    assert dense > 0.7
    assert low <= math.log(2) / math.log(32) + 1e-12
    assert dense > low


def test_normalized_spectrum_is_descending_from_one(rng):
    summary = spectrum_report({"w": rng.standard_normal((6, 9))}, {"w": "g"})
    normalized = summary.reports["w"].normalized
    assert normalized[0] == 1.0
    assert np.all(np.diff(normalized) <= 0.0)
    assert normalized.size == 6


def test_report_on_read_only_wide_weights(rng):
    weight = newton_schulz(as_matrix(rng.standard_normal((4, 6))))
    before = weight.copy()
    weights = {"w": weight, "g": as_matrix(np.ones((1, 5)))}
    summary = spectrum_report(weights, {"w": "m", "g": "v"})
    np.testing.assert_array_equal(weight, before)
    assert 0.8 < summary.reports["w"].entropy <= 1.0
    assert summary.reports["g"].entropy == 0.0


def test_group_entropy_is_a_macro_average(rng):
    weights = {name: rng.standard_normal((5, 8)) for name in ("a", "b", "c")}
    summary = spectrum_report(weights, {"a": "attn", "b": "attn", "c": "mlp"})
    reports = summary.reports
    assert summary.group_entropy["attn"] == pytest.approx(
        (reports["a"].entropy + reports["b"].entropy) / 2, rel=1e-15
    )
    assert summary.group_entropy["mlp"] == reports["c"].entropy


def test_unassigned_param_is_a_config_error(rng):
    with pytest.raises(ConfigError) as exc:
        spectrum_report({"w": rng.standard_normal((3, 3))}, {})
    assert exc.value.details["param"] == "w"


def test_zero_matrix_names_the_param():
    with pytest.raises(EntropyUndefinedError) as exc:
        spectrum_report({"dead": np.zeros((3, 4))}, {"dead": "g"})
    assert exc.value.details["param"] == "dead"


# --- write_spectra ---------------------------------------------------------------


def test_write_spectra_layout(rng, tmp_path):
    weights = {"layer0.weight": rng.standard_normal((4, 6)), "layer1.weight": np.eye(3)}
    summary = spectrum_report(weights, {name: "weight" for name in weights})
    written = write_spectra(summary, tmp_path, precision=6)
    assert written[0] == tmp_path / "entropy.csv"

    with (tmp_path / "entropy.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["param", "group", "entropy"]
    assert [row[0] for row in rows[1:]] == ["layer0.weight", "layer1.weight"]
    assert rows[2][2] == "1"

    with (tmp_path / "spectra" / "layer1.weight.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows == [["index", "normalized_sigma"], ["0", "1"], ["1", "1"], ["2", "1"]]
