import itertools
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obslandscape.topology import (ContingencyTable, DiagonalSpectrum, EnumerationCapError,
                                   ExtremeTieWarning, classify_tables, count_tables,
                                   critical_value, enumerate_tables, landscape, max_alignment,
                                   min_alignment, spectrum_from_diagonal, table_distance,
                                   table_from_permutation, tables_from_permutations,
                                   tables_to_json)


def partitions(n, largest=None):
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for k in range(min(n, largest), 0, -1):
        for rest in partitions(n - k, k):
            yield (k,) + rest


def spectrum(mults):
    vals = np.linspace(1.0, 0.1, len(mults)) if len(mults) > 1 else [0.5]
    return DiagonalSpectrum.from_multiplicities(vals, mults)


WORKED = ([0, 0, 0, 1], [0.5, 0.2, 0.2, 0.1])


def test_worked_example_tables():
    _, _, tables = landscape(*WORKED)
    got = [(t.overlaps.tolist(), t.critical_value, t.classification) for t in tables]
    assert got == [
        ([[1, 0], [0, 2], [0, 1]], pytest.approx(0.5, abs=1e-12), "global_max"),
        ([[0, 1], [1, 1], [0, 1]], pytest.approx(0.2, abs=1e-12), "saddle"),
        ([[0, 1], [0, 2], [1, 0]], pytest.approx(0.1, abs=1e-12), "global_min"),
    ]


def test_case_one_tables_and_distances():
    rho = np.eye(8)[0]
    theta = np.array([0, 0, 0.16, 0.16, 0.16, 0.16, 0.16, 0.2])
    _, _, tables = landscape(rho, theta)
    assert [t.overlaps.tolist() for t in tables] == [
        [[1, 0], [0, 5], [0, 2]], [[0, 1], [1, 4], [0, 2]], [[0, 1], [0, 5], [1, 1]]]
    np.testing.assert_allclose([t.critical_value for t in tables], [0.2, 0.16, 0.0], atol=1e-12)
    assert all(table_distance(a, b) == 4 for a, b in itertools.combinations(tables, 2))


def test_spectrum_groups_unsorted_positions():
    s = spectrum_from_diagonal([0.0, 0.3, 0.0, 0.7])
    assert s.distinct_values == (0.7, 0.3, 0.0)
    assert s.groups == ((3,), (1,), (0, 2))
    np.testing.assert_array_equal(s.labels(), [2, 1, 2, 0])


def test_spectrum_merges_near_equal_values():
    s = spectrum_from_diagonal([0.2, 0.2 + 1e-13, 0.1])
    assert s.multiplicities == (2, 1)


def test_spectrum_rejects_ambiguous_gap():
    with pytest.raises(ValueError, match="ambiguous"):
        spectrum_from_diagonal([0.2, 0.2 + 5e-9, 0.1])


@pytest.mark.parametrize("rows, cols, expected", [
    ((1, 1, 1), (1, 1, 1), 6),
    ((2, 1), (1, 2), 2),
    ((1,) * 8, (1,) * 8, math.factorial(8)),
    ((1,) * 8, (1, 7), 8),
    ((2, 2), (2, 2), 3),
    ((3, 3), (2, 2, 2), 7),
])
def test_count_tables(rows, cols, expected):
    assert count_tables(rows, cols) == expected


@pytest.mark.parametrize("n", range(1, 7))
def test_lattice_enumeration_equals_permutation_oracle(n):
    for rows in partitions(n):
        for cols in partitions(n):
            rs, ts = spectrum(cols), spectrum(rows)
            got = {t.key for t in enumerate_tables(rs, ts)}
            assert got == tables_from_permutations(rs, ts), (rows, cols)
            assert len(got) == count_tables(rows, cols)


def test_values_sorted_and_indexed():
    rs = spectrum((2, 1, 1))
    ts = spectrum((1, 2, 1))
    tables = enumerate_tables(rs, ts)
    vals = [t.critical_value for t in tables]
    assert vals == sorted(vals, reverse=True)
    assert [t.index for t in tables] == list(range(len(tables)))


def test_alignments_are_extreme_values():
    rng = np.random.default_rng(4)
    for _ in range(20):
        rho = rng.dirichlet(np.ones(5))
        theta = rng.normal(size=5)
        rs, ts, tables = landscape(rho, theta)
        vals = [t.critical_value for t in tables]
        assert critical_value(max_alignment(rs, ts), rs, ts) == pytest.approx(max(vals))
        assert critical_value(min_alignment(rs, ts), rs, ts) == pytest.approx(min(vals))
        classes = [t.classification for t in tables]
        assert classes.count("global_max") == classes.count("global_min") == 1


def test_critical_value_from_permutation_matches_direct_sum():
    rng = np.random.default_rng(2)
    rho, theta = rng.dirichlet(np.ones(6)), rng.normal(size=6)
    rs, ts = spectrum_from_diagonal(rho), spectrum_from_diagonal(theta)
    for perm in itertools.islice(itertools.permutations(range(6)), 0, 720, 37):
        c = table_from_permutation(perm, rs, ts)
        direct = sum(theta[perm[k]] * rho[k] for k in range(6))
        assert critical_value(c, rs, ts) == pytest.approx(direct, abs=1e-14)


def test_full_rank_saddle_counts():
    rng = np.random.default_rng(0)
    theta = rng.dirichlet(np.ones(8))
    _, _, case2 = landscape(np.eye(8)[0], theta)
    assert sum(t.classification == "saddle" for t in case2) == 6
    rs = DiagonalSpectrum.from_multiplicities(np.linspace(1, 0.1, 8), (1,) * 8)
    ts = DiagonalSpectrum.from_multiplicities(np.linspace(0.9, 0.2, 8), (1,) * 8)
    tables = classify_tables(enumerate_tables(rs, ts), rs, ts)
    assert sum(t.classification == "saddle" for t in tables) == 40318


def test_cap_is_enforced():
    rs = spectrum((1,) * 7)
    with pytest.raises(EnumerationCapError):
        enumerate_tables(rs, rs, cap=100)


def test_critical_value_rejects_wrong_margins():
    rs, ts = spectrum((1, 2)), spectrum((2, 1))
    with pytest.raises(ValueError):
        critical_value(np.array([[1, 1], [1, 0]]), rs, ts)


def test_tie_with_extreme_warns():
    # exact ties are impossible for distinct values; a near-tie below rel_tol is flagged
    rho = [0.5 + 5e-6, 0.5 - 5e-6, 0.0]
    theta = [1.0, 1.0 - 2e-8, 0.0]
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        landscape(rho, theta)
    assert any(issubclass(x.category, ExtremeTieWarning) for x in w)


def test_json_round_trip():
    _, _, tables = landscape(*WORKED)
    back = [ContingencyTable.from_dict(d) for d in json.loads(tables_to_json(tables))]
    assert back == tables


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=4),
       st.lists(st.integers(1, 3), min_size=1, max_size=4))
def test_table_distance_even_and_bounded(rows, cols):
    n = sum(rows)
    if sum(cols) != n:
        cols = cols[:-1] + [cols[-1] + n - sum(cols)] if sum(cols) < n else [n]
    tables = enumerate_tables(spectrum(tuple(cols)), spectrum(tuple(rows)))
    for a, b in itertools.combinations(tables[:12], 2):
        d = table_distance(a, b)
        assert d % 2 == 0 and 0 < d <= 2 * n
        assert a.overlaps.sum(axis=1).tolist() == list(rows)
