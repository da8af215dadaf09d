"""
Critical topology of the observable landscape.

Critical submanifolds are labelled by contingency tables: ``q x r``
nonnegative integer matrices whose entry ``c_jk`` counts how many positions
pair the ``j``-th distinct eigenvalue of ``theta`` with the ``k``-th distinct
eigenvalue of ``rho0``. Row sums are the ``theta`` multiplicities, column sums
the ``rho0`` multiplicities, and every point of the submanifold has objective
value ``sum_jk c_jk o_j p_k``.
"""
from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Sequence

import numpy as np

__all__ = [
    "DiagonalSpectrum",
    "ContingencyTable",
    "EnumerationCapError",
    "ExtremeTieWarning",
    "spectrum_from_diagonal",
    "count_tables",
    "enumerate_tables",
    "classify_tables",
    "critical_value",
    "table_distance",
    "table_from_permutation",
    "tables_from_permutations",
    "landscape",
    "max_alignment",
    "min_alignment",
]

DEFAULT_CAP = 10**7

Classification = Literal["global_max", "global_min", "saddle"]


class EnumerationCapError(RuntimeError):
    """The number of tables exceeds the configured enumeration cap."""


class ExtremeTieWarning(UserWarning):
    """A saddle table shares the global maximum or minimum value."""


@dataclass(frozen=True)
class DiagonalSpectrum:
    """Distinct eigenvalues of a diagonal operator, sorted descending.

    ``groups[k]`` holds the diagonal positions carrying ``distinct_values[k]``;
    the positions matter for the block partition of a propagator, while the
    topology only needs values and multiplicities.
    """

    distinct_values: tuple[float, ...]
    multiplicities: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        vals = self.distinct_values
        if len(vals) != len(self.multiplicities) or len(vals) != len(self.groups):
            raise ValueError("values, multiplicities and groups must have equal length")
        if any(a <= b for a, b in zip(vals, vals[1:])):
            raise ValueError("distinct values must be strictly descending")
        if any(m != len(g) or m < 1 for m, g in zip(self.multiplicities, self.groups)):
            raise ValueError("multiplicities must match group sizes")
        flat = sorted(i for g in self.groups for i in g)
        if flat != list(range(len(flat))):
            raise ValueError("groups must partition range(N)")

    @property
    def total_dim(self) -> int:
        return sum(self.multiplicities)

    @property
    def n_distinct(self) -> int:
        return len(self.distinct_values)

    def expanded(self) -> np.ndarray:
        """All N eigenvalues, sorted descending."""
        return np.repeat(self.distinct_values, self.multiplicities)

    def labels(self) -> np.ndarray:
        """Group index of every diagonal position."""
        lab = np.empty(self.total_dim, dtype=int)
        for k, g in enumerate(self.groups):
            lab[list(g)] = k
        return lab

    @classmethod
    def from_multiplicities(cls, values: Sequence[float], multiplicities: Sequence[int]):
        """Spectrum laid out in sorted block order (position order = value order)."""
        groups, start = [], 0
        for m in multiplicities:
            groups.append(tuple(range(start, start + int(m))))
            start += int(m)
        return cls(tuple(float(v) for v in values), tuple(int(m) for m in multiplicities), tuple(groups))


@dataclass(frozen=True)
class ContingencyTable:
    overlaps: np.ndarray
    critical_value: float = float("nan")
    classification: Classification | None = None
    index: int = -1

    def __post_init__(self):
        c = np.array(self.overlaps, dtype=np.int64, copy=True)
        if c.ndim != 2 or np.any(c < 0):
            raise ValueError("overlaps must be a 2-D nonnegative integer matrix")
        c.setflags(write=False)
        object.__setattr__(self, "overlaps", c)

    @property
    def key(self) -> tuple:
        return tuple(self.overlaps.ravel().tolist())

    def to_dict(self) -> dict:
        return {
            "overlaps": self.overlaps.tolist(),
            "value": self.critical_value,
            "class": self.classification,
            "index": self.index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ContingencyTable":
        return cls(np.asarray(data["overlaps"]), float(data["value"]), data.get("class"),
                   int(data.get("index", -1)))

    def __eq__(self, other):
        if not isinstance(other, ContingencyTable):
            return NotImplemented
        return (self.key == other.key and self.overlaps.shape == other.overlaps.shape
                and self.classification == other.classification and self.index == other.index)

    def __hash__(self):
        return hash((self.overlaps.shape, self.key, self.classification, self.index))


def spectrum_from_diagonal(diagonal, tol: float = 1e-9) -> DiagonalSpectrum:
    """Group numerically equal diagonal entries into distinct eigenvalues.

    Sorted neighbours closer than ``tol`` are chained into one group. A gap
    in ``(tol, 10 tol)`` is treated as ambiguous and rejected.
    """
    x = np.asarray(diagonal, dtype=float).reshape(-1)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise ValueError("diagonal must be a nonempty finite vector")
    if not tol > 0:
        raise ValueError("tol must be positive")
    order = np.argsort(-x, kind="stable")
    xs = x[order]
    gaps = xs[:-1] - xs[1:]
    ambiguous = (gaps > tol) & (gaps < 10 * tol)
    if np.any(ambiguous):
        g = gaps[ambiguous][0]
        raise ValueError(f"ambiguous degeneracy: eigenvalue gap {g:.3e} lies within ({tol:g}, {10 * tol:g})")
    values, groups = [], []
    start = 0
    for i in range(1, xs.size + 1):
        if i == xs.size or gaps[i - 1] > tol:
            block = order[start:i]
            values.append(float(np.mean(xs[start:i])))
            groups.append(tuple(sorted(int(j) for j in block)))
            start = i
    return DiagonalSpectrum(tuple(values), tuple(len(g) for g in groups), tuple(groups))


def count_tables(rows: Sequence[int], cols: Sequence[int]) -> int:
    """Number of nonnegative integer matrices with the given margins.

    Dynamic programming over rows on the multiset of remaining column
    capacities; exact and cheap for the margins met here.
    """
    rows = [int(r) for r in rows]
    cols = tuple(int(c) for c in cols)
    if sum(rows) != sum(cols):
        return 0
    states = {tuple(sorted(cols)): 1}
    for r in rows:
        nxt: dict[tuple, int] = {}
        for caps, ways in states.items():
            for fill in _compositions(r, caps):
                rem = tuple(sorted(c - f for c, f in zip(caps, fill)))
                nxt[rem] = nxt.get(rem, 0) + ways
        states = nxt
    return sum(states.values())


def _compositions(total: int, caps: Sequence[int]):
    """Vectors ``f`` with ``0 <= f_k <= caps_k`` summing to ``total``."""
    n = len(caps)
    tail = [0] * (n + 1)
    for k in range(n - 1, -1, -1):
        tail[k] = tail[k + 1] + caps[k]
    fill = [0] * n

    def rec(k, left):
        if k == n - 1:
            if left <= caps[k]:
                fill[k] = left
                yield tuple(fill)
            return
        lo = max(0, left - tail[k + 1])
        for f in range(min(caps[k], left), lo - 1, -1):
            fill[k] = f
            yield from rec(k + 1, left - f)

    if total <= tail[0]:
        yield from rec(0, total)


def _lattice_points(rows: Sequence[int], cols: Sequence[int]) -> Iterable[np.ndarray]:
    q, r = len(rows), len(cols)
    table = np.zeros((q, r), dtype=np.int64)

    def rec(j, caps):
        if j == q - 1:
            table[j] = caps
            yield table.copy()
            return
        for fill in _compositions(rows[j], caps):
            table[j] = fill
            yield from rec(j + 1, [c - f for c, f in zip(caps, fill)])

    if q == 0:
        return
    yield from rec(0, list(cols))


def critical_value(table: ContingencyTable | np.ndarray, rho_spec: DiagonalSpectrum,
                   theta_spec: DiagonalSpectrum) -> float:
    """``sum_jk c_jk o_j p_k`` for a table with rows over theta and columns over rho0."""
    c = table.overlaps if isinstance(table, ContingencyTable) else np.asarray(table)
    if c.shape != (theta_spec.n_distinct, rho_spec.n_distinct):
        raise ValueError(f"table shape {c.shape} does not match spectra "
                         f"({theta_spec.n_distinct}, {rho_spec.n_distinct})")
    if (tuple(c.sum(axis=1)) != theta_spec.multiplicities
            or tuple(c.sum(axis=0)) != rho_spec.multiplicities):
        raise ValueError("table margins do not match the spectra multiplicities")
    o = np.asarray(theta_spec.distinct_values)
    p = np.asarray(rho_spec.distinct_values)
    return float(o @ c @ p)


def _northwest_corner(rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
    rows, cols = list(rows), list(cols)
    c = np.zeros((len(rows), len(cols)), dtype=np.int64)
    j = k = 0
    while j < len(rows) and k < len(cols):
        f = min(rows[j], cols[k])
        c[j, k] = f
        rows[j] -= f
        cols[k] -= f
        if rows[j] == 0:
            j += 1
        if cols[k] == 0:
            k += 1
    return c


def max_alignment(rho_spec: DiagonalSpectrum, theta_spec: DiagonalSpectrum) -> np.ndarray:
    """Table pairing both spectra in descending order."""
    return _northwest_corner(theta_spec.multiplicities, rho_spec.multiplicities)


def min_alignment(rho_spec: DiagonalSpectrum, theta_spec: DiagonalSpectrum) -> np.ndarray:
    """Table pairing theta descending with rho0 ascending."""
    return _northwest_corner(theta_spec.multiplicities, rho_spec.multiplicities[::-1])[:, ::-1]


def enumerate_tables(rho_spec: DiagonalSpectrum, theta_spec: DiagonalSpectrum,
                     cap: int = DEFAULT_CAP) -> list[ContingencyTable]:
    """Every contingency table for the pair of spectra, with critical values.

    Ordered by descending critical value, ties broken by descending
    lexicographic order of the flattened overlaps; ``index`` is the position
    in that order.
    """
    if rho_spec.total_dim != theta_spec.total_dim:
        raise ValueError(f"spectra dimensions differ: {rho_spec.total_dim} vs {theta_spec.total_dim}")
    rows, cols = theta_spec.multiplicities, rho_spec.multiplicities
    n_tables = count_tables(rows, cols)
    if n_tables > cap:
        raise EnumerationCapError(f"{n_tables} contingency tables exceed the cap of {cap}")
    mats = np.array(list(_lattice_points(rows, cols)), dtype=np.int64)
    o = np.asarray(theta_spec.distinct_values)
    p = np.asarray(rho_spec.distinct_values)
    values = np.einsum("j,ijk,k->i", o, mats, p)
    flat = mats.reshape(len(mats), -1)
    # np.lexsort: last key is primary
    order = np.lexsort(tuple(-flat[:, i] for i in range(flat.shape[1] - 1, -1, -1)) + (-values,))
    return [ContingencyTable(mats[i], float(values[i]), None, pos) for pos, i in enumerate(order)]


def classify_tables(tables: list[ContingencyTable], rho_spec: DiagonalSpectrum | None = None,
                    theta_spec: DiagonalSpectrum | None = None,
                    rel_tol: float = 1e-12) -> list[ContingencyTable]:
    """Label the rearrangement alignments as global extrema, the rest as saddles.

    Without spectra the extremes are the first and last tables by value.
    Raises :class:`ExtremeTieWarning` (as a warning) when a saddle's value
    equals an extreme value within ``rel_tol``.
    """
    if not tables:
        raise ValueError("no tables to classify")
    values = np.array([t.critical_value for t in tables])
    if rho_spec is not None and theta_spec is not None:
        kmax = max_alignment(rho_spec, theta_spec).ravel().tolist()
        kmin = min_alignment(rho_spec, theta_spec).ravel().tolist()
        keys = [list(t.key) for t in tables]
        imax, imin = keys.index(kmax), keys.index(kmin)
    else:
        imax, imin = int(np.argmax(values)), int(np.argmin(values))
    jmax, jmin = values[imax], values[imin]
    scale = max(abs(jmax), abs(jmin), 1.0)
    out = []
    for i, t in enumerate(tables):
        if i == imax:
            cls = "global_max"
        elif i == imin:
            cls = "global_min"
        else:
            cls = "saddle"
            v = t.critical_value
            if abs(v - jmax) <= rel_tol * scale or abs(v - jmin) <= rel_tol * scale:
                warnings.warn(f"saddle table {t.index} ties an extreme value ({v!r})",
                              ExtremeTieWarning, stacklevel=2)
        out.append(replace(t, classification=cls))
    return out


def table_distance(a: ContingencyTable, b: ContingencyTable) -> int:
    """``sum_jk |a_jk - b_jk|``; even and at most ``2N`` for equal margins."""
    ca = a.overlaps if isinstance(a, ContingencyTable) else np.asarray(a)
    cb = b.overlaps if isinstance(b, ContingencyTable) else np.asarray(b)
    if ca.shape != cb.shape:
        raise ValueError(f"table shapes differ: {ca.shape} vs {cb.shape}")
    return int(np.abs(ca - cb).sum())


def table_from_permutation(perm: Sequence[int], rho_spec: DiagonalSpectrum,
                           theta_spec: DiagonalSpectrum) -> np.ndarray:
    """Overlaps induced by the permutation matrix ``Pi[perm[n], n] = 1``.

    Position ``n`` of ``rho0`` is moved to position ``perm[n]``, where it
    meets the ``theta`` eigenvalue stored there.
    """
    rl, tl = rho_spec.labels(), theta_spec.labels()
    c = np.zeros((theta_spec.n_distinct, rho_spec.n_distinct), dtype=np.int64)
    np.add.at(c, (tl[np.asarray(perm)], rl), 1)
    return c


def tables_from_permutations(rho_spec: DiagonalSpectrum, theta_spec: DiagonalSpectrum) -> set[tuple]:
    """Distinct tables induced by all ``N!`` permutations (brute force)."""
    n = rho_spec.total_dim
    if theta_spec.total_dim != n:
        raise ValueError("spectra dimensions differ")
    rl, tl = rho_spec.labels(), theta_spec.labels()
    q, r = theta_spec.n_distinct, rho_spec.n_distinct
    seen = set()
    for perm in itertools.permutations(range(n)):
        c = np.zeros((q, r), dtype=np.int64)
        np.add.at(c, (tl[list(perm)], rl), 1)
        seen.add(tuple(c.ravel().tolist()))
    return seen


def landscape(rho0, theta, tol: float = 1e-9, cap: int = DEFAULT_CAP):
    """Spectra plus classified tables for a pair of diagonal operators."""
    rho_spec = spectrum_from_diagonal(rho0, tol)
    theta_spec = spectrum_from_diagonal(theta, tol)
    tables = classify_tables(enumerate_tables(rho_spec, theta_spec, cap), rho_spec, theta_spec)
    return rho_spec, theta_spec, tables


def tables_to_json(tables: Sequence[ContingencyTable]) -> str:
    return json.dumps([t.to_dict() for t in tables])

