"""
Kinematic distance from a propagator to each critical submanifold.

The propagator is cut into blocks ``U_jk`` whose rows are the positions of
the ``j``-th distinct eigenvalue of theta and whose columns are the positions
of the ``k``-th distinct eigenvalue of rho0. ``U`` lies on the submanifold of
table ``C`` iff the leading ``c_jk`` singular values of every block are 1 and
the rest are 0, which gives the distance

    D(U) = 2 * sum_jk sum_{l <= c_jk} (1 - sigma_jkl).

Only singular values are needed, so a single pass over the blocks serves
every table.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .topology import ContingencyTable, DiagonalSpectrum

__all__ = [
    "BlockSingularValues",
    "block_singular_values",
    "critical_distance",
    "critical_distance_two_sum",
    "all_distances",
    "TableSet",
]

UNITARITY_TOL = 1e-8


@dataclass(frozen=True)
class BlockSingularValues:
    """Descending singular values of every ``(j, k)`` block of a propagator."""

    sigma: tuple[tuple[np.ndarray, ...], ...]  # sigma[j][k], length min(b_j, a_k)
    n_levels: int

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.sigma), len(self.sigma[0])

    def padded_cumsum(self) -> np.ndarray:
        """``out[j, k, c] = sum_{l < c} sigma_jkl`` for ``c = 0..N``.

        Entries past the block size repeat the full block sum; valid tables
        never index there.
        """
        q, r = self.shape
        out = np.zeros((q, r, self.n_levels + 1))
        for j in range(q):
            for k in range(r):
                s = np.cumsum(self.sigma[j][k])
                out[j, k, 1:s.size + 1] = s
                if s.size:
                    out[j, k, s.size + 1:] = s[-1]
        return out


def _unitarity_defect(u: np.ndarray) -> float:
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0])))


def block_singular_values(u, rho_spec: DiagonalSpectrum, theta_spec: DiagonalSpectrum,
                          check: bool = True) -> BlockSingularValues:
    u = np.asarray(u)
    n = u.shape[0]
    if u.shape != (n, n) or rho_spec.total_dim != n or theta_spec.total_dim != n:
        raise ValueError(f"unitary of shape {u.shape} does not match spectra of dimension "
                         f"{rho_spec.total_dim}/{theta_spec.total_dim}")
    if check:
        defect = _unitarity_defect(u)
        if defect > UNITARITY_TOL:
            raise ValueError(f"matrix is not unitary (defect {defect:.2e})")
    rows = [np.asarray(g) for g in theta_spec.groups]
    cols = [np.asarray(g) for g in rho_spec.groups]
    sigma = []
    for rj in rows:
        line = []
        for ck in cols:
            block = u[np.ix_(rj, ck)]
            if block.shape == (1, 1):
                line.append(np.abs(block).reshape(1))
            else:
                line.append(np.linalg.svd(block, compute_uv=False))
        sigma.append(tuple(line))
    return BlockSingularValues(tuple(sigma), n)


def _overlaps(table) -> np.ndarray:
    return table.overlaps if isinstance(table, ContingencyTable) else np.asarray(table)


def _check_table(sv: BlockSingularValues, c: np.ndarray):
    if c.shape != sv.shape:
        raise ValueError(f"table shape {c.shape} does not match block layout {sv.shape}")
    for j in range(c.shape[0]):
        for k in range(c.shape[1]):
            if c[j, k] > sv.sigma[j][k].size:
                raise ValueError(f"overlap c[{j},{k}]={c[j, k]} exceeds block rank "
                                 f"{sv.sigma[j][k].size}; table is corrupted")


def critical_distance(sv: BlockSingularValues, table) -> float:
    c = _overlaps(table)
    _check_table(sv, c)
    total = 0.0
    for j in range(c.shape[0]):
        for k in range(c.shape[1]):
            total += np.sum(1.0 - sv.sigma[j][k][:c[j, k]])
    return 2.0 * float(total)


def critical_distance_two_sum(sv: BlockSingularValues, table) -> float:
    """Distance in its unsimplified form: leading values against 1, the rest against 0."""
    c = _overlaps(table)
    _check_table(sv, c)
    total = 0.0
    for j in range(c.shape[0]):
        for k in range(c.shape[1]):
            s = sv.sigma[j][k]
            total += np.sum((1.0 - s[:c[j, k]]) ** 2) + np.sum(s[c[j, k]:] ** 2)
    return float(total)


class TableSet:
    """Tables packed for vectorized distance evaluation.

    When every eigenvalue of both operators is nondegenerate each block is a
    single entry, and the tables are permutations; distances then come
    straight from ``|u_jk|`` without any SVD.
    """

    def __init__(self, tables: Sequence[ContingencyTable], rho_spec: DiagonalSpectrum,
                 theta_spec: DiagonalSpectrum):
        if not tables:
            raise ValueError("empty table set")
        self.rho_spec = rho_spec
        self.theta_spec = theta_spec
        self.n_levels = rho_spec.total_dim
        mats = np.stack([_overlaps(t) for t in tables])
        q, r = theta_spec.n_distinct, rho_spec.n_distinct
        if mats.shape[1:] != (q, r):
            raise ValueError(f"tables of shape {mats.shape[1:]} do not match spectra ({q}, {r})")
        self.size = len(mats)
        self.nondegenerate = q == r == self.n_levels
        if self.nondegenerate:
            # row of theta group j matched to column k: permutation form
            cols = mats.argmax(axis=2)
            self._rows = np.asarray([g[0] for g in theta_spec.groups])
            self._cols = np.asarray([g[0] for g in rho_spec.groups])[cols]
        else:
            jj, kk = np.meshgrid(np.arange(q), np.arange(r), indexing="ij")
            self._flat_index = (jj * r + kk)[None] * (self.n_levels + 1) + mats

    def distances(self, u, check: bool = True) -> np.ndarray:
        u = np.asarray(u)
        if self.nondegenerate:
            if check:
                defect = _unitarity_defect(u)
                if defect > UNITARITY_TOL:
                    raise ValueError(f"matrix is not unitary (defect {defect:.2e})")
            a = np.abs(u)
            return 2.0 * (self.n_levels - a[self._rows[None, :], self._cols].sum(axis=1))
        sv = block_singular_values(u, self.rho_spec, self.theta_spec, check=check)
        cs = sv.padded_cumsum().reshape(-1)
        return 2.0 * (self.n_levels - cs[self._flat_index].sum(axis=(1, 2)))


def all_distances(u, tables: Sequence[ContingencyTable], rho_spec: DiagonalSpectrum,
                  theta_spec: DiagonalSpectrum) -> np.ndarray:
    """Distance to every table, in table order, from one pass over the blocks."""
    return TableSet(tables, rho_spec, theta_spec).distances(u)
