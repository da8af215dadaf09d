"""
Compiled objective-and-gradient kernel.

Same mathematics as the numpy path in :mod:`obslandscape.dynamics`, fused
into two sweeps over the intervals:

* forward: ``X_l = V_l^T U(t_{l-1})`` and ``U(t_l) = V_l diag(phase) X_l``,
  which never forms the step propagator;
* backward-free gradient: with ``B = rho0 A`` and ``A = U_T^dag theta U_T``,
  ``Q_l = X_l B X_l^dag`` is a sum over the nonzero eigenvalues of ``rho0``
  only, so pure initial states cost ``O(N^2)`` per interval.

Small symmetric eigenproblems are solved in place by Householder
tridiagonalization and implicit QL (the EISPACK tred2/tql2 pair), which
avoids the per-call LAPACK overhead that dominates for ``N <= 16``.
"""
from __future__ import annotations

from math import hypot, sqrt

import numpy as np
from numba import njit

# below this |dt (w_b - w_a)| the divided difference uses its Taylor series
_SERIES_CUTOFF = 1e-3


# Householder reduction of the symmetric matrix in ``V`` to tridiagonal form.
# On exit ``V`` holds the orthogonal transform, ``d`` the diagonal and
# ``e[1:]`` the subdiagonal.
@njit(cache=True)
def tred2(V, d, e):
    n = V.shape[0]
    for j in range(n):
        d[j] = V[n - 1, j]
    for i in range(n - 1, 0, -1):
        scale = 0.0
        h = 0.0
        for k in range(i):
            scale += abs(d[k])
        if scale == 0.0:
            e[i] = d[i - 1]
            for j in range(i):
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
                V[j, i] = 0.0
        else:
            for k in range(i):
                d[k] /= scale
                h += d[k] * d[k]
            f = d[i - 1]
            g = sqrt(h)
            if f > 0:
                g = -g
            e[i] = scale * g
            h -= f * g
            d[i - 1] = f - g
            for j in range(i):
                e[j] = 0.0
            for j in range(i):
                f = d[j]
                V[j, i] = f
                g = e[j] + V[j, j] * f
                for k in range(j + 1, i):
                    g += V[k, j] * d[k]
                    e[k] += V[k, j] * f
                e[j] = g
            f = 0.0
            for j in range(i):
                e[j] /= h
                f += e[j] * d[j]
            hh = f / (h + h)
            for j in range(i):
                e[j] -= hh * d[j]
            for j in range(i):
                f = d[j]
                g = e[j]
                for k in range(j, i):
                    V[k, j] -= f * e[k] + g * d[k]
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
        d[i] = h
    # accumulate the transformations
    for i in range(n - 1):
        V[n - 1, i] = V[i, i]
        V[i, i] = 1.0
        h = d[i + 1]
        if h != 0.0:
            for k in range(i + 1):
                d[k] = V[k, i + 1] / h
            for j in range(i + 1):
                g = 0.0
                for k in range(i + 1):
                    g += V[k, i + 1] * V[k, j]
                for k in range(i + 1):
                    V[k, j] -= g * d[k]
        for k in range(i + 1):
            V[k, i + 1] = 0.0
    for j in range(n):
        d[j] = V[n - 1, j]
        V[n - 1, j] = 0.0
    V[n - 1, n - 1] = 1.0
    e[0] = 0.0


# Implicit QL iterations on the tridiagonal (d, e); rotations accumulate into V.
@njit(cache=True)
def tql2(V, d, e):
    n = V.shape[0]
    for i in range(1, n):
        e[i - 1] = e[i]
    e[n - 1] = 0.0
    f = 0.0
    eps = 2.0**-52
    # deflate against the norm of the whole matrix; a running norm lets
    # subnormal couplings next to a zero diagonal start spurious iterations
    tst1 = 0.0
    for i in range(n):
        tst1 = max(tst1, abs(d[i]) + abs(e[i]))
    for l in range(n):
        m = l
        while m < n:
            if abs(e[m]) <= eps * tst1:
                break
            m += 1
        if m > l:
            while True:
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                for i in range(l + 2, n):
                    d[i] -= h
                f += h
                p = d[m]
                c = c2 = c3 = 1.0
                el1 = e[l + 1]
                s = s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    for k in range(n):
                        h = V[k, i + 1]
                        V[k, i + 1] = s * V[k, i] + c * h
                        V[k, i] = c * V[k, i] - s * h
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if not abs(e[l]) > eps * tst1:
                    break
        d[l] += f
        e[l] = 0.0


@njit(cache=True)
def symmetric_eigh(h, w, v, e):
    """Eigenvalues into ``w`` and eigenvectors (columns) into ``v``; unsorted."""
    v[:, :] = h
    tred2(v, w, e)
    tql2(v, w, e)


@njit(cache=True)
def _phi(ph_a, ph_b, th):
    """``(exp(-i th) - 1) / (-i th)`` given ``exp(-i th) = ph_b * conj(ph_a)``."""
    if abs(th) < _SERIES_CUTOFF:
        t2 = th * th
        return complex(1.0 - t2 / 6.0, -th / 2.0 + th * t2 / 24.0)
    e = ph_b * np.conj(ph_a)
    return (e - 1.0) / complex(0.0, -th)


@njit(cache=True)
def evaluate_kernel(h0, mu, eps, dt, rho, theta, support, want_gradient):
    n = h0.size
    L = eps.size
    W = np.empty((L, n))
    V = np.empty((L, n, n))
    h = np.empty((n, n))
    e = np.empty(n)
    for l in range(L):
        for i in range(n):
            for j in range(n):
                h[i, j] = -eps[l] * mu[i, j]
            h[i, i] += h0[i]
        symmetric_eigh(h, W[l], V[l], e)

    X = np.empty((L, n, n), dtype=np.complex128)
    P = np.zeros((n, n), dtype=np.complex128)
    for i in range(n):
        P[i, i] = 1.0
    ph = np.empty((L, n), dtype=np.complex128)
    for l in range(L):
        Vl = V[l]
        Xl = X[l]
        for a in range(n):
            ph[l, a] = np.exp(complex(0.0, -dt * W[l, a]))
            for j in range(n):
                acc = 0j
                for k in range(n):
                    acc += Vl[k, a] * P[k, j]
                Xl[a, j] = acc
        for i in range(n):
            for j in range(n):
                acc = 0j
                for a in range(n):
                    acc += Vl[i, a] * ph[l, a] * Xl[a, j]
                P[i, j] = acc

    J = 0.0
    for i in range(n):
        for k in range(n):
            z = P[i, k]
            J += theta[i] * (z.real * z.real + z.imag * z.imag) * rho[k]
    grad = np.zeros(L)
    if not want_gradient:
        return J, grad, P

    r = support.size
    # columns k of A = U^dag theta U for k in the support of rho0
    Acol = np.empty((r, n), dtype=np.complex128)
    for s in range(r):
        k = support[s]
        for j in range(n):
            acc = 0j
            for i in range(n):
                acc += np.conj(P[i, j]) * theta[i] * P[i, k]
            Acol[s, j] = acc

    Q = np.empty((n, n), dtype=np.complex128)
    wv = np.empty(n, dtype=np.complex128)
    tmp = np.empty((n, n))
    M = np.empty((n, n))
    for l in range(L):
        Xl = X[l]
        Vl = V[l]
        for a in range(n):
            for b in range(n):
                Q[a, b] = 0j
        for s in range(r):
            k = support[s]
            for b in range(n):
                acc = 0j
                for j in range(n):
                    acc += Xl[b, j] * Acol[s, j]
                wv[b] = np.conj(acc) * rho[k]
            for a in range(n):
                xa = Xl[a, k]
                for b in range(n):
                    Q[a, b] += xa * wv[b]
        for i in range(n):
            for b in range(n):
                acc = 0.0
                for j in range(n):
                    acc += mu[i, j] * Vl[j, b]
                tmp[i, b] = acc
        for a in range(n):
            for b in range(n):
                acc = 0.0
                for i in range(n):
                    acc += Vl[i, a] * tmp[i, b]
                M[a, b] = acc
        g = 0.0
        for a in range(n):
            for b in range(n):
                th = dt * (W[l, b] - W[l, a])
                z = Q[b, a] * _phi(ph[l, a], ph[l, b], th) * M[a, b]
                # Re(z * i dt) = -dt Im z
                g -= dt * z.imag
        grad[l] = 2.0 * g
    return J, grad, P
