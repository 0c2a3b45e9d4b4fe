"""Finite-dimensional operator algebra.

Operators come in five representations:

* ``dense``: a complex matrix,
* ``diagonal``: multiplication by a complex sequence,
* ``fourier_diagonal``: multiplication by a symbol in the discrete Fourier basis of a
  periodic grid (optionally matrix valued, for internal degrees of freedom),
* ``sparse``: a scipy CSR matrix (banded lattice operators, shifts, coins),
* ``composite``: a lazy linear combination of products of the above.

The last two are matrix-free conveniences; any operator can be densified with
:meth:`Operator.to_dense` when the dimension allows it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10
CLUSTER_TOL = 1e-8
DENSE_CAP = 4096
TRIDIAGONAL_CAP = 8192
FOURIER_CAP = 2**20
LAZY_THRESHOLD = 1024

REPRESENTATIONS = ("dense", "diagonal", "fourier_diagonal", "sparse", "composite")


class FlagError(ValueError):
    """Raised when an asserted hermitian/unitary flag does not hold."""


def _freeze(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


class Operator:
    """Linear map on ``C^dim``.

    Build instances with the ``make_*`` functions or through operator algebra
    (``@``, ``+``, ``-``, scalar ``*``); the constructor itself performs no checks.
    """

    __slots__ = ("dim", "representation", "data", "grid", "block", "hermitian", "unitary")
    __array_ufunc__ = None

    def __init__(self, dim, representation, data, *, grid=None, block=1,
                 hermitian=False, unitary=False):
        self.dim = int(dim)
        self.representation = representation
        self.data = data
        self.grid = grid
        self.block = block
        self.hermitian = bool(hermitian)
        self.unitary = bool(unitary)

    def __repr__(self):
        flags = [n for n, f in (("hermitian", self.hermitian), ("unitary", self.unitary)) if f]
        return f"Operator(dim={self.dim}, {self.representation}{', ' if flags else ''}{', '.join(flags)})"

    # application -----------------------------------------------------------------

    def apply(self, v):
        """Apply to a vector of shape ``(dim,)`` or a block of columns ``(dim, k)``."""
        v = np.asarray(v)
        if v.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: operator {self.dim}, vector {v.shape[0]}")
        rep = self.representation
        if rep == "dense":
            if np.iscomplexobj(v):
                return _real_aware_product(self.data, v)
            return self.data @ v
        if rep == "diagonal":
            return self.data * v if v.ndim == 1 else self.data[:, None] * v
        if rep == "sparse":
            return self.data @ v
        if rep == "fourier_diagonal":
            return _fourier_apply(self.data, self.grid, self.block, v)
        out = np.zeros(v.shape, dtype=complex)
        for coef, factors in self.data:
            w = v
            for f in reversed(factors):
                w = f.apply(w)
            out = out + coef * w
        return out

    def __matmul__(self, other):
        if isinstance(other, Operator):
            return _compose(self, other)
        if isinstance(other, StateVector):
            return StateVector(self.apply(other.entries), other.label)
        return self.apply(other)

    def __add__(self, other):
        if not isinstance(other, Operator):
            return NotImplemented
        return _add(self, other)

    def __sub__(self, other):
        if not isinstance(other, Operator):
            return NotImplemented
        return _add(self, -other)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        c = complex(c)
        herm = self.hermitian and c.imag == 0
        unit = self.unitary and abs(abs(c) - 1.0) < 1e-15
        rep = self.representation
        if rep == "composite":
            data = tuple((c * k, fs) for k, fs in self.data)
        elif rep == "sparse":
            data = (self.data * c).tocsr()
        else:
            data = _freeze(self.data * c)
        return Operator(self.dim, rep, data, grid=self.grid, block=self.block,
                        hermitian=herm, unitary=unit)

    __rmul__ = __mul__

    # structure -------------------------------------------------------------------

    def adjoint(self):
        rep = self.representation
        if rep == "dense":
            data = _freeze(self.data.conj().T.copy())
        elif rep == "diagonal":
            data = _freeze(self.data.conj())
        elif rep == "sparse":
            data = self.data.conj().T.tocsr()
        elif rep == "fourier_diagonal":
            s = self.data.conj()
            if self.block > 1:
                s = np.swapaxes(s, -1, -2)
            data = _freeze(s)
        else:
            data = tuple((np.conj(k), tuple(f.adjoint() for f in reversed(fs)))
                         for k, fs in self.data)
        return Operator(self.dim, rep, data, grid=self.grid, block=self.block,
                        hermitian=self.hermitian, unitary=self.unitary)

    @property
    def H(self):
        return self.adjoint()

    def to_dense(self, cap=2 * DENSE_CAP):
        """Dense matrix of the operator (refuses dimensions above ``cap``)."""
        if self.representation == "dense":
            return np.array(self.data, dtype=complex)
        if self.dim > cap:
            raise MemoryError(f"refusing to densify an operator of dimension {self.dim}")
        if self.representation == "diagonal":
            return np.diag(self.data.astype(complex))
        if self.representation == "sparse":
            return self.data.toarray().astype(complex)
        return self.apply(np.eye(self.dim, dtype=complex))

    def to_sparse(self):
        """CSR matrix for diagonal and sparse operators, ``None`` otherwise."""
        if self.representation == "sparse":
            return self.data
        if self.representation == "diagonal":
            return sp.diags(self.data.astype(complex)).tocsr()
        return None

    def diagonal_entries(self):
        """Entries of a diagonal operator (``None`` for other representations)."""
        if self.representation == "diagonal":
            return self.data
        return None

    def column_block(self, cols):
        """Dense ``(dim, len(cols))`` block of selected columns."""
        cols = np.asarray(cols)
        if self.representation == "sparse":
            return self.data[:, cols].toarray().astype(complex)
        if self.representation == "dense":
            return np.array(self.data[:, cols], dtype=complex)
        e = np.zeros((self.dim, cols.size), dtype=complex)
        e[cols, np.arange(cols.size)] = 1.0
        return self.apply(e)


def _fourier_apply(symbol, grid, block, v):
    cols = v.shape[1:]
    k = int(np.prod(cols)) if cols else 1
    g = int(np.prod(grid))
    axes = tuple(range(len(grid)))
    x = v.reshape(grid + (block * k,))
    xf = np.fft.fftn(x, axes=axes).reshape(g, block, k)
    if block == 1:
        yf = symbol.reshape(g, 1, 1) * xf
    else:
        yf = np.einsum("gij,gjk->gik", symbol.reshape(g, block, block), xf)
    y = np.fft.ifftn(yf.reshape(grid + (block * k,)), axes=axes)
    return y.reshape(v.shape)


def _compose(a, b):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch in composition: {a.dim} vs {b.dim}")
    unit = a.unitary and b.unitary
    ra, rb = a.representation, b.representation
    if ra == "dense" and rb == "dense":
        return Operator(a.dim, "dense", _freeze(a.data @ b.data), unitary=unit)
    if ra == "diagonal" and rb == "diagonal":
        return Operator(a.dim, "diagonal", _freeze(a.data * b.data), unitary=unit)
    if ra == rb == "fourier_diagonal" and a.grid == b.grid and a.block == b.block:
        if a.block == 1:
            s = a.data * b.data
        else:
            s = np.einsum("...ij,...jk->...ik", a.data, b.data)
        return Operator(a.dim, "fourier_diagonal", _freeze(s), grid=a.grid, block=a.block,
                        unitary=unit)
    sa, sb = a.to_sparse(), b.to_sparse()
    if sa is not None and sb is not None:
        return Operator(a.dim, "sparse", (sa @ sb).tocsr(), unitary=unit)
    if ra == "dense" and sb is not None:
        return Operator(a.dim, "dense", _freeze(np.asarray(sb.T @ a.data.T).T), unitary=unit)
    if rb == "dense" and sa is not None:
        return Operator(a.dim, "dense", _freeze(np.asarray(sa @ b.data)), unitary=unit)
    terms = [(ka * kb, fa + fb) for ka, fa in _terms(a) for kb, fb in _terms(b)]
    return Operator(a.dim, "composite", tuple(terms), unitary=unit)


def _terms(op):
    if op.representation == "composite":
        return op.data
    return ((1.0 + 0j, (op,)),)


def _add(a, b):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch in sum: {a.dim} vs {b.dim}")
    herm = a.hermitian and b.hermitian
    ra, rb = a.representation, b.representation
    if ra == rb and ra in ("dense", "diagonal"):
        return Operator(a.dim, ra, _freeze(a.data + b.data), hermitian=herm)
    if ra == rb == "fourier_diagonal" and a.grid == b.grid and a.block == b.block:
        return Operator(a.dim, ra, _freeze(a.data + b.data), grid=a.grid, block=a.block,
                        hermitian=herm)
    sa, sb = a.to_sparse(), b.to_sparse()
    if sa is not None and sb is not None:
        return Operator(a.dim, "sparse", (sa + sb).tocsr(), hermitian=herm)
    if ra == "dense" and sb is not None:
        return Operator(a.dim, "dense", _freeze(a.data + sb.toarray()), hermitian=herm)
    if rb == "dense" and sa is not None:
        return Operator(a.dim, "dense", _freeze(sa.toarray() + b.data), hermitian=herm)
    return Operator(a.dim, "composite", tuple(_terms(a)) + tuple(_terms(b)), hermitian=herm)


def commutator(x, y):
    """``xy - yx``."""
    return x @ y - y @ x


def lazy_product(*ops, hermitian=False, unitary=False):
    """Product of operators kept unevaluated (applied factor by factor)."""
    dim = ops[0].dim
    if any(o.dim != dim for o in ops):
        raise ValueError("dimension mismatch in lazy product")
    return Operator(dim, "composite", ((1.0 + 0j, tuple(ops)),), hermitian=hermitian,
                    unitary=unitary)


# constructors ------------------------------------------------------------------


def _check_dense_flags(m, hermitian, unitary):
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if hermitian:
        dev = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if dev > HERMITIAN_TOL * max(scale, 1e-300):
            raise FlagError(f"matrix is not Hermitian (deviation {dev:.3e})")
    if unitary:
        dev = op_norm_dense(m @ m.conj().T - np.eye(m.shape[0]))
        if dev > UNITARY_TOL:
            raise FlagError(f"matrix is not unitary (deviation {dev:.3e})")


def make_dense(entries, hermitian=False, unitary=False):
    """Dense operator with validated flags."""
    m = np.array(entries, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    _check_dense_flags(m, hermitian, unitary)
    return Operator(m.shape[0], "dense", _freeze(m), hermitian=hermitian, unitary=unitary)


def make_diagonal(entries, hermitian=False, unitary=False):
    d = np.array(entries, dtype=complex).ravel()
    if d.size == 0:
        raise ValueError("empty diagonal")
    if hermitian and np.max(np.abs(d.imag)) > HERMITIAN_TOL * max(np.max(np.abs(d)), 1e-300):
        raise FlagError("diagonal entries are not real")
    if unitary and np.max(np.abs(np.abs(d) - 1.0)) > UNITARY_TOL:
        raise FlagError("diagonal entries are not unimodular")
    return Operator(d.size, "diagonal", _freeze(d), hermitian=hermitian, unitary=unitary)


def make_fourier_diagonal(symbol, hermitian=False, unitary=False, grid=None):
    """Multiplication by ``symbol`` in the discrete Fourier basis.

    ``symbol`` is sampled on the FFT-ordered modes of a periodic grid.  With ``grid``
    omitted the grid is one dimensional and ``symbol`` has shape ``(N,)``.  A symbol of
    shape ``grid + (b, b)`` acts on vectors carrying ``b`` internal components per
    site, stored site-major.
    """
    s = np.array(symbol, dtype=complex)
    if grid is None:
        grid = s.shape[:1] if s.ndim in (1, 3) else None
        if grid is None or (s.ndim == 3 and s.shape[1] != s.shape[2]):
            raise ValueError("symbol must have shape (N,) or (N, b, b) when grid is omitted")
    grid = tuple(int(n) for n in grid)
    if any(n < 1 for n in grid):
        raise ValueError("grid sizes must be positive")
    if s.shape == grid:
        block = 1
    elif s.shape[:len(grid)] == grid and s.ndim == len(grid) + 2 and s.shape[-1] == s.shape[-2]:
        block = s.shape[-1]
    else:
        raise ValueError(f"symbol shape {s.shape} incompatible with grid {grid}")
    dim = int(np.prod(grid)) * block
    if dim > FOURIER_CAP:
        raise ValueError(f"fourier_diagonal dimension {dim} exceeds {FOURIER_CAP}")
    scale = max(float(np.max(np.abs(s))), 1e-300)
    if block == 1:
        if hermitian and np.max(np.abs(s.imag)) > HERMITIAN_TOL * scale:
            raise FlagError("symbol is not real")
        if unitary and np.max(np.abs(np.abs(s) - 1.0)) > UNITARY_TOL:
            raise FlagError("symbol is not unimodular")
    else:
        blocks = s.reshape(-1, block, block)
        if hermitian:
            dev = np.max(np.abs(blocks - np.swapaxes(blocks.conj(), 1, 2)))
            if dev > HERMITIAN_TOL * scale:
                raise FlagError("matrix symbol is not Hermitian")
        if unitary:
            prod = np.einsum("gij,gkj->gik", blocks, blocks.conj())
            if np.max(np.abs(prod - np.eye(block))) > UNITARY_TOL:
                raise FlagError("matrix symbol is not unitary")
    return Operator(dim, "fourier_diagonal", _freeze(s), grid=grid, block=block,
                    hermitian=hermitian, unitary=unitary)


def make_sparse(matrix, hermitian=False, unitary=False):
    """Sparse operator (CSR) with validated flags."""
    m = sp.csr_matrix(matrix, dtype=complex)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if hermitian:
        dev = abs(m - m.conj().T).max() if m.nnz else 0.0
        if dev > HERMITIAN_TOL * max(abs(m).max() if m.nnz else 0.0, 1e-300):
            raise FlagError(f"sparse matrix is not Hermitian (deviation {dev:.3e})")
    if unitary:
        dev = sparse_norm_bound(m @ m.conj().T - sp.identity(m.shape[0], format="csr"))
        if dev > UNITARY_TOL:
            raise FlagError(f"sparse matrix is not unitary (deviation {dev:.3e})")
    return Operator(m.shape[0], "sparse", m, hermitian=hermitian, unitary=unitary)


def identity(dim):
    return make_diagonal(np.ones(dim), hermitian=True, unitary=True)


# norms ---------------------------------------------------------------------------


def op_norm_dense(m):
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    if not np.any(m):
        return 0.0
    return float(np.linalg.norm(m, 2))


def sparse_norm_bound(m):
    """Upper bound ``sqrt(||M||_1 ||M||_inf)`` on the spectral norm of a sparse matrix."""
    if m.nnz == 0:
        return 0.0
    a = abs(m)
    return float(np.sqrt(a.sum(axis=0).max() * a.sum(axis=1).max()))


def op_norm(op, cap=2048, iterations=200, seed=0):
    """Spectral norm; exact up to ``cap`` and power-iteration estimate beyond."""
    rep = op.representation
    if rep == "diagonal":
        return float(np.max(np.abs(op.data)))
    if rep == "fourier_diagonal":
        if op.block == 1:
            return float(np.max(np.abs(op.data)))
        return float(np.max(np.linalg.norm(op.data.reshape(-1, op.block, op.block), 2, axis=(1, 2))))
    if op.dim <= cap:
        return op_norm_dense(op.to_dense())
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.dim) + 1j * rng.standard_normal(op.dim)
    v /= np.linalg.norm(v)
    adj = op.adjoint()
    est = 0.0
    for _ in range(iterations):
        w = adj.apply(op.apply(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        est = np.sqrt(nw)
        v = w / nw
    return float(est)


# state vectors -------------------------------------------------------------------


@dataclass(frozen=True)
class StateVector:
    entries: np.ndarray
    label: str = ""

    def __post_init__(self):
        e = np.array(self.entries, dtype=complex).ravel()
        if not np.all(np.isfinite(e)):
            raise ValueError("state vector has non-finite entries")
        object.__setattr__(self, "entries", _freeze(e))

    @property
    def dim(self):
        return self.entries.size

    def norm(self):
        return float(np.linalg.norm(self.entries))

    def normalized(self):
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.entries / n, self.label)


def as_array(v):
    return v.entries if isinstance(v, StateVector) else np.asarray(v, dtype=complex)


# spectral data -------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralData:
    """Eigendecomposition of a normal operator.

    ``basis`` is ``"dense"`` (``vectors`` holds the eigenvector matrix), ``"identity"``
    (diagonal operators) or ``"fourier"`` (Fourier-diagonal operators).  For the last
    two, eigenvalue ``j`` belongs to basis element ``perm[j]``.
    """

    eigenvalues: np.ndarray
    kind: str
    basis: str
    vectors: np.ndarray | None = None
    perm: np.ndarray | None = None
    grid: tuple | None = None
    cluster_tolerance: float = CLUSTER_TOL

    @property
    def dim(self):
        return self.eigenvalues.size

    @property
    def eigenvectors(self):
        """Orthonormal eigenvector matrix (columns), materialized on demand."""
        if self.basis == "dense":
            return self.vectors
        return self.from_eig(np.eye(self.dim, dtype=complex))

    def to_eig(self, v):
        """Coordinates ``V* v`` of ``v`` (vector or column block) in the eigenbasis."""
        v = np.asarray(v, dtype=complex)
        if self.basis == "dense":
            return _real_aware_product(self.vectors.T, v, conjugate=True)
        if self.basis == "identity":
            return v[self.perm]
        cols = v.shape[1:]
        axes = tuple(range(len(self.grid)))
        x = np.fft.fftn(v.reshape(self.grid + cols), axes=axes, norm="ortho")
        return x.reshape((self.dim,) + cols)[self.perm]

    def from_eig(self, c):
        """Inverse of :meth:`to_eig`."""
        c = np.asarray(c, dtype=complex)
        if self.basis == "dense":
            return _real_aware_product(self.vectors, c)
        out = np.empty_like(c)
        out[self.perm] = c
        if self.basis == "identity":
            return out
        cols = c.shape[1:]
        axes = tuple(range(len(self.grid)))
        x = np.fft.ifftn(out.reshape(self.grid + cols), axes=axes, norm="ortho")
        return x.reshape((self.dim,) + cols)

    def clusters(self):
        """Groups of eigenvalue indices closer than the cluster tolerance."""
        return _clusters(self.eigenvalues, self.kind, self.cluster_tolerance)


def _real_aware_product(m, v, conjugate=False):
    """``m @ v`` (or ``conj(m) @ v``) without promoting a real ``m`` to complex."""
    if np.isrealobj(m):
        if np.isrealobj(v):
            return m @ v
        # contiguous copies keep the products on the BLAS path
        re, im = np.ascontiguousarray(v.real), np.ascontiguousarray(v.imag)
        return m @ re + 1j * (m @ im)
    return (m.conj() if conjugate else m) @ v


def _clusters(lam, kind, tol):
    n = lam.size
    if n == 0:
        return []
    gaps = np.abs(np.diff(lam))
    breaks = np.nonzero(gaps > tol)[0]
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks + 1, [n]))
    groups = [np.arange(s, e) for s, e in zip(starts, ends)]
    if kind == "unitary" and len(groups) > 1 and abs(lam[-1] - lam[0]) <= tol:
        groups[0] = np.concatenate((groups[-1], groups[0]))
        groups.pop()
    return groups


def _sort_unitary(mu):
    mu = mu / np.abs(mu)
    return np.argsort(np.angle(mu), kind="stable"), mu


def _tridiagonal_parts(op):
    """Real diagonal and off-diagonal of a real symmetric tridiagonal operator, or None."""
    if op.representation == "sparse":
        m = op.data.tocoo()
        if m.nnz and np.max(np.abs(m.row - m.col)) > 1:
            return None
        if m.nnz and np.max(np.abs(m.data.imag)) > 0:
            return None
        d = op.data.diagonal(0).real
        e = op.data.diagonal(1).real
        return d, e
    if op.representation == "dense":
        a = op.data
        if np.any(a.imag) or np.any(np.triu(a, 2)):
            return None
        return np.diag(a).real.copy(), np.diag(a, 1).real.copy()
    return None


def eig(op, cluster_tolerance=CLUSTER_TOL):
    """Eigendecomposition of a Hermitian- or unitary-flagged operator."""
    if not (op.hermitian or op.unitary):
        raise ValueError("eig requires an operator flagged hermitian or unitary")
    kind = "hermitian" if op.hermitian else "unitary"
    rep = op.representation
    if rep == "diagonal" or (rep == "fourier_diagonal" and op.block == 1):
        vals = op.data.ravel()
        if kind == "hermitian":
            vals = vals.real
            order = np.argsort(vals, kind="stable")
        else:
            order, vals = _sort_unitary(vals)
        basis = "identity" if rep == "diagonal" else "fourier"
        return SpectralData(_freeze(vals[order]), kind, basis, perm=_freeze(order),
                            grid=op.grid, cluster_tolerance=cluster_tolerance)
    if kind == "hermitian":
        tri = _tridiagonal_parts(op)
        if tri is not None and op.dim <= TRIDIAGONAL_CAP:
            try:
                lam, vec = sla.eigh_tridiagonal(tri[0], tri[1])
            except (sla.LinAlgError, ValueError) as exc:
                raise RuntimeError(f"eigensolver failure: {exc}") from exc
            return SpectralData(_freeze(lam), kind, "dense", vectors=_freeze(vec),
                                cluster_tolerance=cluster_tolerance)
    if op.dim > DENSE_CAP:
        raise MemoryError(f"dense eigendecomposition capped at dimension {DENSE_CAP}")
    m = op.to_dense()
    try:
        if kind == "hermitian":
            if not np.any(m.imag):
                lam, vec = sla.eigh(m.real)
            else:
                lam, vec = sla.eigh(m)
            return SpectralData(_freeze(lam), kind, "dense", vectors=_freeze(vec),
                                cluster_tolerance=cluster_tolerance)
        t, z = sla.schur(m, output="complex")
    except (sla.LinAlgError, ValueError) as exc:
        raise RuntimeError(f"eigensolver failure: {exc}") from exc
    off = np.linalg.norm(np.triu(t, 1))
    if off > 1e-8 * max(np.linalg.norm(t), 1.0):
        raise ValueError(f"operator is not normal (Schur off-diagonal {off:.3e})")
    order, mu = _sort_unitary(np.diag(t))
    return SpectralData(_freeze(mu[order]), kind, "dense", vectors=_freeze(z[:, order]),
                        cluster_tolerance=cluster_tolerance)


def func_calculus(spec, f: Callable):
    """The operator ``f(M)`` for ``M`` with spectral data ``spec``.

    Diagonal and Fourier bases give exact diagonal/symbol operators.  A dense basis
    gives ``V f(lambda) V*``, kept as an unevaluated product above ``LAZY_THRESHOLD``.
    """
    vals = np.asarray(f(spec.eigenvalues), dtype=complex)
    if vals.shape != spec.eigenvalues.shape:
        vals = np.broadcast_to(vals, spec.eigenvalues.shape).astype(complex)
    if not np.all(np.isfinite(vals)):
        bad = spec.eigenvalues[~np.isfinite(vals)][0]
        raise ValueError(f"function is not finite at eigenvalue {bad}")
    herm = bool(np.all(vals.imag == 0))
    unit = bool(np.all(np.abs(np.abs(vals) - 1.0) <= 1e-12))
    if spec.basis == "identity":
        d = np.empty(spec.dim, dtype=complex)
        d[spec.perm] = vals
        return Operator(spec.dim, "diagonal", _freeze(d), hermitian=herm, unitary=unit)
    if spec.basis == "fourier":
        s = np.empty(spec.dim, dtype=complex)
        s[spec.perm] = vals
        return Operator(spec.dim, "fourier_diagonal", _freeze(s.reshape(spec.grid)),
                        grid=spec.grid, block=1, hermitian=herm, unitary=unit)
    v = spec.vectors
    if spec.dim > LAZY_THRESHOLD:
        left = Operator(spec.dim, "dense", v, unitary=True)
        right = Operator(spec.dim, "dense", _freeze(v.conj().T), unitary=True)
        mid = Operator(spec.dim, "diagonal", _freeze(vals), hermitian=herm, unitary=unit)
        return lazy_product(left, mid, right, hermitian=herm, unitary=unit)
    m = (v * vals) @ v.conj().T
    if herm:
        m = 0.5 * (m + m.conj().T)
    return Operator(spec.dim, "dense", _freeze(m), hermitian=herm, unitary=unit)


def evolve(spec, t, v):
    """``exp(-itH) v`` for Hermitian spectral data."""
    if spec.kind != "hermitian":
        raise ValueError("evolve requires Hermitian spectral data")
    arr = as_array(v)
    if arr.shape[0] != spec.dim:
        raise ValueError(f"dimension mismatch: spectral data {spec.dim}, vector {arr.shape[0]}")
    c = spec.to_eig(arr)
    phase = np.exp(-1j * float(t) * spec.eigenvalues)
    c = c * (phase if c.ndim == 1 else phase[:, None])
    out = spec.from_eig(c)
    if isinstance(v, StateVector):
        return StateVector(out, v.label)
    return out


# serialization -------------------------------------------------------------------


def _pairs(a):
    a = np.asarray(a, dtype=complex).ravel()
    return [[float(z.real), float(z.imag)] for z in a]


def _unpairs(p):
    a = np.asarray(p, dtype=float).reshape(-1, 2)
    return a[:, 0] + 1j * a[:, 1]


def operator_to_dict(op):
    """JSON-ready description of ``op``.  Composite operators are densified."""
    d = {"dim": op.dim, "representation": op.representation,
         "hermitian": op.hermitian, "unitary": op.unitary}
    rep = op.representation
    if rep == "composite":
        d["representation"] = "dense"
        d["entries"] = _pairs(op.to_dense())
    elif rep in ("dense", "diagonal"):
        d["entries"] = _pairs(op.data)
    elif rep == "fourier_diagonal":
        d["grid"] = list(op.grid)
        d["block"] = op.block
        d["symbol"] = _pairs(op.data)
    else:
        m = op.data.tocoo()
        d["rows"] = m.row.tolist()
        d["cols"] = m.col.tolist()
        d["entries"] = _pairs(m.data)
    return d


def operator_from_dict(d):
    rep = d["representation"]
    dim = int(d["dim"])
    herm, unit = bool(d.get("hermitian", False)), bool(d.get("unitary", False))
    if rep == "dense":
        return make_dense(_unpairs(d["entries"]).reshape(dim, dim), herm, unit)
    if rep == "diagonal":
        return make_diagonal(_unpairs(d["entries"]), herm, unit)
    if rep == "fourier_diagonal":
        grid = tuple(d["grid"])
        block = int(d.get("block", 1))
        shape = grid if block == 1 else grid + (block, block)
        return make_fourier_diagonal(_unpairs(d["symbol"]).reshape(shape), herm, unit, grid=grid)
    if rep == "sparse":
        m = sp.coo_matrix((_unpairs(d["entries"]), (d["rows"], d["cols"])), shape=(dim, dim))
        return make_sparse(m, herm, unit)
    raise ValueError(f"unknown representation tag {rep!r}")


def vector_to_dict(v):
    return {"dim": v.dim, "label": v.label, "entries": _pairs(v.entries)}


def vector_from_dict(d):
    e = _unpairs(d["entries"])
    if e.size != int(d["dim"]):
        raise ValueError("vector length does not match its dim field")
    return StateVector(e, d.get("label", ""))


def dumps(obj):
    """Serialize an Operator or StateVector to JSON text."""
    if isinstance(obj, Operator):
        return json.dumps(operator_to_dict(obj))
    if isinstance(obj, StateVector):
        return json.dumps(vector_to_dict(obj))
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def loads(text):
    d = json.loads(text)
    if "representation" in d:
        return operator_from_dict(d)
    return vector_from_dict(d)
