"""Spectral diagnostics: virial identities, RAGE limits, decomposability, summability.

Finite truncations have pure point spectrum, so every ergodic limit here is an exact
cluster pinching computed from eigendata.  What remains of the continuous spectrum
story is the convergence rate, which is controlled by the smallest gap between
distinct eigenvalue clusters.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import opcore as oc

DIAGNOSTIC_LABEL = "diagnostic, not a proof of absolute continuity"
POINT_SPECTRUM_CAVEAT = ("finite truncation: pure point spectrum, limits are exact cluster "
                         "pinchings and the rate is set by the minimal cluster gap")
VIRIAL_TOL = 1e-9


def _dense(x):
    if isinstance(x, oc.Operator):
        return x.to_dense()
    return np.asarray(x, dtype=complex)


def _spectral(x, cluster_tolerance, unitary=None):
    if isinstance(x, oc.SpectralData):
        return x
    if isinstance(x, oc.Operator) and unitary is None:
        return oc.eig(x, cluster_tolerance)
    m = _dense(x)
    if unitary is None:
        unitary = not np.allclose(m, m.conj().T, atol=oc.HERMITIAN_TOL)
    return oc.eig(oc.make_dense(m, hermitian=not unitary, unitary=unitary), cluster_tolerance)


# projection family ---------------------------------------------------------------------


@dataclass(frozen=True)
class ProjectionFamily:
    """Spectral projections of a normal operator, one per eigenvalue cluster.

    ``vectors`` holds the orthonormal eigenvectors as columns; the projection of
    cluster ``c`` is ``V_c V_c*``.  ``labels`` are the cluster means.
    """

    spectral: oc.SpectralData
    clusters: tuple
    labels: np.ndarray
    vectors: np.ndarray = field(repr=False)

    @classmethod
    def from_spectral(cls, spec):
        groups = tuple(np.asarray(g) for g in spec.clusters())
        lam = spec.eigenvalues
        if spec.kind == "unitary":
            labels = np.array([np.mean(lam[g]) / abs(np.mean(lam[g])) for g in groups])
        else:
            labels = np.array([np.mean(lam[g]) for g in groups])
        return cls(spec, groups, labels, np.asarray(spec.eigenvectors, dtype=complex))

    @classmethod
    def of(cls, op, cluster_tolerance=oc.CLUSTER_TOL, unitary=None):
        """Family of a Hermitian or unitary Operator, array or SpectralData.

        Plain arrays are read as Hermitian when they are self-adjoint unless
        ``unitary=True`` is passed.
        """
        return cls.from_spectral(_spectral(op, cluster_tolerance, unitary))

    def __len__(self):
        return len(self.clusters)

    @property
    def dim(self):
        return self.vectors.shape[0]

    def projection(self, c):
        vc = self.vectors[:, self.clusters[c]]
        return vc @ vc.conj().T

    def projections(self):
        return [self.projection(c) for c in range(len(self))]

    def spreads(self):
        """Largest eigenvalue distance inside each cluster."""
        lam = self.spectral.eigenvalues
        return np.array([np.max(np.abs(lam[g][:, None] - lam[g][None, :])) for g in
                         self.clusters])

    def min_gap(self):
        """Smallest distance between eigenvalues of distinct clusters (angle if unitary)."""
        if len(self) < 2:
            return np.inf
        lam = self.spectral.eigenvalues
        owner = np.empty(lam.size, dtype=int)
        for c, g in enumerate(self.clusters):
            owner[g] = c
        if self.spectral.kind == "unitary":
            d = np.abs(np.angle(lam[:, None] * lam[None, :].conj()))
        else:
            d = np.abs(lam[:, None] - lam[None, :])
        d[owner[:, None] == owner[None, :]] = np.inf
        return float(d.min())

    def to_eig(self, mat):
        """``V* M V`` for a dense matrix ``M``."""
        v = self.vectors
        return v.conj().T @ mat @ v

    def pinch(self, mat):
        """``sum_c E_c M E_c`` as a dense matrix."""
        w = self.to_eig(np.asarray(mat, dtype=complex))
        keep = np.zeros(w.shape, dtype=bool)
        for g in self.clusters:
            keep[np.ix_(g, g)] = True
        return self.vectors @ np.where(keep, w, 0) @ self.vectors.conj().T

    def invariant_residuals(self):
        """Idempotency, mutual orthogonality and completeness residuals (operator norm)."""
        projs = self.projections()
        idem = max(np.linalg.norm(p @ p - p, 2) for p in projs)
        orth = 0.0
        for a in range(len(projs)):
            for b in range(a + 1, len(projs)):
                orth = max(orth, np.linalg.norm(projs[a] @ projs[b], 2))
        comp = np.linalg.norm(sum(projs) - np.eye(self.dim), 2)
        return {"idempotency": float(idem), "orthogonality": float(orth),
                "completeness": float(comp)}


# virial identity ------------------------------------------------------------------------


@dataclass
class VirialReport:
    kind: str
    generator_kind: str
    blocks: np.ndarray
    spreads: np.ndarray
    allowance: np.ndarray

    @property
    def max(self):
        return float(self.blocks.max()) if self.blocks.size else 0.0

    @property
    def passed(self):
        return bool(np.all(self.blocks <= self.allowance))


def commutator_matrix(m):
    """``[A, U] U^{-1}`` (discrete) or ``[iH, A]`` (continuous) from the model's matrices."""
    g = _dense(m.generator)
    a = _dense(m.conjugate)
    if m.discrete:
        return (a @ g - g @ a) @ g.conj().T
    return 1j * (g @ a - a @ g)


def virial_report(m, cluster_tolerance=oc.CLUSTER_TOL, tol=VIRIAL_TOL):
    """Per-cluster norms ``||E K E||`` with ``K`` from :func:`commutator_matrix`.

    The allowance is ``tol`` plus ``2 * spread * ||A||``, which covers clusters
    merging distinct but nearby eigenvalues.
    """
    if m.generator is None:
        raise ValueError(f"{m.kind} has no single generator")
    if m.dim > oc.DENSE_CAP:
        raise MemoryError(f"virial check limited to dimension {oc.DENSE_CAP}")
    fam = ProjectionFamily.of(m.generator, cluster_tolerance)
    w = fam.to_eig(commutator_matrix(m))
    blocks = np.array([np.linalg.norm(w[np.ix_(g, g)], 2) for g in fam.clusters])
    spreads = fam.spreads()
    a_norm = np.linalg.norm(_dense(m.conjugate), 2)
    return VirialReport(m.kind, fam.spectral.kind, blocks, spreads,
                        tol + 2 * spreads * a_norm)


def virial_check(m, cluster_tolerance=oc.CLUSTER_TOL):
    """Largest ``||E(theta) K E(theta)||`` over eigenvalue clusters of the generator."""
    return virial_report(m, cluster_tolerance).max


# RAGE limits ----------------------------------------------------------------------------


def _grid(n_grid):
    grid = np.asarray(n_grid, dtype=np.int64)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 1):
        raise ValueError("index grid must be a non-empty sequence of positive integers")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("index grid must be strictly increasing")
    return grid


@dataclass
class RageReport:
    """Deviation of a Cesaro mean from its exact limit on an index grid."""

    name: str
    index: np.ndarray
    deviation: np.ndarray
    gap: float
    limit: object
    bound: np.ndarray | None = None
    values: np.ndarray | None = None
    caveat: str = POINT_SPECTRUM_CAVEAT

    @property
    def verdicts(self):
        if self.bound is None:
            return None
        return self.deviation <= self.bound

    @property
    def passed(self):
        v = self.verdicts
        return None if v is None else bool(np.all(v))

    def to_dict(self):
        limit = self.limit if np.isscalar(self.limit) else None
        return {
            "name": self.name, "gap": self.gap, "limit": limit,
            "index": self.index.tolist(), "deviation": self.deviation.tolist(),
            "bound": None if self.bound is None else self.bound.tolist(),
            "verdicts": None if self.bound is None else self.verdicts.tolist(),
            "passed": self.passed, "caveat": self.caveat,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["n", "deviation"])
            for n, d in zip(self.index, self.deviation):
                out.writerow([repr(int(n)), repr(float(d))])


def rage_scalar(u, k, phi, n_grid, cluster_tolerance=oc.CLUSTER_TOL):
    """Running means ``(1/n) sum_{m<n} ||K U^{-m} phi||^2`` against their exact limit.

    The means are accumulated by direct iteration; the limit is
    ``sum_theta ||K E(theta) phi||^2`` from the eigendata of ``U``.
    """
    grid = _grid(n_grid)
    ud, kd = _dense(u), _dense(k)
    phi = np.asarray(oc.as_array(phi), dtype=complex)
    fam = ProjectionFamily.of(ud, cluster_tolerance, unitary=True)
    coords = fam.vectors.conj().T @ phi
    limit = 0.0
    for g in fam.clusters:
        limit += np.linalg.norm(kd @ (fam.vectors[:, g] @ coords[g])) ** 2
    u_inv = ud.conj().T
    v = phi.copy()
    total = 0.0
    means = np.empty(grid.size)
    j = 0
    for m in range(int(grid[-1])):
        total += np.linalg.norm(kd @ v) ** 2
        v = u_inv @ v
        if m + 1 == grid[j]:
            means[j] = total / (m + 1)
            j += 1
    return RageReport("rage_scalar", grid, np.abs(means - limit), fam.min_gap(),
                      float(limit), values=means)


def cesaro_mean(u, k, n):
    """``(1/n) sum_{m<n} U^m K U^{-m}`` as a dense matrix, by binary doubling."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    ud, kd = _dense(u), _dense(k)
    power, block = ud, kd          # U^(2^b) and the sum over 2^b consecutive terms
    offset = np.eye(ud.shape[0], dtype=complex)
    total = np.zeros_like(kd)
    bits = n
    while True:
        if bits & 1:
            total += offset @ block @ offset.conj().T
            offset = offset @ power
        bits >>= 1
        if not bits:
            break
        block = block + power @ block @ power.conj().T
        power = power @ power
    return total / n


def rage_operator(u, k, n_grid, cluster_tolerance=oc.CLUSTER_TOL):
    """Operator-norm deviation of the Cesaro mean of ``U^m K U^{-m}`` from its limit.

    The limit ``sum_theta E K E`` comes from the eigendata of ``U``; the means come from
    :func:`cesaro_mean`.  ``bound`` is ``2 ||K|| / (n g)`` with ``g`` the minimal
    eigenphase gap between distinct clusters.
    """
    grid = _grid(n_grid)
    ud, kd = _dense(u), _dense(k)
    fam = ProjectionFamily.of(ud, cluster_tolerance, unitary=True)
    limit = fam.pinch(kd)
    dev = np.array([np.linalg.norm(cesaro_mean(ud, kd, n) - limit, 2) for n in grid])
    gap = fam.min_gap()
    bound = 2 * np.linalg.norm(kd, 2) / (grid * gap)
    return RageReport("rage_operator", grid, dev, gap, limit, bound=bound)


# decomposability and summability ----------------------------------------------------


def decomposability_check(d, spec):
    """Largest ``||E(theta) D (I - E(theta))||`` over clusters of ``spec``."""
    fam = spec if isinstance(spec, ProjectionFamily) else ProjectionFamily.of(spec)
    w = fam.to_eig(_dense(d))
    worst = 0.0
    for g in fam.clusters:
        rest = np.ones(fam.dim, dtype=bool)
        rest[g] = False
        if rest.any():
            worst = max(worst, float(np.linalg.norm(w[np.ix_(g, rest)], 2)))
    return worst


@dataclass
class SummabilityCurve:
    index: np.ndarray
    terms: np.ndarray
    partial_sums: np.ndarray
    rule: str
    increment_ratio: float
    label: str = DIAGNOSTIC_LABEL

    def to_dict(self):
        return {"index": self.index.tolist(), "terms": self.terms.tolist(),
                "partial_sums": self.partial_sums.tolist(), "rule": self.rule,
                "increment_ratio": self.increment_ratio, "label": self.label}


def _probe_column(series, phi):
    if isinstance(phi, (int, np.integer)):
        return int(phi)
    if isinstance(phi, str):
        return series.labels.index(phi)
    v = oc.as_array(phi)
    for p, probe in enumerate(series.probes):
        if probe.shape == v.shape and np.allclose(probe, v, atol=1e-14, rtol=0):
            return p
    raise ValueError("phi is not one of the series probes")


def ac_summability(series, phi=0):
    """Partial sums of ``||(D - D_index) phi||^2`` along a Cesaro series.

    Consecutive integer grids are summed exactly; other grids (and continuous time)
    use the trapezoid rule.  ``increment_ratio`` is the growth over the last decade of
    the index divided by the total.
    """
    if series.residuals is None:
        raise ValueError("series has no reference limit")
    p = _probe_column(series, phi)
    idx = np.asarray(series.index, dtype=float)
    terms = series.residuals[:, p] ** 2
    exact = series.time == "discrete" and idx[0] == 1 and np.all(np.diff(idx) == 1)
    if exact:
        sums = np.cumsum(terms)
        rule = "sum"
    else:
        steps = np.diff(idx) * 0.5 * (terms[1:] + terms[:-1])
        sums = np.concatenate(([0.0], np.cumsum(steps)))
        rule = "trapezoid"
    total = sums[-1]
    before = np.interp(idx[-1] / 10, idx, sums) if idx[-1] / 10 >= idx[0] else 0.0
    ratio = float((total - before) / total) if total > 0 else 0.0
    return SummabilityCurve(series.index, terms, sums, rule, ratio)
