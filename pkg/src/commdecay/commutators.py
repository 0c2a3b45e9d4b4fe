"""Cesaro means of conjugated commutators.

Discrete time: ``D_n = (1/n) [A, U^n] U^-n``, evaluated on probe vectors through the
conjugation sum ``(1/n) sum_{m<n} U^m K U^-m`` with ``K = [A, U] U^-1``.

Continuous time: ``D_t`` is the time average of ``e^{-isH} R+ [iH, A] R- e^{isH}`` with
``R+- = (H +- i)^-1``, computed entrywise in the eigenbasis of ``H``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import opcore as oc

DEGENERATE_GAP = 1e-12
QUADRATURE_AGREEMENT = 1e-6


class HorizonError(ValueError):
    """Requested index beyond the model's validity window."""


@dataclass
class CesaroSeries:
    """Cesaro means on a grid of powers or times, acting on a set of probes.

    ``actions[i, p]`` is ``D_{index[i]}`` applied to probe ``p``; ``reference`` holds
    the limit applied to each probe and ``reference_label`` says where it came from
    (``"expected"`` from the model or ``"estimated limit"`` by extrapolation).
    """

    time: str
    index: np.ndarray
    labels: tuple
    probes: np.ndarray
    actions: np.ndarray
    reference: np.ndarray | None
    reference_label: str | None
    residuals: np.ndarray | None
    expectations: np.ndarray
    defects: np.ndarray | None = None
    cross_check: float | None = None
    _kernel: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.index.size and np.any(np.diff(self.index) <= 0):
            raise ValueError("index grid must be strictly increasing")

    def residual_table(self):
        """Rows ``(index, label, residual, defect)``."""
        rows = []
        for i, n in enumerate(self.index):
            for p, lab in enumerate(self.labels):
                res = None if self.residuals is None else float(self.residuals[i, p])
                dfc = None if self.defects is None else float(self.defects[i])
                rows.append((n.item(), lab, res, dfc))
        return rows


def _check_grid(m, grid, discrete):
    grid = np.asarray(grid, dtype=int if discrete else float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("index grid must be a non-empty sequence")
    if np.any(grid <= 0):
        raise ValueError("indices must be positive")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("index grid must be strictly increasing")
    if grid[-1] > m.validity_window:
        raise HorizonError(f"index {grid[-1]} exceeds the validity window "
                           f"{m.validity_window:g} of {m.kind}")
    return grid


def _check_probes(m, probes, labels):
    arrs = np.array([oc.as_array(v) for v in probes], dtype=complex)
    if arrs.ndim != 2 or arrs.shape[1] != m.dim:
        raise ValueError(f"probes must be vectors of dimension {m.dim}")
    for j, v in enumerate(arrs):
        if not m.probe_support_ok(v):
            raise ValueError(f"probe {j} is not supported in the interior of {m.kind}")
    if labels is None:
        labels = tuple(getattr(v, "label", "") or f"probe{j}" for j, v in enumerate(probes))
    if len(labels) != len(arrs):
        raise ValueError("one label per probe required")
    return arrs, tuple(labels)


def _monomial(u):
    """``(target, values)`` with ``U e_c = values[c] e_{target[c]}``, or None."""
    if u.representation != "sparse":
        return None
    csc = u.data.tocsc()
    csc.eliminate_zeros()
    if csc.nnz != u.dim or np.any(np.diff(csc.indptr) != 1):
        return None
    target = csc.indices.copy()
    if np.unique(target).size != u.dim:
        return None
    return target, csc.data.copy()


def _birkhoff_means(target, k_diag, grid):
    """Entry ``[i, x]``: mean of ``k`` over ``x, s(x), ..., s^{n-1}(x)`` with ``s`` the
    inverse of ``target``, for each ``n = grid[i]``.

    Each cycle of the permutation gets a doubled prefix sum, so every mean costs O(1)
    after O(dim) preprocessing.
    """
    dim = target.size
    source = np.empty(dim, dtype=int)
    source[target] = np.arange(dim)
    out = np.empty((len(grid), dim), dtype=k_diag.dtype)
    seen = np.zeros(dim, dtype=bool)
    for start in range(dim):
        if seen[start]:
            continue
        cyc = [start]
        seen[start] = True
        j = source[start]
        while j != start:
            cyc.append(j)
            seen[j] = True
            j = source[j]
        cyc = np.array(cyc)
        length = cyc.size
        vals = k_diag[cyc]
        prefix = np.concatenate(([0], np.cumsum(np.concatenate((vals, vals)))))
        total = prefix[length]
        pos = np.arange(length)
        for i, n in enumerate(grid):
            q, r = divmod(int(n), length)
            out[i, cyc] = (q * total + prefix[pos + r] - prefix[pos]) / n
    return out


def _conjugation_sum(u, k_op, n, v):
    """``sum_{m<n} U^m K U^-m v`` by a backward Horner pass (3n applications)."""
    ui = u.adjoint()
    w = v
    for _ in range(n - 1):
        w = ui.apply(w)
    z = k_op.apply(w)
    for _ in range(n - 1):
        w = u.apply(w)
        z = k_op.apply(w) + u.apply(z)
    return z


def telescoped(m, n, v):
    """``(1/n) [A, U^n] U^-n v`` computed directly from powers of ``U``."""
    u, a = m.generator, m.conjugate
    w = np.asarray(oc.as_array(v), dtype=complex)
    ui = u.adjoint()
    for _ in range(n):
        w = ui.apply(w)
    x = a.apply(w)
    for _ in range(n):
        x = u.apply(x)
    return (a.apply(oc.as_array(v)) - x) / n


def _log_derivative(m):
    return m.log_derivative if m.log_derivative is not None else m.commutator


def discrete_actions(m, grid, vecs):
    """``D_n`` applied to each row of ``vecs`` for every ``n`` in ``grid``."""
    u, k_op = m.generator, _log_derivative(m)
    mono = _monomial(u) if k_op.representation == "diagonal" else None
    out = np.empty((len(grid), len(vecs), m.dim), dtype=complex)
    if mono is not None:
        means = _birkhoff_means(mono[0], k_op.data.astype(complex), grid)
        for i in range(len(grid)):
            out[i] = means[i][None, :] * vecs
        return out
    block = np.ascontiguousarray(np.asarray(vecs).T)
    for i, n in enumerate(grid):
        out[i] = (_conjugation_sum(u, k_op, int(n), block) / n).T
    return out


def _richardson(grid, actions):
    n1, n2 = float(grid[-2]), float(grid[-1])
    return (n2 * actions[-1] - n1 * actions[-2]) / (n2 - n1)


def _assemble(m, time, grid, arrs, labels, actions, reference, kernel=None, cross=None):
    ref_label = None
    ref_actions = None
    if reference is not None:
        ref_actions = np.array([reference.apply(v) for v in arrs])
        ref_label = "expected"
    elif len(grid) >= 2:
        ref_actions = _richardson(grid, actions)
        ref_label = "estimated limit"
    residuals = None
    if ref_actions is not None:
        residuals = np.linalg.norm(actions - ref_actions[None], axis=2)
    expectations = np.einsum("pd,ipd->ip", arrs.conj(), actions)
    return CesaroSeries(time, grid, labels, arrs, actions, ref_actions, ref_label, residuals,
                        expectations, cross_check=cross, _kernel=kernel)


def cesaro_discrete(m, n_grid, probes, labels=None, reference="auto"):
    """Cesaro means ``D_n`` of a discrete-time model on probe vectors.

    ``reference="auto"`` uses the model's expected limit when it has one and an
    extrapolated estimate otherwise; pass an Operator to override or None to skip.
    """
    if not m.discrete:
        raise ValueError(f"{m.kind} is a continuous-time model")
    grid = _check_grid(m, n_grid, True)
    arrs, labels = _check_probes(m, probes, labels)
    actions = discrete_actions(m, grid, arrs)
    ref = m.expected_D if isinstance(reference, str) and reference == "auto" else reference
    return _assemble(m, "discrete", grid, arrs, labels, actions, ref)


# continuous time ----------------------------------------------------------------------


@dataclass(frozen=True)
class _EigenKernel:
    spectral: oc.SpectralData
    middle: np.ndarray


def regularized_commutator(m):
    """``R+ [iH, A] R-`` in the eigenbasis of ``H`` as a dense matrix."""
    spec = m.spectral
    if spec.dim > oc.DENSE_CAP:
        raise MemoryError(f"dimension {spec.dim} exceeds {oc.DENSE_CAP} for the eigenbasis "
                          "commutator")
    vecs = spec.eigenvectors
    mid = spec.to_eig(m.commutator.apply(vecs))
    lam = spec.eigenvalues
    mid = mid / (lam + 1j)[:, None]
    mid = mid / (lam - 1j)[None, :]
    return _EigenKernel(spec, mid)


def mean_phase(t, gaps):
    """Time average over ``[0, t]`` of ``exp(-i s gap)``, equal to 1 for tiny gaps."""
    gaps = np.asarray(gaps, dtype=float)
    theta = t * gaps
    out = np.exp(-0.5j * theta) * np.sinc(theta / (2 * np.pi))
    return np.where(np.abs(gaps) < DEGENERATE_GAP, 1.0 + 0j, out)


def _continuous_action(kernel, t, coords):
    lam = kernel.spectral.eigenvalues
    weights = mean_phase(t, lam[:, None] - lam[None, :])
    return (weights * kernel.middle) @ coords


def _quadrature_action(kernel, t, coords, step):
    """Composite trapezoid rule for the same time average, refined by one Richardson
    step (trapezoid at ``step`` and ``step / 2``)."""
    lam = kernel.spectral.eigenvalues
    nodes = 2 * max(int(math.ceil(t / step)), 1)
    taus = np.linspace(0.0, t, nodes + 1)
    samples = []
    for tau in taus:
        ph = np.exp(1j * tau * lam)[:, None]
        samples.append(ph.conj() * (kernel.middle @ (ph * coords)))
    samples = np.array(samples)
    fine = np.trapezoid(samples, taus, axis=0)
    coarse = np.trapezoid(samples[::2], taus[::2], axis=0)
    return (4 * fine - coarse) / (3 * t)


def default_quadrature_step(spec, accuracy=1e-8):
    """Step meeting the phase-resolution limit and the refined rule's error target."""
    lam_max = max(float(np.max(np.abs(spec.eigenvalues))), 1e-12)
    return min(math.pi / (4 * lam_max), (180 * accuracy) ** 0.25 / lam_max)


def cesaro_continuous(m, t_grid, probes, labels=None, quadrature_step=None, reference="auto",
                      cross_check=True):
    """Cesaro means ``D_t`` of a continuous-time model on probe vectors.

    The closed-form entrywise time average is the main route; a Richardson-refined
    trapezoid rule (``quadrature_step``) reruns the smallest time as a cross-check and raises
    ``ValueError`` when the two disagree by more than 1e-6.
    """
    if m.discrete:
        raise ValueError(f"{m.kind} is a discrete-time model")
    grid = _check_grid(m, t_grid, False)
    arrs, labels = _check_probes(m, probes, labels)
    kernel = regularized_commutator(m)
    lam_max = max(float(np.max(np.abs(kernel.spectral.eigenvalues))), 1e-12)
    if quadrature_step is not None and quadrature_step > math.pi / (4 * lam_max):
        raise ValueError(f"quadrature step {quadrature_step:g} does not resolve the fastest "
                         f"phase; need <= {math.pi / (4 * lam_max):g}")
    coords = kernel.spectral.to_eig(arrs.T)
    actions = np.empty((len(grid), len(arrs), m.dim), dtype=complex)
    for i, t in enumerate(grid):
        actions[i] = kernel.spectral.from_eig(_continuous_action(kernel, t, coords)).T
    cross = None
    if cross_check:
        step = quadrature_step or default_quadrature_step(kernel.spectral)
        quad = _quadrature_action(kernel, grid[0], coords, step)
        closed = _continuous_action(kernel, grid[0], coords)
        cross = float(np.max(np.abs(quad - closed)))
        if cross > QUADRATURE_AGREEMENT:
            raise ValueError(f"quadrature step {step:g} too coarse: closed form and trapezoid "
                             f"rule differ by {cross:.2e}")
    ref = m.expected_D if isinstance(reference, str) and reference == "auto" else reference
    return _assemble(m, "continuous", grid, arrs, labels, actions, ref, kernel, cross)


def continuous_actions(m, grid, vecs, kernel=None):
    kernel = kernel or regularized_commutator(m)
    coords = kernel.spectral.to_eig(np.asarray(vecs).T)
    return np.array([kernel.spectral.from_eig(_continuous_action(kernel, t, coords)).T
                     for t in grid])


# diagnostics ---------------------------------------------------------------------------


def commutation_defect(series, m, s=1.0):
    """Per index, the largest ``||[D, W] phi||`` over the probes.

    ``W`` is ``U`` in discrete time and ``exp(-isH)`` in continuous time.  The values
    are stored on the series and returned.
    """
    arrs = series.probes
    if series.time == "discrete":
        moved = np.array([m.generator.apply(v) for v in arrs])
        d_moved = discrete_actions(m, series.index, moved)
        w_d = np.array([[m.generator.apply(x) for x in row] for row in series.actions])
    else:
        spec = m.spectral
        moved = oc.evolve(spec, s, arrs.T).T
        d_moved = continuous_actions(m, series.index, moved, series._kernel)
        w_d = np.array([oc.evolve(spec, s, row.T).T for row in series.actions])
    defects = np.max(np.linalg.norm(d_moved - w_d, axis=2), axis=1)
    series.defects = defects
    return defects


def c1_probe(a_op, u_op, probes):
    """``sup |<A phi, U phi> - <phi, U A phi>| / ||phi||^2`` over the probes."""
    worst = 0.0
    for v in probes:
        v = oc.as_array(v)
        av = a_op.apply(v)
        val = np.vdot(av, u_op.apply(v)) - np.vdot(v, u_op.apply(av))
        worst = max(worst, abs(val) / np.vdot(v, v).real)
    return float(worst)


def cesaro_operator(m, n):
    """Dense ``D_n`` (discrete) or ``D_t`` (continuous) for small models."""
    if m.dim > 1024:
        raise MemoryError("dense Cesaro operator limited to dimension 1024")
    eye = np.eye(m.dim, dtype=complex)
    if m.discrete:
        return discrete_actions(m, [int(n)], eye)[0].T
    return continuous_actions(m, [float(n)], eye)[0].T


def write_csv(series, path):
    """Write ``index, probe_label, residual, defect`` rows; floats in repr form."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["index", "probe_label", "residual", "defect"])
        for idx, lab, res, dfc in series.residual_table():
            out.writerow([repr(idx), lab, "" if res is None else repr(res),
                          "" if dfc is None else repr(dfc)])
