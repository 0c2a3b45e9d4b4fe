"""Decay of matrix coefficients and the constants that bound it.

For ``phi = D^n chi`` the coefficients ``<phi, U_j psi>`` are bounded by
``C(n, chi, psi) / l_j^n`` where ``C`` follows the recursion

    C(1, chi, psi) = ||A chi|| ||psi|| + ||chi|| ||A psi||
    C(n, chi, psi) = C(n-1, (A + (n-1) B) chi, psi) + C(n-1, chi, A psi)

with ``[A, D] = D B`` and ``[D, B] = 0``.  Continuous-time models use the regularized
conjugate ``(H + i)^-1 A (H - i)^-1`` in place of ``A`` and ``l_t = t``.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import commutators as cm
from . import models as md
from . import opcore as oc

NOISE_FLOOR = 1e-13
BOUND_SLACK = 1e-10
AUXILIARY_TOL = 1e-6
MIN_FIT_POINTS = 8


class KernelVectorError(ValueError):
    """The prepared vector ``D^n chi`` vanishes numerically."""


class KernelVectorWarning(UserWarning):
    """``D^n chi`` is small; the bound constant is ill-conditioned."""


# coefficient series ------------------------------------------------------------------


def decay_window(m):
    """Validity window for quantities that use the conjugate ``A``.

    Models whose grid conjugate only follows the continuum relation up to a resolution
    limit record it as ``spectral_horizon``; Birkhoff sums remain exact beyond it.
    """
    return min(float(m.validity_window), float(m.metadata.get("spectral_horizon", np.inf)))


def default_grid(m, horizon=None):
    """Log-spaced default grid: powers up to 1e4 (at most 200) or times on [1, 100]."""
    limit = decay_window(m) if horizon is None else min(decay_window(m), horizon)
    if m.kind == "regular_rep_Zd":
        return np.arange(1, len(m.net.elements) + 1)
    if m.discrete:
        top = int(min(limit, 10_000))
        if top < 1:
            raise cm.HorizonError(f"validity window of {m.kind} is empty")
        return np.unique(np.geomspace(1, top, 200).round().astype(int))
    top = min(100.0, limit)
    if top <= 1.0:
        raise cm.HorizonError(f"validity window of {m.kind} ends before t = 1")
    return np.geomspace(1.0, top, 200)


def _check_support(m, *vecs):
    for v in vecs:
        if not m.probe_support_ok(v):
            raise ValueError(f"vector not supported in the interior of {m.kind}")


def coefficient_series(m, phi, psi, grid, horizon=None, check_support=True):
    """``|<phi, U^n psi>|`` (powers), ``|<phi, exp(-itH) psi>|`` (times), or
    ``|<phi, U(x_j) psi>|`` along the net of the regular representation (``grid`` holds
    net positions ``j``)."""
    phi, psi = oc.as_array(phi), oc.as_array(psi)
    if check_support:
        _check_support(m, phi, psi)
    grid = np.asarray(grid)
    if grid.size and (np.any(np.diff(grid) <= 0) or grid[0] <= 0):
        raise ValueError("grid must be positive and strictly increasing")
    limit = decay_window(m) if horizon is None else min(decay_window(m), horizon)
    if grid.size and grid[-1] > limit:
        raise cm.HorizonError(f"index {grid[-1]} exceeds the window {limit:g} of {m.kind}")
    if m.kind == "regular_rep_Zd":
        out = []
        for j in grid:
            u = md.regular_rep_operator(m, m.net.elements[int(j) - 1])
            out.append(abs(np.vdot(phi, u.apply(psi))))
        return np.array(out)
    if not m.discrete:
        c_phi = m.spectral.to_eig(phi)
        c_psi = m.spectral.to_eig(psi)
        weights = np.conj(c_phi) * c_psi
        lam = m.spectral.eigenvalues
        return np.abs(np.exp(-1j * np.outer(grid, lam)) @ weights)
    out = np.empty(grid.size)
    v = psi.astype(complex)
    done = 0
    for i, n in enumerate(grid):
        for _ in range(int(n) - done):
            v = m.generator.apply(v)
        done = int(n)
        out[i] = abs(np.vdot(phi, v))
    return out


# prepared vectors ----------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedVectors:
    """``phi = D^n chi`` (unit norm), ``psi`` (unit norm) and the growth of
    ``||A^k chi||``, ``||A^k psi||`` for ``k <= n``."""

    order: int
    phi: np.ndarray
    psi: np.ndarray
    chi: np.ndarray
    chi_scale: float
    chi_growth: tuple
    psi_growth: tuple
    horizon: float
    labels: tuple = ("phi", "psi")


def default_profiles(m):
    """Interior Gaussian profiles for ``chi`` and ``psi``."""
    kind = m.kind
    if kind == "fock":
        # near the vacuum the spectral measure has square-root edges
        return ({"shape": "gaussian", "center": 1.0, "width": 1.5},
                {"shape": "gaussian", "center": 2.0, "width": 1.0})
    if kind == "fractional_laplacian":
        # broad Fourier packets clear of k = 0, where the symbol is not smooth
        k0 = min(4.0, np.pi * m.params["N"] / m.params["L"] / 3)
        return ({"shape": "gaussian", "center": 0.0, "width": k0 / 10, "momentum": k0,
                 "domain": "fourier"},
                {"shape": "gaussian", "center": 1.0, "width": k0 / 8, "momentum": 1.1 * k0,
                 "domain": "fourier"})
    if kind == "stark_1d":
        return ({"shape": "gaussian", "center": 0.0, "width": 0.5},
                {"shape": "gaussian", "center": 0.3, "width": 0.7})
    if kind == "shift_Z":
        return ({"shape": "box", "center": 0.5, "radius": 0.5},
                {"shape": "box", "center": 0.5, "radius": 0.5})
    if kind == "quantum_walk_Z":
        # widths shrink with the interior so the tails stay below the support tolerance
        half = float(np.max(np.abs(m.coordinates[m.interior_mask])))
        return ({"shape": "gaussian", "center": 0.0, "width": min(4.0, half / 9),
                 "momentum": 0.8},
                {"shape": "gaussian", "center": 2.0, "width": min(5.0, (half - 2) / 9),
                 "momentum": -0.4})
    if kind == "regular_rep_Zd":
        return ({"shape": "box", "center": 0.0, "radius": 5.0},
                {"shape": "box", "center": 2.0, "radius": 7.0})
    if kind == "skew_product_u1":
        return ({"shape": "gaussian", "center": 0.5, "width": 0.05},
                {"shape": "gaussian", "center": 0.3, "width": 0.08})
    span = np.ptp(m.coordinates[m.interior_mask]) if m.coordinates.ndim == 1 else 1.0
    return ({"shape": "gaussian", "center": 0.0, "width": span / 16},
            {"shape": "gaussian", "center": 0.0, "width": span / 12})


def _growth(op, v, n):
    out = []
    w = v
    for _ in range(n + 1):
        out.append(float(np.linalg.norm(w)))
        w = op.apply(w)
    return tuple(out)


def vector_horizon(m, vecs, tol=1e-10):
    """Longest time/power for which the evolved vectors stay in the interior."""
    outside = ~m.interior_mask
    if not outside.any():
        return decay_window(m)
    block = np.array([oc.as_array(v) for v in vecs]).T.astype(complex)
    if m.discrete:
        top = int(decay_window(m))
        for n in range(1, top + 1):
            block = m.generator.apply(block)
            leak = np.linalg.norm(block[outside], axis=0)
            if np.max(leak) > tol:
                return float(n - 1)
        return float(top)
    cap = decay_window(m)
    if cap <= 0:
        return 0.0

    def leaks(t):
        moved = oc.evolve(m.spectral, t, block)
        leak = np.linalg.norm(moved[outside], axis=0) / np.linalg.norm(moved, axis=0)
        return np.max(leak) > tol

    # coarse scan, then bisection inside the first failing interval
    coarse = np.linspace(0.0, cap, 17)
    lo = 0.0
    for hi in coarse[1:]:
        if leaks(hi):
            break
        lo = hi
    else:
        return cap
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if leaks(mid) else (mid, hi)
    return float(lo)


def prepare_vectors(m, order, chi_profile=None, psi_profile=None):
    """Build ``phi = D^n chi`` and ``psi`` from profiles.

    ``chi`` is rescaled so that ``phi`` has unit norm; ``chi_scale`` records the
    factor.  Raises :class:`KernelVectorError` when ``||D^n chi|| < 1e-12`` for the unit
    profile and warns below 1e-6.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    if m.expected_D is None:
        raise ValueError(f"{m.kind} declares no limit D")
    chi_p, psi_p = default_profiles(m)
    chi = md.profile_vector(m, chi_profile or chi_p)
    psi = md.profile_vector(m, psi_profile or psi_p)
    phi = chi
    for _ in range(order):
        phi = m.expected_D.apply(phi)
    size = float(np.linalg.norm(phi))
    if size < 1e-12:
        raise KernelVectorError(f"D^{order} chi vanishes (norm {size:.2e}): chi lies in the "
                                "kernel of D, where no decay bound applies")
    _check_support(m, chi, psi)
    if size < 1e-6:
        warnings.warn(f"||D^{order} chi|| = {size:.2e} is small", KernelVectorWarning,
                      stacklevel=2)
    scale = 1.0 / size
    chi = chi * scale
    phi = phi * scale
    a_op = m.bound_conjugate
    # D commutes with the dynamics and its kernel tail is absorbed by the interior
    # margin, so the local vectors chi and psi set the horizon
    horizon = vector_horizon(m, [psi, chi])
    return PreparedVectors(order, phi, psi, chi, scale, _growth(a_op, chi, order),
                           _growth(a_op, psi, order), horizon)


# bound constants -----------------------------------------------------------------------


def _c1(a_op, chi, psi):
    return (np.linalg.norm(a_op.apply(chi)) * np.linalg.norm(psi)
            + np.linalg.norm(chi) * np.linalg.norm(a_op.apply(psi)))


def _recursion(a_op, b_op, n, chi, psi, visited):
    visited.append(chi)
    if n == 1:
        return _c1(a_op, chi, psi)
    shifted = a_op.apply(chi)
    if n > 1:
        shifted = shifted + (n - 1) * b_op.apply(chi)
    return (_recursion(a_op, b_op, n - 1, shifted, psi, visited)
            + _recursion(a_op, b_op, n - 1, chi, a_op.apply(psi), visited))


def auxiliary_residuals(m, vectors):
    """Largest relative ``||([A, D] - D B) v||`` and ``||[D, B] v||`` over ``vectors``."""
    a_op, d_op, b_op = m.bound_conjugate, m.expected_D, m.auxiliary_B
    worst_ab = worst_db = 0.0
    for v in vectors:
        nv = max(np.linalg.norm(v), 1e-300)
        ad = a_op.apply(d_op.apply(v)) - d_op.apply(a_op.apply(v))
        r1 = np.linalg.norm(ad - d_op.apply(b_op.apply(v))) / nv
        r2 = np.linalg.norm(d_op.apply(b_op.apply(v)) - b_op.apply(d_op.apply(v))) / nv
        worst_ab, worst_db = max(worst_ab, r1), max(worst_db, r2)
    return float(worst_ab), float(worst_db)


def bound_constant(m, order, chi, psi):
    """Recursive constant ``C(order, chi, psi)`` for ``phi = D^order chi``."""
    chi, psi = oc.as_array(chi), oc.as_array(psi)
    a_op = m.bound_conjugate
    if order == 1:
        return float(_c1(a_op, chi, psi))
    if m.auxiliary_B is None or m.expected_D is None:
        raise ValueError(f"{m.kind} has no auxiliary operator B; only order 1 is available")
    visited = []
    value = _recursion(a_op, m.auxiliary_B, order, chi, psi, visited)
    r_ab, r_db = auxiliary_residuals(m, visited)
    if r_ab > AUXILIARY_TOL or r_db > AUXILIARY_TOL:
        raise ValueError(f"auxiliary relations fail on the recursion vectors "
                         f"([A,D]-DB: {r_ab:.2e}, [D,B]: {r_db:.2e}); order {order} refused")
    return float(value)


# fitting --------------------------------------------------------------------------------


def _envelope(x, y):
    """Local maxima of ``y`` when it oscillates, else ``(x, y)`` unchanged."""
    d = np.diff(y)
    turns = np.count_nonzero(np.sign(d[1:]) * np.sign(d[:-1]) < 0)
    if turns < 2:
        return x, y
    peaks = np.nonzero((y[1:-1] >= y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    return x[peaks], y[peaks]


def fit_decay_order(index, series, window=None, confidence=0.95):
    """Slope of ``log|series|`` against ``log index`` on the upper envelope.

    Entries below the 1e-13 noise floor are dropped.  Returns ``(slope, half_width)``
    where the half-width is the t-quantile times the slope's standard error.
    """
    x = np.asarray(index, dtype=float)
    y = np.abs(np.asarray(series, dtype=float))
    if window is not None:
        keep = (x >= window[0]) & (x <= window[1])
        x, y = x[keep], y[keep]
    keep = y > NOISE_FLOOR
    x, y = x[keep], y[keep]
    if x.size >= 3:
        x, y = _envelope(x, y)
    if x.size < MIN_FIT_POINTS:
        raise ValueError(f"too few usable points ({x.size} < {MIN_FIT_POINTS})")
    fit = stats.linregress(np.log(x), np.log(y))
    q = stats.t.ppf(0.5 + confidence / 2, x.size - 2)
    return float(fit.slope), float(q * fit.stderr)


# verification -----------------------------------------------------------------------------


@dataclass
class DecayReport:
    model: str
    labels: tuple
    mode: str
    order: int
    constant: float
    index: np.ndarray
    lengths: np.ndarray
    series: np.ndarray
    bound: np.ndarray
    verdicts: np.ndarray
    slope: float | None = None
    half_width: float | None = None
    residual_term: np.ndarray | None = None
    slack: float = BOUND_SLACK
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(np.all(self.verdicts))

    def recompute_verdicts(self):
        return self.series <= self.bound + self.slack

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = [x.item() for x in v]
        d["labels"] = list(self.labels)
        d["passed"] = self.passed
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["index", "length", "series", "bound", "pass"])
            for row in zip(self.index, self.lengths, self.series, self.bound, self.verdicts):
                out.writerow([repr(row[0].item()), repr(float(row[1])), repr(float(row[2])),
                              repr(float(row[3])), str(bool(row[4])).lower()])

    def write_dat(self, stem):
        """Two-column gnuplot files ``<stem>_series.dat`` and ``<stem>_bound.dat``."""
        paths = []
        for name, col in (("series", self.series), ("bound", self.bound)):
            path = f"{stem}_{name}.dat"
            with open(path, "w") as fh:
                fh.write(f"# length {name}\n")
                for x, y in zip(self.lengths, col):
                    fh.write(f"{float(x)!r} {float(y)!r}\n")
            paths.append(path)
        return paths


def verify_bound(m, index, series, constant, order=1, lengths=None, residual=None,
                 labels=("phi", "psi"), fit_window=None, slack=BOUND_SLACK):
    """Compare a coefficient series with ``residual + constant / l^order``.

    ``residual`` (optional, per index) carries the ``||(D - D_j) phi~|| ||psi||`` term of
    the general estimate.  A failure is recorded in the verdicts, not raised.
    """
    index = np.asarray(index)
    series = np.asarray(series, dtype=float)
    ell = np.asarray(index if lengths is None else lengths, dtype=float)
    bound = constant / ell ** order
    if residual is not None:
        residual = np.asarray(residual, dtype=float)
        bound = bound + residual
    verdicts = series <= bound + slack
    slope = half = None
    if fit_window is not None:
        try:
            slope, half = fit_decay_order(ell, series, fit_window)
        except ValueError:
            pass
    mode = "residual" if residual is not None else "exact"
    return DecayReport(m.kind, tuple(labels), mode, order, float(constant), index, ell,
                       series, bound, verdicts, slope, half, residual, slack)


def decay_experiment(m, order=1, grid=None, chi_profile=None, psi_profile=None,
                     fit_window=None, slack=BOUND_SLACK):
    """Prepare vectors, measure the series and check the order-``order`` bound."""
    prep = prepare_vectors(m, order, chi_profile, psi_profile)
    grid = default_grid(m, prep.horizon) if grid is None else np.asarray(grid)
    # prepare_vectors checked chi and psi; phi = D^n chi carries D's kernel tail
    series = coefficient_series(m, prep.phi, prep.psi, grid, horizon=prep.horizon,
                                check_support=False)
    const = bound_constant(m, order, prep.chi, prep.psi)
    report = verify_bound(m, grid, series, const, order, fit_window=fit_window, slack=slack)
    report.extra.update(chi_scale=prep.chi_scale, horizon=prep.horizon,
                        chi_growth=list(prep.chi_growth), psi_growth=list(prep.psi_growth))
    return report


def residual_mode_experiment(m, phi_tilde, psi, grid, slack=BOUND_SLACK):
    """General estimate with the measured ``||(D - D_j) phi~||`` term.

    Used where the limit is only estimated: ``phi = D phi~`` with ``D`` the reference of
    the Cesaro series (expected or extrapolated).
    """
    series_c = cm.cesaro_discrete(m, grid, [phi_tilde])
    d_phi = series_c.reference[0]
    # the estimate is an identity for any D, so phi = D phi~ may leave the interior
    coeff = coefficient_series(m, d_phi, psi, grid, check_support=False)
    resid = series_c.residuals[:, 0] * np.linalg.norm(psi)
    const = _c1(m.conjugate, oc.as_array(phi_tilde), oc.as_array(psi))
    report = verify_bound(m, grid, coeff, const, 1, residual=resid, slack=slack)
    report.extra["reference"] = series_c.reference_label
    return report


# regular representation: improved bound with exact integer arithmetic ----------------


def _leq_sum_of_roots(lhs, a, b, k=3):
    """Exact test of ``lhs <= k sqrt(a) + sqrt(b)`` for non-negative integers."""
    if lhs * lhs <= k * k * a:
        return True
    # lhs - k sqrt(a) > 0: square both sides
    r = lhs * lhs + k * k * a - b
    if r <= 0:
        return True
    return r * r <= 4 * k * k * lhs * lhs * a


@dataclass
class ImprovedBoundReport:
    index: np.ndarray
    coefficients: list
    lengths: list
    lhs: list
    bound: np.ndarray
    verdicts: list

    @property
    def passed(self):
        return all(self.verdicts)


def regular_rep_improved_bound(m, phi, psi):
    """Check ``|<phi, U(x_j) psi>| <= (2 ||l phi|| ||psi|| + c) / l(x_j)`` exactly.

    ``phi`` and ``psi`` are integer vectors on the box; with ``D = -1`` one has
    ``c = ||l phi|| ||psi|| + ||phi|| ||l psi||``, so the claim reads
    ``l(x_j) |<phi, U(x_j) psi>| <= 3 sqrt(a) + sqrt(b)`` with integers
    ``a = ||l phi||^2 ||psi||^2`` and ``b = ||phi||^2 ||l psi||^2``.
    """
    if m.kind != "regular_rep_Zd":
        raise ValueError("the improved bound applies to the regular representation")
    phi = np.asarray(phi)
    psi = np.asarray(psi)
    if not (np.issubdtype(phi.dtype, np.integer) and np.issubdtype(psi.dtype, np.integer)):
        raise ValueError("exact check needs integer vectors")
    _check_support(m, phi.astype(float), psi.astype(float))
    sites = m.metadata["sites"]
    ell = [int(v) for v in np.abs(sites).sum(axis=1)]
    phi_l = [int(v) for v in phi]
    psi_l = [int(v) for v in psi]
    sq = lambda v: sum(x * x for x in v)
    lphi = sq([l * x for l, x in zip(ell, phi_l)])
    lpsi = sq([l * x for l, x in zip(ell, psi_l)])
    a = lphi * sq(psi_l)
    b = sq(phi_l) * lpsi
    half = m.params["L"]
    side = 2 * half + 1
    d = m.params["d"]
    coeffs, lengths, lhs_list, verdicts = [], [], [], []
    for x in m.net.elements:
        # (U(x) psi)(y) = psi(y - x); the support stays clear of the periodic seam
        src = np.ravel_multi_index(((sites - np.array(x) + half) % side).T, (side,) * d)
        coeff = sum(p * psi_l[s] for p, s in zip(phi_l, src) if p)
        length = md.word_length(x)
        lhs = abs(coeff) * length
        coeffs.append(coeff)
        lengths.append(length)
        lhs_list.append(lhs)
        verdicts.append(_leq_sum_of_roots(lhs, a, b))
    bound = (3 * np.sqrt(float(a)) + np.sqrt(float(b))) / np.array(lengths, dtype=float)
    return ImprovedBoundReport(np.arange(1, len(lengths) + 1), coeffs, lengths, lhs_list,
                               bound, verdicts)
