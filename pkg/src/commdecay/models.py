"""Finite truncations of the example systems.

Each builder returns a :class:`ModelInstance` bundling the generator (a unitary ``U``
for discrete time or a Hermitian ``H`` for continuous time), a conjugate operator
``A``, the declared commutation relation, the expected Cesaro limit ``D`` when one is
known, the auxiliary operator ``B`` with ``[A, D] = DB`` used by higher-order bounds,
and the region and horizon on which truncation artifacts are absent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from . import opcore as oc

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
RELATION_TOL = 1e-8


class ModelError(ValueError):
    """Invalid parameters or a failed construction check."""


class DegenerateDispersionWarning(UserWarning):
    """Walk dispersion with crossing or flat bands."""


@dataclass(frozen=True)
class Relation:
    """Declared commutation relation ``commutator = rhs``.

    ``method`` selects how :func:`relation_residual` measures it by default;
    ``tolerance=None`` marks a relation that holds only modulo a compact remainder.
    """

    tag: str
    rhs: oc.Operator
    method: str
    tolerance: float | None = RELATION_TOL


@dataclass(frozen=True)
class NetSpec:
    """Net of group elements (with a length function) or a time/power grid."""

    kind: str
    elements: tuple
    length: Callable | None = None

    def lengths(self):
        if self.length is None:
            return np.asarray(self.elements, dtype=float)
        return np.array([self.length(x) for x in self.elements], dtype=float)


@dataclass(frozen=True)
class ModelInstance:
    kind: str
    params: dict
    dim: int
    time: str
    generator: oc.Operator
    spectral: oc.SpectralData | None
    conjugate: oc.Operator
    relation: Relation
    commutator: oc.Operator
    log_derivative: oc.Operator | None
    expected_D: oc.Operator | None
    auxiliary_B: oc.Operator | None
    bound_conjugate: oc.Operator
    exact_D: bool
    validity_window: float
    interior_mask: np.ndarray
    coordinates: np.ndarray
    residual_probes: tuple = ()
    net: NetSpec | None = None
    functions: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def declared_relation(self):
        return self.relation

    @property
    def discrete(self):
        return self.time == "discrete"

    def probe_support_ok(self, v, tol=1e-12):
        """True when ``v`` is negligible outside the interior."""
        v = oc.as_array(v)
        outside = np.linalg.norm(v[~self.interior_mask])
        return outside <= tol * max(np.linalg.norm(v), 1e-300)


# kind registry ---------------------------------------------------------------------

KINDS = {
    "shift_Z": dict(
        time="discrete", params=dict(N=64, buffer=None),
        relation="[A,U]U^-1 = 1", family="bilateral shift, position conjugate"),
    "regular_rep_Zd": dict(
        time="discrete", params=dict(d=1, L=200, J=100),
        relation="[A,U(x)]U(x)^-1 = l(.) - l(. - x)", family="left regular representation of Z^d"),
    "fock": dict(
        time="continuous", params=dict(N=512, buffer=None),
        relation="[iH,A] = 1 - H^2", family="Fock-space Schroedinger operator Re(S)"),
    "fractional_laplacian": dict(
        time="continuous", params=dict(N=4096, L=1024.0, s=1.0),
        relation="[iH,A] = sH", family="fractional Laplacian |P|^s with dilations"),
    "stark_1d": dict(
        time="continuous", params=dict(N=2048, L=16.0, frame="energy"),
        relation="[iH,A] = 1", family="Stark Hamiltonian P^2 + X"),
    "hyperbolic_2d": dict(
        time="continuous", params=dict(n=64, L=24.0),
        relation="[iH,A] = 2H", family="hyperbolic operator -d_xx + d_yy with dilations"),
    "skew_product_u1": dict(
        time="discrete", params=dict(M=2048, alpha=GOLDEN, w=1, eps=0.0),
        relation="[A,U]U^-1 = theta'", family="U(1) skew product over a circle rotation"),
    "quantum_walk_Z": dict(
        time="discrete",
        params=dict(N=256, coin="hadamard", anisotropic=False, coin_left="hadamard",
                    coin_right="hadamard", kappa=0.5, eps=1.0, buffer=None, conjugate=None),
        relation="[A,U]U^-1 = {Z,V0}/2 (U = SC)", family="coined quantum walk on Z"),
}


def build_model(kind, params=None):
    """Build the model ``kind`` with ``params`` overriding the registry defaults."""
    if kind not in KINDS:
        raise ModelError(f"unknown model kind {kind!r}; known kinds: {', '.join(KINDS)}")
    given = dict(params or {})
    unknown = set(given) - set(KINDS[kind]["params"])
    if unknown:
        raise ModelError(f"unknown parameters for {kind}: {', '.join(sorted(unknown))}")
    p = dict(KINDS[kind]["params"])
    p.update(given)
    m = _BUILDERS[kind](p)
    if m.relation.tolerance is not None:
        r = relation_residual(m)
        if not r <= m.relation.tolerance:
            raise ModelError(f"{kind}: declared relation residual {r:.3e} exceeds "
                             f"{m.relation.tolerance:.1e}")
        m.metadata["relation_residual"] = r
    return m


# helpers -----------------------------------------------------------------------------


def _int_param(p, name, lo, hi=None):
    v = p[name]
    if isinstance(v, bool) or int(v) != v:
        raise ModelError(f"{name} must be an integer, got {v!r}")
    v = int(v)
    if v < lo or (hi is not None and v > hi):
        raise ModelError(f"{name}={v} outside [{lo}, {hi if hi is not None else 'inf'}]")
    return v


def _float_param(p, name, lo=None, hi=None, open_interval=False):
    v = float(p[name])
    if not math.isfinite(v):
        raise ModelError(f"{name} must be finite")
    if open_interval:
        if (lo is not None and v <= lo) or (hi is not None and v >= hi):
            raise ModelError(f"{name}={v} outside ({lo}, {hi})")
    elif (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ModelError(f"{name}={v} outside [{lo}, {hi}]")
    return v


def _periodic_grid(n, length):
    dx = length / n
    x = (np.arange(n) - n // 2) * dx
    k = 2 * np.pi * np.fft.fftfreq(n, dx)
    return x, k, dx


def _gaussian(c, center, width, momentum=0.0):
    return np.exp(-((c - center) ** 2) / (2 * width ** 2) + 1j * momentum * (c - center))


def _smooth_probes(coords, lo, hi, count=4, seed=0):
    """Normalized Gaussian wave packets well inside ``[lo, hi]``."""
    rng = np.random.default_rng(seed)
    span = hi - lo
    probes = []
    for j in range(count):
        center = lo + span * (0.3 + 0.4 * rng.random())
        width = span * (0.04 + 0.04 * rng.random())
        momentum = (j - count / 2) * 0.5 / width
        v = _gaussian(coords, center, width, momentum)
        probes.append(v / np.linalg.norm(v))
    return tuple(probes)


def _fourier_probes(k, origin, length):
    """Packets with Gaussian Fourier profiles kept away from ``k = 0``."""
    sigma = 32.0 / length
    probes = []
    for center, k0 in ((0.0, 8 * sigma), (-length / 16, -10 * sigma), (length / 16, 12 * sigma)):
        hat = np.exp(-((k - k0) ** 2) / (2 * sigma ** 2))
        v = np.fft.ifft(hat * np.exp(1j * k * (origin - center)))
        probes.append(v / np.linalg.norm(v))
    return tuple(probes)


def _resolvent_sandwich(spec, a_op):
    """``(H + i)^-1 A (H - i)^-1`` as an unevaluated product."""
    rp = oc.func_calculus(spec, lambda x: 1.0 / (x + 1j))
    rm = oc.func_calculus(spec, lambda x: 1.0 / (x - 1j))
    return oc.lazy_product(rp, a_op, rm, hermitian=True)


def _fh_functions(f, df):
    """``g = f <.>^-2`` and its derivative for a relation ``[iH, A] = f(H)``."""
    g = lambda x: f(x) / (1.0 + x ** 2)
    dg = lambda x: df(x) / (1.0 + x ** 2) - 2.0 * x * f(x) / (1.0 + x ** 2) ** 2
    return dict(f=f, df=df, g=g, dg=dg)


def _continuous_model(kind, p, h_op, a_op, rhs, tag, method, fns, window, interior, coords,
                      probes, spec=None, metadata=None):
    spec = spec if spec is not None else oc.eig(h_op)
    comm = 1j * (h_op @ a_op - a_op @ h_op)
    comm.hermitian = True
    d_op = oc.func_calculus(spec, fns["g"])
    b_op = 1j * oc.func_calculus(spec, fns["dg"])
    # the regularized commutator sees R- phi; if that leaves the interior no time is safe
    leak = _resolvent_leak(spec, probes, interior)
    metadata = dict(metadata or {}, resolvent_leak=leak)
    if leak > 1e-10:
        window = 0.0
    return ModelInstance(
        kind=kind, params=p, dim=h_op.dim, time="continuous", generator=h_op, spectral=spec,
        conjugate=a_op, relation=Relation(tag, rhs, method), commutator=comm,
        log_derivative=None, expected_D=d_op, auxiliary_B=b_op,
        bound_conjugate=_resolvent_sandwich(spec, a_op), exact_D=True,
        validity_window=float(window), interior_mask=interior, coordinates=coords,
        residual_probes=probes, functions=fns, metadata=metadata)


def _resolvent_leak(spec, probes, interior):
    """Largest relative mass of ``(H - i)^-1 phi`` outside the interior."""
    block = np.array(probes).T
    out = spec.from_eig(spec.to_eig(block) / (spec.eigenvalues - 1j)[:, None])
    return float(np.max(np.linalg.norm(out[~interior], axis=0) / np.linalg.norm(out, axis=0)))


def _propagation_window(spec, probes, interior, t_cap, tol=1e-10, samples=256):
    """First time at which an evolved probe leaks more than ``tol`` out of ``interior``."""
    outside = ~interior
    block = np.array(probes).T
    for t in np.linspace(0.0, t_cap, samples + 1)[1:]:
        moved = oc.evolve(spec, t, block)
        leak = np.linalg.norm(moved[outside], axis=0) / np.linalg.norm(moved, axis=0)
        if np.max(leak) > tol:
            return float(t - t_cap / samples)
    return float(t_cap)


def _leakage_window(distance, hopping=0.5, tol=1e-14):
    """Largest t with ``(e t hopping / d)^d <= tol`` (nearest-neighbour hopping bound)."""
    d = max(int(distance), 1)
    return d / (math.e * hopping) * tol ** (1.0 / d)


# shift -------------------------------------------------------------------------------


def _build_shift(p):
    n = _int_param(p, "N", 8)
    buffer = n // 4 if p["buffer"] is None else _int_param(p, "buffer", 1, n // 2 - 1)
    j = np.arange(n)
    u = oc.make_sparse(sp.csr_matrix((np.ones(n), ((j + 1) % n, j)), shape=(n, n)),
                       unitary=True)
    pos = (j - n // 2).astype(float)
    a = oc.make_diagonal(pos, hermitian=True)
    k_op = a - u @ a @ u.adjoint()
    interior = (j >= buffer) & (j < n - buffer)
    one = oc.identity(n)
    zero = oc.make_diagonal(np.zeros(n), hermitian=True)
    probes = tuple(np.eye(n)[c] for c in (n // 2 - 1, n // 2, n // 2 + 1))
    return ModelInstance(
        kind="shift_Z", params=p, dim=n, time="discrete", generator=u, spectral=None,
        conjugate=a, relation=Relation(KINDS["shift_Z"]["relation"], one, "operator"),
        commutator=k_op, log_derivative=k_op, expected_D=one, auxiliary_B=zero,
        bound_conjugate=a, exact_D=True, validity_window=float(buffer),
        interior_mask=interior, coordinates=pos, residual_probes=probes,
        metadata=dict(truncation="cyclic", buffer=buffer))


# regular representation --------------------------------------------------------------


def word_length(x):
    """Word length on Z^d for the standard generators (the l1 norm)."""
    return int(np.sum(np.abs(np.atleast_1d(x))))


def _box_sites(d, half):
    axes = [np.arange(-half, half + 1)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def regular_rep_operator(m, x):
    """The translation ``(U(x) phi)(y) = phi(y - x)`` on the periodic box of ``m``."""
    if m.kind != "regular_rep_Zd":
        raise ModelError("regular_rep_operator needs a regular_rep_Zd model")
    x = np.atleast_1d(np.asarray(x, dtype=int))
    d, half = m.params["d"], m.params["L"]
    side = 2 * half + 1
    sites = m.metadata["sites"]
    target = (sites + x + half) % side
    rows = np.ravel_multi_index(target.T, (side,) * d)
    cols = np.arange(sites.shape[0])
    n = sites.shape[0]
    return oc.make_sparse(sp.csr_matrix((np.ones(n), (rows, cols)), shape=(n, n)), unitary=True)


def regular_rep_log_derivative(m, x):
    """Exact ``[A, U(x)] U(x)^-1`` on the box (includes wrap-around artifacts)."""
    u = regular_rep_operator(m, x)
    return m.conjugate - u @ m.conjugate @ u.adjoint()


def regular_rep_expected_log_derivative(m, x):
    """Multiplication by ``l(y) - l(y - x)`` computed in Z^d."""
    x = np.atleast_1d(np.asarray(x, dtype=int))
    sites = m.metadata["sites"]
    vals = np.abs(sites).sum(axis=1) - np.abs(sites - x).sum(axis=1)
    return oc.make_diagonal(vals.astype(float), hermitian=True)


def _build_regular(p):
    d = _int_param(p, "d", 1, 3)
    half = _int_param(p, "L", 2)
    jmax = _int_param(p, "J", 1)
    if (2 * half + 1) ** d > 2**20:
        raise ModelError("box too large")
    if jmax >= half:
        raise ModelError("net length J must be smaller than the box half-width L")
    sites = _box_sites(d, half)
    n = sites.shape[0]
    ell = np.abs(sites).sum(axis=1).astype(float)
    a = oc.make_diagonal(ell, hermitian=True)
    radius = half - jmax
    interior = np.max(np.abs(sites), axis=1) <= radius
    e1 = np.zeros(d, dtype=int)
    e1[0] = 1
    elements = tuple(tuple(int(c) for c in j * e1) for j in range(1, jmax + 1))
    net = NetSpec("group", elements, word_length)
    meta = dict(sites=sites, interior_radius=radius)
    stub = ModelInstance(
        kind="regular_rep_Zd", params=dict(p, d=d, L=half, J=jmax), dim=n, time="discrete",
        generator=None, spectral=None, conjugate=a, relation=None, commutator=None,
        log_derivative=None, expected_D=None, auxiliary_B=None, bound_conjugate=a,
        exact_D=False, validity_window=float(jmax), interior_mask=interior,
        coordinates=sites[:, 0].astype(float) if d == 1 else sites.astype(float),
        net=net, metadata=meta)
    u = regular_rep_operator(stub, e1)
    k_op = regular_rep_log_derivative(stub, e1)
    rhs = regular_rep_expected_log_derivative(stub, e1)
    minus_one = oc.make_diagonal(-np.ones(n), hermitian=True, unitary=True)
    center = np.zeros(n)
    center[np.argmin(ell)] = 1.0
    return ModelInstance(
        kind="regular_rep_Zd", params=stub.params, dim=n, time="discrete", generator=u,
        spectral=None, conjugate=a,
        relation=Relation(KINDS["regular_rep_Zd"]["relation"], rhs, "net"),
        commutator=k_op, log_derivative=k_op, expected_D=minus_one, auxiliary_B=None,
        bound_conjugate=a, exact_D=False, validity_window=float(jmax),
        interior_mask=interior, coordinates=stub.coordinates, residual_probes=(center,),
        net=net, metadata=meta)


def check_length_axioms(net, sample=None):
    """Check l(0)=0, l(-x)=l(x) and subadditivity on all sampled pairs (exact integers)."""
    if net.length is None:
        raise ModelError("net has no length function")
    elems = list(sample if sample is not None else net.elements)
    d = len(elems[0])
    zero = tuple([0] * d)
    if net.length(zero) != 0:
        return False
    for x in elems:
        neg = tuple(-c for c in x)
        if net.length(neg) != net.length(x) or net.length(x) < 0:
            return False
    for x in elems:
        for y in elems:
            s = tuple(a + b for a, b in zip(x, y))
            if net.length(s) > net.length(x) + net.length(y):
                return False
    return True


# Fock ----------------------------------------------------------------------------------


def _build_fock(p):
    n = _int_param(p, "N", 16, oc.TRIDIAGONAL_CAP)
    buffer = max(n // 4, 8) if p["buffer"] is None else _int_param(p, "buffer", 2, n - 2)
    s = sp.diags(np.ones(n - 1), -1, format="csr").astype(complex)
    h = oc.make_sparse((s + s.T) / 2, hermitian=True)
    im_s = oc.make_sparse((s - s.T) / 2j, hermitian=True)
    # number operator of the isometry: U N U* = N - 1 forces N e_k = (k + 1) e_k
    number = oc.make_diagonal(np.arange(1, n + 1, dtype=float), hermitian=True)
    a = oc.make_sparse(((im_s @ number + number @ im_s) * 0.5).data, hermitian=True)
    rhs = oc.make_sparse((sp.identity(n, format="csr") - h.data @ h.data), hermitian=True)
    idx = np.arange(n)
    interior = idx < n - buffer
    fns = _fh_functions(lambda x: 1.0 - x ** 2, lambda x: -2.0 * x)
    coords = idx.astype(float)
    probes = tuple(np.eye(n)[c] for c in (0, 1, (n - buffer) // 2))
    return _continuous_model(
        "fock", dict(p, N=n, buffer=buffer), h, a, rhs, KINDS["fock"]["relation"], "operator",
        fns, _leakage_window(buffer), interior, coords, probes,
        metadata=dict(truncation="open", buffer=buffer))


# Fourier-symbol models ---------------------------------------------------------------


def _dilation_generator(coords, momenta, grid):
    """``(QP + PQ)/2`` summed over coordinate axes, kept unevaluated."""
    terms = None
    for q_vals, k_sym in zip(coords, momenta):
        q = oc.make_diagonal(q_vals, hermitian=True)
        pk = oc.make_fourier_diagonal(k_sym, hermitian=True, grid=grid)
        t = (q @ pk + pk @ q) * 0.5
        terms = t if terms is None else terms + t
    terms.hermitian = True
    return terms


def _build_fractional(p):
    n = _int_param(p, "N", 16, 2**16)
    length = _float_param(p, "L", 1e-6, open_interval=True)
    s = _float_param(p, "s", 0.0, 2.0, open_interval=True)
    x, k, dx = _periodic_grid(n, length)
    symbol = lambda kk: (kk * kk) ** (s / 2)
    h = oc.make_fourier_diagonal(symbol(k), hermitian=True)
    a = _dilation_generator([x], [k], (n,))
    rhs = h * s
    fns = _fh_functions(lambda lam: s * lam, lambda lam: s + 0.0 * lam)
    fns["symbol"] = symbol
    interior = np.abs(x) <= 3 * length / 8
    probes = _fourier_probes(k, x[0], length)
    spec = oc.eig(h)
    window = _propagation_window(spec, probes, interior, length)
    return _continuous_model(
        "fractional_laplacian", dict(p, N=n, L=length, s=s), h, a, rhs,
        KINDS["fractional_laplacian"]["relation"], "symbol", fns, window, interior, x, probes,
        spec=spec,
        metadata=dict(dx=dx, momenta=k, origin=x[0], profile_domain="fourier",
                      grid=(n,)))


def _build_stark(p):
    n = _int_param(p, "N", 16, 2**16)
    length = _float_param(p, "L", 1e-6, open_interval=True)
    frame = p["frame"]
    x, k, dx = _periodic_grid(n, length)
    fns = _fh_functions(lambda lam: 1.0 + 0.0 * lam, lambda lam: 0.0 * lam)
    one = oc.identity(n)
    tag = KINDS["stark_1d"]["relation"]
    if frame == "energy":
        # energy representation: H multiplies by lambda, A = i d/d(lambda)
        h = oc.make_diagonal(x, hermitian=True)
        a = oc.make_fourier_diagonal(-k, hermitian=True)
        interior = np.abs(x) <= 3 * length / 8
        probes = _smooth_probes(x, -length / 4, length / 4)
        window = 0.5 * np.pi / dx
        return _continuous_model(
            "stark_1d", dict(p, N=n, L=length), h, a, one, tag, "probe", fns, window, interior,
            x, probes, metadata=dict(dx=dx, frame="energy", profile_domain="position",
                                     momenta=k, origin=x[0], grid=(n,)))
    if frame == "position":
        if n > oc.DENSE_CAP:
            raise ModelError("position-frame Stark model needs a dense eigendecomposition")
        kin = oc.make_fourier_diagonal(k ** 2, hermitian=True)
        pot = oc.make_diagonal(x, hermitian=True)
        h = oc.make_dense(kin.to_dense() + pot.to_dense(), hermitian=False)
        h = oc.make_dense(0.5 * (h.data + h.data.conj().T), hermitian=True)
        a = oc.make_fourier_diagonal(-k, hermitian=True)
        interior = np.abs(x) <= length / 4
        probes = _smooth_probes(x, -length / 8, length / 8)
        window = min(0.25 * np.max(np.abs(k)), math.sqrt(length / 4))
        return _continuous_model(
            "stark_1d", dict(p, N=n, L=length), h, a, one, tag, "probe", fns, window, interior,
            x, probes, metadata=dict(dx=dx, frame="position", profile_domain="position",
                                     momenta=k, origin=x[0], grid=(n,)))
    raise ModelError(f"frame must be 'energy' or 'position', got {frame!r}")


def _build_hyperbolic(p):
    n = _int_param(p, "n", 4, 256)
    length = _float_param(p, "L", 1e-6, open_interval=True)
    x, k, dx = _periodic_grid(n, length)
    grid = (n, n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    qx, qy = np.meshgrid(x, x, indexing="ij")
    symbol = lambda a_, b_: a_ * a_ - b_ * b_
    h = oc.make_fourier_diagonal(symbol(kx, ky), hermitian=True, grid=grid)
    a = _dilation_generator([qx.ravel(), qy.ravel()], [kx, ky], grid)
    rhs = h * 2.0
    fns = _fh_functions(lambda lam: 2.0 * lam, lambda lam: 2.0 + 0.0 * lam)
    fns["symbol"] = symbol
    coords = np.stack([qx.ravel(), qy.ravel()], axis=1)
    interior = np.max(np.abs(coords), axis=1) <= 3 * length / 8
    r2 = (qx.ravel() ** 2 + qy.ravel() ** 2) / (length / 24) ** 2
    probes = tuple(v / np.linalg.norm(v) for v in
                   (np.exp(-r2 / 2 + 0j), np.exp(-r2 / 2 + 1j * (qx - 0.5 * qy).ravel())))
    spec = oc.eig(h)
    window = _propagation_window(spec, probes, interior, length)
    return _continuous_model(
        "hyperbolic_2d", dict(p, n=n, L=length), h, a, rhs, KINDS["hyperbolic_2d"]["relation"],
        "symbol", fns, window, interior, coords, probes, spec=spec,
        metadata=dict(dx=dx, momenta=(kx, ky), grid=grid, profile_domain="position"))


# skew product ---------------------------------------------------------------------------


def _nearest_coprime(p, m):
    for delta in range(0, m):
        for c in (p - delta, p + delta):
            if 0 < c < m and math.gcd(c, m) == 1:
                return c
    raise ModelError("no rotation compatible with the grid")


def cocycle(x, w, eps):
    """Phase ``theta(x) = 2 pi w x + eps sin(2 pi x)`` and its derivative."""
    theta = 2 * np.pi * w * x + eps * np.sin(2 * np.pi * x)
    dtheta = 2 * np.pi * w + 2 * np.pi * eps * np.cos(2 * np.pi * x)
    return theta, dtheta


def _build_skew(p):
    m = _int_param(p, "M", 8, 2**22)
    alpha = _float_param(p, "alpha", 0.0, 1.0, open_interval=True)
    w = _int_param(p, "w", -64, 64)
    eps = _float_param(p, "eps", 0.0, 1.0)
    shift = _nearest_coprime(int(round(alpha * m)), m)
    x = np.arange(m) / m
    theta, dtheta = cocycle(x, w, eps)
    j = np.arange(m)
    u = oc.make_sparse(sp.csr_matrix((np.exp(1j * theta), (j, (j + shift) % m)), shape=(m, m)),
                       unitary=True)
    modes = np.fft.fftfreq(m) * m
    a = oc.make_fourier_diagonal(2 * np.pi * modes, hermitian=True)
    k_decl = oc.make_diagonal(dtheta, hermitian=True)
    k_grid = a - u @ a @ u.adjoint()
    d_op = oc.make_diagonal(np.full(m, 2 * np.pi * w), hermitian=True)
    # band-limited probes: the grid commutator equals theta' on them exactly
    rng = np.random.default_rng(1)
    probes = []
    for _ in range(3):
        coef = np.zeros(m, dtype=complex)
        band = np.r_[0:9, m - 8:m]
        coef[band] = rng.standard_normal(band.size) + 1j * rng.standard_normal(band.size)
        v = np.fft.ifft(coef)
        probes.append(v / np.linalg.norm(v))
    band_spread = 2 * int(math.ceil(10 * eps + 8)) + 16
    horizon = max((m // 2 - band_spread) // max(abs(w), 1), 0)
    meta = dict(shift=shift, rational=shift / m, alpha_error=abs(alpha - shift / m),
                spectral_horizon=horizon, grid_commutator=k_grid)
    return ModelInstance(
        kind="skew_product_u1", params=dict(p, M=m, alpha=alpha, w=w, eps=eps), dim=m,
        time="discrete", generator=u, spectral=None, conjugate=a,
        relation=Relation(KINDS["skew_product_u1"]["relation"], k_decl, "probe"),
        commutator=k_grid, log_derivative=k_decl, expected_D=d_op, auxiliary_B=None,
        bound_conjugate=a, exact_D=False, validity_window=float(m),
        interior_mask=np.ones(m, dtype=bool), coordinates=x, residual_probes=tuple(probes),
        metadata=meta)


# quantum walks --------------------------------------------------------------------------

COINS = {
    "hadamard": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "identity": np.eye(2, dtype=complex),
    "flip": np.array([[0, -1], [1, 0]], dtype=complex),
}


def _coin(spec):
    if isinstance(spec, str):
        if spec in COINS:
            return COINS[spec]
        if spec.startswith("rotation:"):
            t = float(spec.split(":", 1)[1])
            return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]], dtype=complex)
        raise ModelError(f"unknown coin {spec!r}")
    c = np.asarray(spec, dtype=complex)
    if c.shape != (2, 2) or np.max(np.abs(c @ c.conj().T - np.eye(2))) > 1e-12:
        raise ModelError("coin must be a unitary 2x2 matrix")
    return c


@dataclass(frozen=True)
class WalkDispersion:
    momenta: np.ndarray
    eigenphases: np.ndarray
    velocities: np.ndarray
    crossing: np.ndarray
    flat: np.ndarray


def walk_symbol(coin, k):
    """``U(k) = S(k) C`` with ``S(k) = diag(e^{ik}, e^{-ik})``."""
    s = np.zeros((k.size, 2, 2), dtype=complex)
    s[:, 0, 0] = np.exp(1j * k)
    s[:, 1, 1] = np.exp(-1j * k)
    return s @ coin


def walk_velocity_symbol(coin, k, tol=1e-8):
    """Asymptotic velocity symbol and dispersion data of a constant-coin walk.

    The velocity is the band-diagonal part of ``i U(k)* dU/dk``; on each eigenspace of
    ``U(k)`` with eigenvalue ``exp(i lambda)`` it equals ``-d lambda / dk``, which is the
    limit of ``(1/n)[Q, U^n] U^-n`` for the position operator ``Q``.
    """
    u = walk_symbol(coin, k)
    z = np.diag([-1.0, 1.0]).astype(complex)
    x = coin.conj().T @ z @ coin
    vel = np.zeros_like(u)
    phases = np.zeros((k.size, 2))
    speeds = np.zeros((k.size, 2))
    crossing = np.zeros(k.size, dtype=bool)
    for i in range(k.size):
        mu, vec = np.linalg.eig(u[i])
        if abs(mu[0] - mu[1]) <= tol:
            crossing[i] = True
            vel[i] = x
            speeds[i] = np.linalg.eigvalsh(0.5 * (x + x.conj().T))
            phases[i] = np.angle(mu)
            continue
        # U(k) is normal: eigenvectors of distinct eigenvalues are orthogonal
        vec = vec / np.linalg.norm(vec, axis=0)
        for b in range(2):
            pb = np.outer(vec[:, b], vec[:, b].conj())
            vb = np.real(np.vdot(vec[:, b], x @ vec[:, b]))
            vel[i] += vb * pb
            speeds[i, b] = vb
        phases[i] = np.angle(mu)
    # a flat band has vanishing velocity on a neighbourhood, not at an isolated momentum
    still = np.all(np.abs(speeds) < 1e-8, axis=1)
    flat = still & np.roll(still, 1) & np.roll(still, -1)
    return vel, WalkDispersion(k, phases, speeds, crossing, flat)


def asymptotic_velocity_walk(coin, N, return_info=False, tol=1e-8):
    """Asymptotic velocity ``V0`` of the constant-coin walk on a ring of ``N`` sites.

    Crossing eigenphases or flat bands trigger a :class:`DegenerateDispersionWarning`.
    """
    c = _coin(coin)
    k = 2 * np.pi * np.fft.fftfreq(int(N))
    vel, info = walk_velocity_symbol(c, k, tol)
    if info.crossing.any() or info.flat.any():
        warnings.warn(f"degenerate dispersion: {int(info.crossing.sum())} crossing modes, "
                      f"{int(info.flat.sum())} flat modes", DegenerateDispersionWarning,
                      stacklevel=2)
    op = oc.make_fourier_diagonal(vel, hermitian=True)
    return (op, info) if return_info else op


def _kernel_margin(v0, n, tol=1e-11):
    """Distance beyond which the position kernel of ``V0`` is below ``tol / n``."""
    kern = np.max(np.abs(np.fft.ifft(v0.data, axis=0)), axis=(1, 2))
    dist = np.minimum(np.arange(n), n - np.arange(n))
    big = dist[kern * n > tol]
    return int(big.max()) + 1 if big.size else 0


def _walk_shift(n):
    j = np.arange(n)
    rows = np.r_[2 * j, 2 * j + 1]
    cols = np.r_[2 * ((j + 1) % n), 2 * ((j - 1) % n) + 1]
    return sp.csr_matrix((np.ones(2 * n), (rows, cols)), shape=(2 * n, 2 * n))


def coin_profile(sites, coin_left, coin_right, kappa, eps):
    """Position-dependent coins ``C_side exp(i kappa <x>^(-1-eps) sigma_y)``."""
    sy = np.array([[0, -1j], [1j, 0]])
    coins = np.empty((sites.size, 2, 2), dtype=complex)
    for i, xv in enumerate(sites):
        base = coin_left if xv < 0 else coin_right
        amp = kappa * (1.0 + xv * xv) ** (-(1.0 + eps) / 2)
        coins[i] = base @ expm(1j * amp * sy)
    return coins


def _build_walk(p):
    n = _int_param(p, "N", 16, 2**18)
    buffer = n // 4 if p["buffer"] is None else _int_param(p, "buffer", 1, n // 2 - 1)
    sites = (np.arange(n) - n // 2).astype(float)
    aniso = bool(p["anisotropic"])
    if aniso:
        c_l, c_r = _coin(p["coin_left"]), _coin(p["coin_right"])
        kappa = _float_param(p, "kappa", 0.0)
        eps = _float_param(p, "eps", 0.0, open_interval=True)
        coins = coin_profile(sites, c_l, c_r, kappa, eps)
    else:
        c0 = _coin(p["coin"])
        coins = np.broadcast_to(c0, (n, 2, 2))
    conj_kind = p["conjugate"] or ("position" if aniso else "velocity")
    if conj_kind not in ("position", "velocity"):
        raise ModelError("conjugate must be 'position' or 'velocity'")
    if conj_kind == "velocity" and aniso:
        raise ModelError("the velocity conjugate needs a constant coin")
    coin_op = sp.block_diag(list(coins), format="csr")
    u = oc.make_sparse(_walk_shift(n) @ coin_op, unitary=True)
    q = oc.make_diagonal(np.repeat(sites, 2), hermitian=True)
    z = oc.make_diagonal(np.tile([-1.0, 1.0], n), hermitian=True)
    meta = dict(sites=sites, buffer=buffer, conjugate=conj_kind)
    if conj_kind == "velocity":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateDispersionWarning)
            v0, info = asymptotic_velocity_walk(c0, n, return_info=True)
        a = (q @ v0 + v0 @ q) * 0.5
        a.hermitian = True
        rhs = (z @ v0 + v0 @ z) * 0.5
        d_op = v0 @ v0
        margin = _kernel_margin(v0, n)
        meta.update(velocity=v0, dispersion=info, kernel_margin=margin)
        tag = "[A,U]U^-1 = {Z,V0}/2"
    else:
        a = q
        rhs = z
        d_op = None
        margin = 0
        tag = "[A,U]U^-1 = Z"
    k_op = a - u @ a @ u.adjoint()
    # the relation holds where the ring's seam is out of reach of V0's kernel
    radius = n // 2 - margin - buffer
    if radius < 1:
        raise ModelError(f"ring of {n} sites too small for buffer {buffer} and kernel "
                         f"margin {margin}")
    interior = np.repeat(np.abs(sites) <= radius, 2)
    coords = np.repeat(sites, 2)
    probes = []
    for center, mom in ((0.0, 0.7), (-n / 16, -1.3), (n / 16, 2.2)):
        env = _gaussian(coords, center, max(n / 64, 2.0), mom)
        spin = np.tile([1.0, 1j], n) / np.sqrt(2)
        v = env * spin
        probes.append(v / np.linalg.norm(v))
    method = "operator" if 2 * n <= 2048 else "probe"
    return ModelInstance(
        kind="quantum_walk_Z", params=dict(p, N=n, buffer=buffer, conjugate=conj_kind),
        dim=2 * n, time="discrete", generator=u, spectral=None, conjugate=a,
        relation=Relation(tag, rhs, method), commutator=k_op, log_derivative=k_op,
        expected_D=d_op, auxiliary_B=None, bound_conjugate=a, exact_D=False,
        validity_window=float(buffer), interior_mask=interior,
        coordinates=coords, residual_probes=tuple(probes), metadata=meta)


_BUILDERS = {
    "shift_Z": _build_shift,
    "regular_rep_Zd": _build_regular,
    "fock": _build_fock,
    "fractional_laplacian": _build_fractional,
    "stark_1d": _build_stark,
    "hyperbolic_2d": _build_hyperbolic,
    "skew_product_u1": _build_skew,
    "quantum_walk_Z": _build_walk,
}


# relation residuals -------------------------------------------------------------------


def _restricted_norm(op, cols, exact_cap=1024):
    """Spectral norm of ``op`` restricted to the coordinate subspace ``cols``."""
    if cols.size == 0:
        return 0.0
    if op.representation == "sparse" or op.representation == "diagonal":
        block = op.to_sparse()[:, cols]
        if cols.size <= exact_cap:
            return oc.op_norm_dense(block.toarray())
        return oc.sparse_norm_bound(block)
    if op.dim > 2 * oc.DENSE_CAP:
        raise MemoryError("operator residual needs a densifiable operator; use method='probe'")
    return oc.op_norm_dense(op.column_block(cols))


def _symbol_residual(m):
    """Dilation commutator of a Fourier multiplier ``h(P)`` against ``f(h)``.

    ``i[h(P), A] = P . grad h(P)``: the derivative of the symbol along the dilation
    orbit ``k -> e^s k``, computed by complex-step differentiation.
    """
    fns = m.functions
    h = fns["symbol"]
    step = 1e-20
    rot = np.exp(1j * step)
    moms = m.metadata["momenta"]
    moms = moms if isinstance(moms, tuple) else (moms,)
    along = np.imag(h(*[kk * rot for kk in moms])) / step
    target = fns["f"](h(*moms))
    return float(np.max(np.abs(along - target)))


def relation_residual(m, method=None):
    """Size of ``commutator - declared rhs`` on the interior of the model.

    Methods: ``"operator"`` (spectral norm of the interior columns), ``"probe"``
    (largest relative defect over smooth interior probes), ``"symbol"`` (exact symbol
    calculus for Fourier multipliers) and ``"net"`` (regular representation, every net
    element).
    """
    method = method or m.relation.method
    if method == "symbol":
        return _symbol_residual(m)
    if method == "net":
        cols = np.nonzero(m.interior_mask)[0]
        worst = 0.0
        for x in m.net.elements:
            r = regular_rep_log_derivative(m, x) - regular_rep_expected_log_derivative(m, x)
            worst = max(worst, _restricted_norm(r, cols))
        return worst
    defect = m.commutator - m.relation.rhs
    if method == "operator":
        return _restricted_norm(defect, np.nonzero(m.interior_mask)[0])
    if method == "probe":
        worst = 0.0
        for v in m.residual_probes:
            worst = max(worst, np.linalg.norm(defect.apply(v)) / np.linalg.norm(v))
        return float(worst)
    raise ValueError(f"unknown residual method {method!r}")


# vector profiles ---------------------------------------------------------------------


def profile_vector(m, profile):
    """Normalized vector from a profile description.

    Keys: ``shape`` (gaussian, bump, delta, box), ``center``, ``width`` (gaussian),
    ``radius`` and ``power`` (bump), ``momentum``, ``domain`` (position or fourier) and,
    for walks, ``spinor`` (two complex components).
    """
    prof = dict(profile)
    shape = prof.get("shape", "gaussian")
    domain = prof.get("domain", m.metadata.get("profile_domain", "position"))
    center = prof.get("center", 0.0)
    mom = prof.get("momentum", 0.0)
    if domain == "fourier":
        grid = m.metadata.get("grid")
        if grid is None or len(grid) != 1:
            raise ModelError(f"{m.kind}: Fourier-domain profiles need a one-dimensional grid")
        k = m.metadata["momenta"]
        hat = _shape_values(k, shape, mom, prof)
        if prof.get("exclude_zero_mode", True):
            hat = np.where(k == 0, 0.0, hat)
        x0 = m.metadata["origin"]
        v = np.fft.ifft(hat * np.exp(1j * k * (x0 - center)))
    else:
        c = m.coordinates
        if c.ndim == 2:
            ctr = np.broadcast_to(np.asarray(center, dtype=float), (c.shape[1],))
            r = np.sqrt(np.sum((c - ctr) ** 2, axis=1))
            v = _shape_values(r, shape, 0.0, prof).astype(complex)
            if np.any(np.asarray(mom) != 0):
                v = v * np.exp(1j * (c - ctr) @ np.broadcast_to(np.asarray(mom, float), (c.shape[1],)))
        else:
            v = _shape_values(c - center, shape, 0.0, prof) * np.exp(1j * mom * (c - center))
        if m.kind == "quantum_walk_Z":
            spin = np.asarray(prof.get("spinor", (1.0, 1j)), dtype=complex)
            v = v * np.tile(spin, m.dim // 2)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ModelError("profile vanishes on the grid")
    return v / nv


def _shape_values(r, shape, center, prof):
    r = np.asarray(r, dtype=float) - center
    if shape == "gaussian":
        return np.exp(-r ** 2 / (2 * float(prof.get("width", 1.0)) ** 2)).astype(complex)
    if shape == "bump":
        rad = float(prof.get("radius", 1.0))
        power = float(prof.get("power", 4))
        return (np.clip(1 - (r / rad) ** 2, 0, None) ** power).astype(complex)
    if shape == "delta":
        return (np.abs(r) == np.min(np.abs(r))).astype(complex)
    if shape == "box":
        return (np.abs(r) <= float(prof.get("radius", 1.0)) + 1e-12).astype(complex)
    raise ModelError(f"unknown profile shape {shape!r}")


# model cards -------------------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, (bool, int, str)) or v is None:
        return v
    if isinstance(v, float):
        return v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return str(v)


def model_card(m):
    """JSON-ready summary: parameters, relation, residual and validity window."""
    scalar_meta = {k: _jsonable(v) for k, v in m.metadata.items()
                   if isinstance(v, (bool, int, float, str, np.integer, np.floating))}
    return {
        "kind": m.kind,
        "params": {k: _jsonable(v) for k, v in m.params.items()},
        "dim": m.dim,
        "time": m.time,
        "relation": m.relation.tag,
        "relation_method": m.relation.method,
        "relation_residual": float(m.metadata.get("relation_residual", relation_residual(m))),
        "relation_tolerance": m.relation.tolerance,
        "validity_window": m.validity_window,
        "interior_size": int(np.count_nonzero(m.interior_mask)),
        "exact_D": m.exact_D,
        "metadata": scalar_meta,
    }


def list_models():
    """Text table of the model zoo."""
    rows = [f"# {'kind':<20} {'time':<10} {'relation':<36} {'parameters':<58} family"]
    for kind, info in KINDS.items():
        params = " ".join(f"{k}={v}" for k, v in info["params"].items())
        rows.append(f"{kind:<22} {info['time']:<10} {info['relation']:<36} {params:<58} "
                    f"{info['family']}")
    return "\n".join(rows)
