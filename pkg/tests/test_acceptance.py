"""Acceptance suite: ten criteria at their stated tolerances.

Each test carries a ``criterion`` marker; the terminal summary prints one PASS/FAIL line
per criterion.
"""

import math
import time

import numpy as np
import pytest
from scipy.special import j1
from scipy.stats import unitary_group

from commdecay import cli
from commdecay import commutators as cm
from commdecay import decay as dc
from commdecay import models as md
from commdecay import spectra as sp

SLACK = 1e-10


def report(number, text):
    print(f"criterion {number}: {text}")


# 1 ---------------------------------------------------------------------------------------


@pytest.mark.criterion(1, "exact relation residuals <= 1e-8 within 60 s")
def test_relation_residuals():
    cases = [("shift_Z", {"N": 64}), ("fock", {"N": 512}), ("hyperbolic_2d", {"n": 64}),
             ("fractional_laplacian", {"N": 4096, "s": 1.0})]
    start = time.perf_counter()
    worst = {}
    for kind, params in cases:
        m = md.build_model(kind, params)
        worst[kind] = md.relation_residual(m, m.relation.method)
    elapsed = time.perf_counter() - start
    report(1, f"residuals {worst}, {elapsed:.1f} s")
    assert md.build_model("hyperbolic_2d", {"n": 64}).dim == 64 * 64
    assert md.build_model("fractional_laplacian", {"N": 4096}).relation.method == "symbol"
    assert all(r <= 1e-8 for r in worst.values())
    assert elapsed <= 60


# 2 ---------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def fock4096():
    return md.build_model("fock", {"N": 4096})


@pytest.mark.criterion(2, "order-1 bound c/l at every index; fock semicircle oracle")
@pytest.mark.parametrize("kind", ["shift_Z", "fock"])
def test_first_order_bound(kind, fock4096):
    m = fock4096 if kind == "fock" else md.build_model("shift_Z", {"N": 64})
    rep = dc.decay_experiment(m, 1, slack=SLACK)
    ratio = np.max(rep.series / rep.bound)
    report(2, f"{kind}: c = {rep.constant:.6g}, {rep.index.size} indices, max series/bound "
              f"{ratio:.3g}")
    assert np.all(rep.series <= rep.bound + SLACK)
    assert rep.passed


@pytest.mark.criterion(2, "order-1 bound c/l at every index; fock semicircle oracle")
def test_fock_semicircle(fock4096):
    d0 = np.zeros(fock4096.dim)
    d0[0] = 1.0
    t = np.linspace(0.05, 50, 1000)
    series = dc.coefficient_series(fock4096, d0, d0, t)
    err = np.max(np.abs(series - np.abs(2 * j1(t) / t)))
    report(2, f"fock N=4096 |<d0, e^(-itH) d0>| vs |2J1(t)/t| on (0, 50]: max error {err:.2e}")
    assert err <= 1e-6


# 3 ---------------------------------------------------------------------------------------


@pytest.mark.criterion(3, "orders 1-3: bound at every index and slope <= -n+0.25 on [5,100]")
@pytest.mark.parametrize("kind", ["fock", "stark_1d", "fractional_laplacian"])
def test_higher_order_decay(kind, fock4096):
    start = time.perf_counter()
    m = fock4096 if kind == "fock" else md.build_model(kind, {})
    grid = np.geomspace(1, 100, 300)
    lines = []
    for n in (1, 2, 3):
        rep = dc.decay_experiment(m, n, grid=grid, fit_window=(5, 100), slack=SLACK)
        lines.append(f"n={n} slope {rep.slope:.2f}+-{rep.half_width:.2f} pass={rep.passed}")
        assert rep.passed
        assert rep.slope <= -n + 0.25
    elapsed = time.perf_counter() - start
    report(3, f"{kind}: " + "; ".join(lines) + f"; {elapsed:.1f} s")
    assert elapsed <= 300


# 4 ---------------------------------------------------------------------------------------

ZOO_SMALL = [
    ("shift_Z", {"N": 64}),
    ("regular_rep_Zd", {"d": 1, "L": 100, "J": 50}),
    ("fock", {"N": 512}),
    ("fractional_laplacian", {"N": 512, "L": 128.0}),
    ("stark_1d", {"N": 512}),
    ("hyperbolic_2d", {"n": 16, "L": 8.0}),
    ("skew_product_u1", {"M": 512, "eps": 0.3}),
    ("quantum_walk_Z", {"N": 256}),
]


@pytest.mark.criterion(4, "virial identity <= 1e-9 on simple-spectrum zoo models, dim <= 512")
@pytest.mark.parametrize("kind, params", ZOO_SMALL, ids=[k for k, _ in ZOO_SMALL])
def test_virial(kind, params):
    m = md.build_model(kind, params)
    assert m.dim <= 512
    rep = sp.virial_report(m)
    simple = len(rep.blocks) == m.dim
    report(4, f"{kind}: max block {rep.max:.2e}, clusters {len(rep.blocks)}/{m.dim}")
    if simple:
        assert rep.max <= 1e-9
    assert rep.passed


# 5 ---------------------------------------------------------------------------------------


@pytest.mark.criterion(5, "RAGE operator limit: deviation <= 2||K||/(n g), limit to 1e-9")
@pytest.mark.parametrize("seed", range(10))
def test_rage_random_unitaries(seed):
    u = unitary_group.rvs(128, random_state=seed)
    rng = np.random.default_rng(100 + seed)
    a = rng.normal(size=128) + 1j * rng.normal(size=128)
    b = rng.normal(size=128) + 1j * rng.normal(size=128)
    k = np.outer(a, b.conj())
    rep = sp.rage_operator(u, k, [100, 1000, 10000])
    # independent reconstruction: numpy eigenvectors, diagonal of K in that basis
    mu, vec = np.linalg.eig(u)
    vec = vec / np.linalg.norm(vec, axis=0)
    w = np.linalg.solve(vec, k @ vec)
    recon = vec @ np.diag(np.diag(w)) @ np.linalg.inv(vec)
    limit_err = np.linalg.norm(rep.limit - recon, 2)
    commute = np.linalg.norm(rep.limit @ u - u @ rep.limit, 2)
    report(5, f"seed {seed}: gap {rep.gap:.3e}, deviation {rep.deviation}, bound "
              f"{rep.bound}, limit error {limit_err:.1e}")
    assert np.all(rep.deviation <= rep.bound)
    assert limit_err <= 1e-9
    assert commute <= 1e-9


# 6 ---------------------------------------------------------------------------------------


@pytest.mark.criterion(6, "commutation defect: 0 for exact D; skew defect(1e4) <= min(1e-2, defect(1e2))")
@pytest.mark.parametrize("kind, params, grid", [
    ("shift_Z", {"N": 64}, [1, 4, 16]),
    ("fock", {"N": 512}, [1.0, 10.0, 70.0]),
    ("stark_1d", {"N": 512}, [1.0, 5.0, 20.0]),
    ("fractional_laplacian", {"N": 512, "L": 128.0}, [1.0, 5.0, 10.0]),
])
def test_defect_exact_models(kind, params, grid):
    m = md.build_model(kind, params)
    prof = dc.default_profiles(m)
    probes = [md.profile_vector(m, p) for p in prof]
    if m.discrete:
        probes = [v * m.interior_mask for v in probes]
        series = cm.cesaro_discrete(m, grid, probes)
    else:
        series = cm.cesaro_continuous(m, grid, probes)
    defects = cm.commutation_defect(series, m)
    report(6, f"{kind}: defects {defects}")
    assert np.max(defects) <= 1e-10


@pytest.mark.criterion(6, "commutation defect: 0 for exact D; skew defect(1e4) <= min(1e-2, defect(1e2))")
def test_defect_skew():
    m = md.build_model("skew_product_u1", {"M": 20480, "w": 1, "eps": 0.3})
    probes = [md.profile_vector(m, {"shape": "gaussian", "center": c, "width": 0.05})
              for c in (0.3, 0.6)]
    series = cm.cesaro_discrete(m, [100, 10000], probes)
    early, late = cm.commutation_defect(series, m)
    report(6, f"skew: defect(1e2) {early:.3e}, defect(1e4) {late:.3e}")
    assert late <= 1e-2
    assert late <= early


# 7 ---------------------------------------------------------------------------------------


def birkhoff_scalar(x, n, beta, w, eps):
    total = 0.0
    for j in range(n):
        total += 2 * math.pi * w + 2 * math.pi * eps * math.cos(2 * math.pi * (x + j * beta))
    return total / n


@pytest.fixture(scope="module")
def skew_long():
    out = {}
    for w in (1, 2, 3):
        m = md.build_model("skew_product_u1", {"M": 2048 * 100, "w": w, "eps": 0.3})
        phi = md.profile_vector(m, {"shape": "gaussian", "center": 0.4, "width": 0.05})
        sites = [1000, 70001, 150000]
        deltas = []
        for s in sites:
            d = np.zeros(m.dim)
            d[s] = 1.0
            deltas.append(d)
        series = cm.cesaro_discrete(m, [100_000], [phi] + deltas)
        out[w] = (m, phi, sites, series)
    return out


@pytest.mark.criterion(7, "skew degree: |<phi,D_n phi> - 2 pi w| <= 1e-3 at n=1e5; scalar oracle to 1e-9")
@pytest.mark.parametrize("w", [1, 2, 3])
def test_skew_degree(w, skew_long):
    m, phi, sites, series = skew_long[w]
    value = series.expectations[0, 0]
    beta = m.metadata["rational"]
    assert abs(beta - (math.sqrt(5) - 1) / 2) < 1e-5
    scalar = [birkhoff_scalar(m.coordinates[s], 100_000, beta, w, 0.3) for s in sites]
    engine = [series.expectations[0, 1 + i].real for i in range(len(sites))]
    agree = max(abs(a - b) for a, b in zip(scalar, engine))
    report(7, f"w={w}: <phi,D_n phi> = {value.real:.9f} (2 pi w = {2 * math.pi * w:.9f}), "
              f"scalar oracle agreement {agree:.1e}")
    assert abs(value - 2 * math.pi * w) <= 1e-3
    assert agree <= 1e-9


# 8 ---------------------------------------------------------------------------------------


def integer_pairs(m):
    x = m.coordinates
    box = lambda c, r, h: h * (np.abs(x - c) <= r).astype(np.int64)
    pairs = [(box(0, 5, 1), box(0, 5, 1)), (box(0, 5, 1), box(2, 7, 3))]
    rng = np.random.default_rng(8)
    for _ in range(4):
        phi = np.where(np.abs(x) <= 10, rng.integers(-9, 10, x.size), 0).astype(np.int64)
        psi = np.where(np.abs(x - 3) <= 6, rng.integers(-9, 10, x.size), 0).astype(np.int64)
        pairs.append((phi, psi))
    return pairs


@pytest.mark.criterion(8, "regular representation improved bound, exact arithmetic, j <= 100")
def test_regular_rep_improved_bound():
    m = md.build_model("regular_rep_Zd", {"d": 1, "L": 200, "J": 100})
    results = []
    for phi, psi in integer_pairs(m):
        rep = dc.regular_rep_improved_bound(m, phi, psi)
        assert len(rep.verdicts) == 100 and rep.lengths[-1] == 100
        results.append(rep.passed)
    report(8, f"{len(results)} integer pairs, all j passed: {results}")
    assert all(results)


# 9 ---------------------------------------------------------------------------------------


def hadamard_v0_squared(phi, n_sites):
    comps = phi.reshape(n_sites, 2)
    hat = np.fft.fft(comps, axis=0, norm="ortho")
    k = 2 * np.pi * np.fft.fftfreq(n_sites)
    v2 = np.cos(k) ** 2 / (2 - np.sin(k) ** 2)
    return float(np.sum(v2 * np.sum(np.abs(hat) ** 2, axis=1)))


@pytest.mark.criterion(9, "walk: |<phi,D_n phi> - <phi,V0^2 phi>| < 1e-2 at n=1e3")
@pytest.mark.parametrize("momentum", [0.4, 1.2, 2.5])
def test_walk_velocity_limit(momentum):
    m = md.build_model("quantum_walk_Z", {"N": 4096})
    phi = md.profile_vector(m, {"shape": "gaussian", "center": 0.0, "width": 25.0,
                                "momentum": momentum, "spinor": (1.0, 0.5j)})
    series = cm.cesaro_discrete(m, [1000], [phi], reference=None)
    oracle = hadamard_v0_squared(phi, 4096)
    diff = abs(series.expectations[0, 0] - oracle)
    report(9, f"k0={momentum}: <phi,D_1000 phi> = {series.expectations[0, 0].real:.12f}, "
              f"oracle {oracle:.12f}, difference {diff:.1e}")
    assert diff < 1e-2


# 10 --------------------------------------------------------------------------------------

DETERMINISM_CONFIGS = {
    "shift": "[model]\nkind = shift_Z\n",
    "fock": "[model]\nkind = fock\nN = 256\n",
    "stark": "[model]\nkind = stark_1d\nN = 512\n",
    "fractional": "[model]\nkind = fractional_laplacian\nN = 512\nL = 128.0\n",
    "skew": "[model]\nkind = skew_product_u1\nM = 512\neps = 0.3\n",
    "walk": "[model]\nkind = quantum_walk_Z\n",
    "regular": "[model]\nkind = regular_rep_Zd\nL = 100\nJ = 50\n",
}


@pytest.mark.criterion(10, "determinism: identical configs give byte-identical CSVs")
def test_determinism(tmp_path):
    compared = 0
    for name, text in DETERMINISM_CONFIGS.items():
        cfg = tmp_path / f"{name}.ini"
        cfg.write_text(text + "[experiment]\nname = all\nseed = 3\n")
        runs = []
        for tag in ("first", "second"):
            out = tmp_path / f"{name}_{tag}"
            assert cli.run(str(cfg), out_dir=str(out)) == 0
            runs.append(out)
        files = sorted(p.name for p in runs[0].glob("*.csv"))
        assert files == sorted(p.name for p in runs[1].glob("*.csv"))
        for f in files:
            assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes(), f"{name}/{f}"
            compared += 1
    report(10, f"{compared} CSV files compared byte for byte")
    assert compared >= 7 * 5
