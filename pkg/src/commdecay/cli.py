"""Command line experiment runner.

Configs are INI files (see ``commdecay print-schema``).  Exit status: 0 when every
verdict passes, 1 on a failed or refused verdict, 2 on a config error and 3 when the
model cannot be built.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import commutators as cm
from . import decay as dc
from . import models as md
from . import opcore as oc
from . import spectra as sp

EXPERIMENTS = ("decay", "cesaro", "rage", "virial", "bounds")
OUTPUT_ENV = "COMMDECAY_OUTPUT_DIR"
DENSE_LIMIT = 1024
EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_MODEL = 0, 1, 2, 3

PROFILE_KEYS = {
    "shape": ("str", None, "gaussian, bump, delta or box"),
    "center": ("floats", None, "center (one value per dimension)"),
    "width": ("float", None, "gaussian width"),
    "radius": ("float", None, "bump or box radius"),
    "power": ("float", None, "bump exponent"),
    "momentum": ("floats", None, "carrier momentum (position domain) or Fourier center"),
    "domain": ("str", None, "position or fourier"),
    "spinor": ("complexes", None, "two coin components for walks, e.g. 1,1j"),
    "exclude_zero_mode": ("bool", None, "drop k=0 from Fourier profiles"),
}

SCHEMA = {
    "model": {
        "kind": ("str", None, "model kind (required), see list-models"),
        "*": ("model", None, "any parameter of the chosen kind, typed like its default"),
    },
    "experiment": {
        "name": ("choice", "all", "decay, cesaro, rage, virial, bounds or all"),
        "seed": ("int", 0, "seed for the random operators of the rage recipe"),
        "output_dir": ("str", "commdecay_out", f"report directory (overridden by {OUTPUT_ENV})"),
    },
    "decay": {
        "orders": ("ints", None, "decay orders; default 1,2,3 with an auxiliary operator, else 1"),
        "grid": ("grid", None, "index grid; default from the model window"),
        "fit_window": ("floats", None, "two values: envelope fit window"),
    },
    "cesaro": {"grid": ("grid", None, "index grid; default logarithmic up to the window")},
    "rage": {
        "grid": ("grid", "100,1000,10000", "powers n of the Cesaro means"),
        "rank": ("int", 1, "rank of the random compact operator K"),
    },
    "bounds": {"orders": ("ints", None, "orders of the bound constants")},
    "profile.chi": PROFILE_KEYS,
    "profile.psi": PROFILE_KEYS,
    "tolerances": {
        "slack": ("float", dc.BOUND_SLACK, "absolute slack of decay verdicts"),
        "cesaro": ("float", 1e-8, "max residual of exact Cesaro limits"),
        "virial": ("float", sp.VIRIAL_TOL, "virial identity tolerance"),
    },
}

GRID_HELP = ("grids: comma list '1,2,5', 'range:a:b' (integers a..b), "
             "'geom:a:b:count' or 'lin:a:b:count'")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending key path."""


# parsing ---------------------------------------------------------------------------------


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_grid(text):
    text = text.strip()
    if ":" in text:
        kind, *args = text.split(":")
        if kind == "range" and len(args) == 2:
            return np.arange(int(args[0]), int(args[1]) + 1)
        if kind in ("geom", "lin") and len(args) == 3:
            a, b, n = float(args[0]), float(args[1]), int(args[2])
            return np.geomspace(a, b, n) if kind == "geom" else np.linspace(a, b, n)
        raise ValueError(f"bad grid {text!r}")
    return np.array([float(x) for x in text.split(",")])


def _parse(kind, text, default=None):
    if kind == "str":
        return text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "bool":
        return _parse_bool(text)
    if kind == "ints":
        return tuple(int(x) for x in text.split(","))
    if kind == "floats":
        vals = tuple(float(x) for x in text.split(","))
        return vals[0] if len(vals) == 1 else vals
    if kind == "complexes":
        return tuple(complex(x.strip()) for x in text.split(","))
    if kind == "grid":
        return _parse_grid(text)
    if kind == "choice":
        name = text.strip()
        if name not in EXPERIMENTS + ("all",):
            raise ValueError(f"unknown experiment {name!r}")
        return name
    if kind == "model":
        return _parse_model_value(text, default)
    raise AssertionError(kind)


def _parse_model_value(text, default):
    text = text.strip()
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, str):
        return text
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if text.lower() in ("none", ""):
        return None
    return text


@dataclass
class ExperimentConfig:
    kind: str
    model_params: dict
    experiment: str = "all"
    seed: int = 0
    output_dir: str = "commdecay_out"
    sections: dict = field(default_factory=dict)

    @property
    def experiments(self):
        return EXPERIMENTS if self.experiment == "all" else (self.experiment,)

    def get(self, section, key):
        default = SCHEMA[section][key][1]
        value = self.sections.get(section, {}).get(key, default)
        if SCHEMA[section][key][0] == "grid" and isinstance(value, str):
            value = _parse_grid(value)
        return value

    def profile(self, name):
        prof = self.sections.get(f"profile.{name}")
        return dict(prof) if prof else None


def parse_config(text):
    """Parse and validate config text into an :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(interpolation=None, strict=True,
                                   default_section="\x00defaults", comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax: {exc.message if hasattr(exc, 'message') else exc}") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{sec}: unknown section; known: {', '.join(SCHEMA)}")
    if not cp.has_section("model"):
        raise ConfigError("model: missing section")
    model = dict(cp.items("model"))
    if "kind" not in model:
        raise ConfigError("model.kind: missing")
    kind = model.pop("kind").strip()
    if kind not in md.KINDS:
        raise ConfigError(f"model.kind: unknown kind {kind!r}")
    defaults = md.KINDS[kind]["params"]
    params = {}
    for key, text in model.items():
        if key not in defaults:
            raise ConfigError(f"model.{key}: unknown parameter for {kind}; "
                              f"known: {', '.join(defaults)}")
        try:
            params[key] = _parse_model_value(text, defaults[key])
        except ValueError as exc:
            raise ConfigError(f"model.{key}: {exc}") from exc
    sections = {}
    for sec in cp.sections():
        if sec == "model":
            continue
        values = {}
        for key, text in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{sec}.{key}: unknown key; known: {', '.join(SCHEMA[sec])}")
            try:
                values[key] = _parse(SCHEMA[sec][key][0], text)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{sec}.{key}: {exc}") from exc
        sections[sec] = values
    if "fit_window" in sections.get("decay", {}):
        fw = sections["decay"]["fit_window"]
        if not (isinstance(fw, tuple) and len(fw) == 2):
            raise ConfigError("decay.fit_window: needs two values")
    exp = sections.get("experiment", {})
    return ExperimentConfig(kind, params, exp.get("name", "all"), exp.get("seed", 0),
                            exp.get("output_dir", "commdecay_out"), sections)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return parse_config(text)


def schema_text():
    lines = ["# commdecay config: INI sections with key = value pairs; unknown keys are errors",
             f"# {GRID_HELP}", ""]
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (kind, default, doc) in keys.items():
            shown = "" if default is None else f" (default {default})"
            lines.append(f"{key} = <{kind}>{shown}  # {doc}")
        lines.append("")
    lines.append("# model parameters per kind")
    for kind, info in md.KINDS.items():
        params = ", ".join(f"{k}={v}" for k, v in info["params"].items())
        lines.append(f"#   {kind}: {params}")
    return "\n".join(lines) + "\n"


# recipes ---------------------------------------------------------------------------------


@dataclass
class Check:
    experiment: str
    name: str
    passed: bool
    value: float | None
    source: str
    note: str = ""


def _csv_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_cell(x) for x in row])


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return repr(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _profiles(m, cfg):
    chi_d, psi_d = dc.default_profiles(m)
    return cfg.profile("chi") or chi_d, cfg.profile("psi") or psi_d


def _default_orders(m):
    return (1, 2, 3) if m.auxiliary_B is not None and m.expected_D is not None else (1,)


def _int_grid(grid):
    return np.unique(np.asarray(grid).astype(np.int64))


def run_decay(m, cfg, out):
    orders = cfg.get("decay", "orders") or (_default_orders(m) if m.exact_D else (1,))
    grid = cfg.get("decay", "grid")
    fit_window = cfg.get("decay", "fit_window")
    slack = cfg.get("tolerances", "slack")
    chi_p, psi_p = _profiles(m, cfg)
    checks, reports = [], {}
    for n in orders:
        if not m.exact_D:
            # D_j differs from D: the estimate carries the measured ||(D - D_j) phi~|| term
            if n != 1:
                raise ValueError(f"{m.kind} has no exact limit relation; order {n} refused")
            g = _int_grid(grid if grid is not None else
                          np.geomspace(1, max(1.0, min(dc.decay_window(m), 1e3)), 40))
            rep = dc.residual_mode_experiment(m, md.profile_vector(m, chi_p),
                                              md.profile_vector(m, psi_p), g, slack=slack)
        else:
            g = None if grid is None else (_int_grid(grid) if m.discrete else grid)
            rep = dc.decay_experiment(m, n, g, chi_p, psi_p, fit_window, slack=slack)
        stem = f"decay_order{n}"
        rep.write_csv(os.path.join(out, stem + ".csv"))
        rep.write_dat(os.path.join(out, stem))
        reports[f"order{n}"] = rep.to_dict()
        checks.append(Check("decay", f"order {n} bound", rep.passed, float(np.max(rep.series)),
                            stem + ".csv", "max series"))
    _write_json(os.path.join(out, "decay.json"), reports)
    return checks


def _cesaro_grid(m, cfg):
    grid = cfg.get("cesaro", "grid")
    if grid is None and m.validity_window < 1:
        raise cm.HorizonError(f"validity window of {m.kind} ends before index 1")
    if m.discrete:
        if grid is None:
            grid = np.geomspace(1, max(1.0, min(m.validity_window, 1e4)), 30)
        return _int_grid(grid)
    if grid is None:
        grid = np.geomspace(1, max(1.0, min(m.validity_window, 100.0)), 12)
    return np.asarray(grid, dtype=float)


def run_cesaro(m, cfg, out):
    chi_p, psi_p = _profiles(m, cfg)
    probes = [md.profile_vector(m, chi_p), md.profile_vector(m, psi_p)]
    grid = _cesaro_grid(m, cfg)
    if m.discrete:
        series = cm.cesaro_discrete(m, grid, probes, labels=("chi", "psi"))
    else:
        series = cm.cesaro_continuous(m, grid, probes, labels=("chi", "psi"))
    if m.generator is not None:
        cm.commutation_defect(series, m)
    cm.write_csv(series, os.path.join(out, "cesaro.csv"))
    tol = cfg.get("tolerances", "cesaro")
    res = series.residuals
    if m.exact_D:
        passed = bool(np.max(res) <= tol)
        note = f"max residual <= {tol!r}"
    else:
        passed = bool(np.all(res[-1] <= res[0]))
        note = "residual at the last index not above the first"
    _write_json(os.path.join(out, "cesaro.json"), {
        "time": series.time, "index": series.index, "labels": series.labels,
        "reference": series.reference_label, "residuals": res,
        "expectations_real": series.expectations.real,
        "expectations_imag": series.expectations.imag,
        "defects": series.defects, "cross_check": series.cross_check,
        "exact_D": m.exact_D, "verdict": passed, "rule": note})
    return [Check("cesaro", "limit residual", passed, float(np.max(res)), "cesaro.csv", note)]


def _random_compact(dim, rank, mask, rng):
    k = np.zeros((dim, dim), dtype=complex)
    for _ in range(rank):
        a = (rng.normal(size=dim) + 1j * rng.normal(size=dim)) * mask
        b = (rng.normal(size=dim) + 1j * rng.normal(size=dim)) * mask
        k += np.outer(a, b.conj()) / (np.linalg.norm(a) * np.linalg.norm(b))
    return k


def _dense_unitary(m):
    if m.discrete:
        return m.generator.to_dense()
    spec = m.spectral
    vecs = spec.eigenvectors
    return (vecs * np.exp(-1j * spec.eigenvalues)) @ vecs.conj().T


def run_rage(m, cfg, out):
    if m.dim > DENSE_LIMIT:
        raise MemoryError(f"rage recipe limited to dimension {DENSE_LIMIT}")
    if m.generator is None:
        raise ValueError(f"{m.kind} has no single generator")
    rng = np.random.default_rng(cfg.seed)
    grid = _int_grid(cfg.get("rage", "grid"))
    u = _dense_unitary(m)
    k = _random_compact(m.dim, cfg.get("rage", "rank"), m.interior_mask.astype(float), rng)
    phi = md.profile_vector(m, _profiles(m, cfg)[0])
    op = sp.rage_operator(u, k, grid)
    sc = sp.rage_scalar(u, k, phi, grid)
    _csv_rows(os.path.join(out, "rage.csv"), ["n", "deviation", "bound", "scalar_deviation"],
              zip(op.index, op.deviation, op.bound, sc.deviation))
    summary = op.to_dict()
    summary.update(scalar_limit=sc.limit, scalar_deviation=sc.deviation, seed=cfg.seed)
    _write_json(os.path.join(out, "rage.json"), summary)
    return [Check("rage", "operator deviation within gap bound", op.passed,
                  float(op.deviation[-1]), "rage.csv", "deviation at the largest n")]


def run_virial(m, cfg, out):
    rep = sp.virial_report(m, tol=cfg.get("tolerances", "virial"))
    fam_labels = range(len(rep.blocks))
    _csv_rows(os.path.join(out, "virial.csv"), ["cluster", "block", "spread", "allowance"],
              zip(fam_labels, rep.blocks, rep.spreads, rep.allowance))
    _write_json(os.path.join(out, "virial.json"), {
        "generator": rep.generator_kind, "max": rep.max, "passed": rep.passed,
        "clusters": len(rep.blocks)})
    return [Check("virial", "cluster blocks", rep.passed, rep.max, "virial.csv", "max block")]


def _integer_boxes(m):
    c = m.coordinates
    r = np.abs(c) if c.ndim == 1 else np.max(np.abs(c), axis=1)
    r2 = np.abs(c - 2) if c.ndim == 1 else np.max(np.abs(c - 2), axis=1)
    return (r <= 5).astype(np.int64), 3 * (r2 <= 7).astype(np.int64)


def run_bounds(m, cfg, out):
    if m.kind == "regular_rep_Zd":
        phi, psi = _integer_boxes(m)
        rep = dc.regular_rep_improved_bound(m, phi, psi)
        _csv_rows(os.path.join(out, "bounds.csv"),
                  ["j", "length", "coefficient", "lhs", "bound", "pass"],
                  zip(rep.index, rep.lengths, rep.coefficients, rep.lhs, rep.bound,
                      rep.verdicts))
        _write_json(os.path.join(out, "bounds.json"), {
            "mode": "improved bound, exact integers", "passed": rep.passed,
            "coefficients": rep.coefficients, "lengths": rep.lengths})
        return [Check("bounds", "improved bound", rep.passed, float(np.max(rep.bound)),
                      "bounds.csv", "largest bound")]
    orders = cfg.get("bounds", "orders") or _default_orders(m)
    chi_p, psi_p = _profiles(m, cfg)
    rows, checks, details = [], [], {}
    for n in orders:
        prep = dc.prepare_vectors(m, n, chi_p, psi_p)
        const = dc.bound_constant(m, n, prep.chi, prep.psi)
        aux = (0.0, 0.0) if n == 1 else dc.auxiliary_residuals(m, [prep.chi, prep.psi])
        ok = bool(np.isfinite(const))
        rows.append((n, const, prep.chi_scale, aux[0], aux[1], prep.horizon))
        details[f"order{n}"] = {"constant": const, "chi_growth": prep.chi_growth,
                                "psi_growth": prep.psi_growth, "chi_scale": prep.chi_scale,
                                "auxiliary": aux, "horizon": prep.horizon}
        checks.append(Check("bounds", f"order {n} constant", ok, const, "bounds.csv",
                            "constant"))
    _csv_rows(os.path.join(out, "bounds.csv"),
              ["order", "constant", "chi_scale", "aux_AD_DB", "aux_DB", "horizon"], rows)
    _write_json(os.path.join(out, "bounds.json"), details)
    return checks


RECIPES = {"decay": run_decay, "cesaro": run_cesaro, "rage": run_rage,
           "virial": run_virial, "bounds": run_bounds}


def _summary(path, m, checks):
    lines = [f"model {m.kind} dim {m.dim}", "",
             f"{'experiment':<10} {'check':<38} {'verdict':<8} {'value':<24} source"]
    for c in checks:
        verdict = "pass" if c.passed else "FAIL"
        value = "" if c.value is None else repr(float(c.value))
        lines.append(f"{c.experiment:<10} {c.name:<38} {verdict:<8} {value:<24} {c.source}"
                     + (f"  ({c.note})" if c.note else ""))
    failed = sum(not c.passed for c in checks)
    lines += ["", f"{len(checks) - failed} passed, {failed} failed"]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return "\n".join(lines)


def run(config_path, out_dir=None, stream=sys.stdout):
    """Run the experiments of a config file; returns the exit status."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        m = md.build_model(cfg.kind, cfg.model_params)
    except (md.ModelError, ValueError, MemoryError, RuntimeError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    out = out_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "model_card.json"), md.model_card(m))
    checks = []
    for name in cfg.experiments:
        try:
            checks.extend(RECIPES[name](m, cfg, out))
        except (cm.HorizonError, ValueError, MemoryError, oc.FlagError) as exc:
            checks.append(Check(name, "refused", False, None, "", str(exc)))
    text = _summary(os.path.join(out, "summary.txt"), m, checks)
    print(text, file=stream)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERDICT


def main(argv=None):
    parser = argparse.ArgumentParser(prog="commdecay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiments of a config file")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", help=f"report directory (beats {OUTPUT_ENV})")
    sub.add_parser("list-models", help="table of model kinds")
    sub.add_parser("print-schema", help="config keys, types and defaults")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.output_dir)
    if args.command == "list-models":
        print(md.list_models())
        return EXIT_OK
    print(schema_text(), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
