"""Command-line entry point.

Every subcommand reads one JSON config (validated against a schema), writes
its outputs into ``--out-dir`` and lists them, with hashes, in
``manifest.json``.  ``FLOQISING_OUT_DIR`` and ``FLOQISING_THREADS`` override
the output directory and worker count.

Exit codes: 0 success, 2 configuration error, 3 resource cap, 4 fit failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .analysis import (
    FourierSeries,
    HydroFit,
    ThermalState,
    bond_paths,
    eigenphase_mismatch,
    magnus_h2,
    mean_field_angle,
    product_state_energy,
    ztot2_operator,
)
from .channel import PauliChannel
from .circuit import CircuitRecipe, QuenchSpec, build_trotter
from .exceptions import (
    ConfigError,
    ExtrapolationError,
    FitFailure,
    InconsistentSpectrumError,
    InputDomainError,
    ResourceError,
)
from .lattice import Lattice
from .mitigation import ZNEPlan, mitigate_tables, optimal_r_fixed_alpha, optimal_zne_params
from .noise_learning import DEFAULT_LENGTHS, fit_cb, simulate_cb_experiment, write_noise_model
from .pauli import NONTRIVIAL_TWO_QUBIT_LABELS
from .series import ObservableSeries, series_to_csv
from .simulator import (
    DEFAULT_QUBIT_CAP,
    NoiseConfig,
    estimate_from_shots,
    expectation_ztot2,
    ideal_states_by_step,
    read_shot_archive,
    run_noisy_shots,
    write_shot_archive,
)
from .spd import run_spd

log = logging.getLogger("floqising")

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_FIT = 0, 2, 3, 4

_LATTICE = {
    "type": "object",
    "properties": {"nx": {"type": "integer", "minimum": 2}, "ny": {"type": "integer", "minimum": 2}},
    "required": ["nx", "ny"],
    "additionalProperties": False,
}
_QUENCH_PROPS = {
    "lattice": _LATTICE,
    "J": {"type": "number"},
    "h": {"type": "number"},
    "dt": {"type": "number", "exclusiveMinimum": 0},
    "theta": {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]},
    "delta_theta": {"type": "number"},
    "steps": {"type": "integer", "minimum": 0},
}
_CHANNEL = {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}}

SCHEMAS = {
    "quench": {
        "type": "object",
        "properties": {
            **_QUENCH_PROPS,
            "mode": {"enum": ["ideal", "shots"]},
            "shots": {"type": "integer", "minimum": 1},
            "noise": {
                "type": "object",
                "properties": {
                    "two_qubit_channel": _CHANNEL,
                    "depolarizing": {"type": "number", "minimum": 0, "maximum": 1},
                    "leak_prob_2q": {"type": "number", "minimum": 0, "maximum": 1},
                    "coherent_memory_angle": {"type": "number"},
                    "one_q_overrotation": {"type": "number"},
                    "detection_false_positive": {"type": "number", "minimum": 0, "maximum": 1},
                    "detection_false_negative": {"type": "number", "minimum": 0, "maximum": 1},
                },
                "additionalProperties": False,
            },
            "transforms": {
                "type": "object",
                "properties": {
                    "dynamical_decoupling": {"type": "boolean"},
                    "randomized_compiling": {"type": "boolean"},
                    "phase_rule": {"enum": ["standard", "improved"]},
                },
                "additionalProperties": False,
            },
            "amplification": {
                "type": "object",
                "properties": {
                    "alpha": {"type": "number", "minimum": 1},
                    "zeta": {"type": "number", "exclusiveMinimum": 0},
                    "kappa": {"type": "number", "exclusiveMinimum": 0},
                },
                "additionalProperties": False,
            },
            "qubit_cap": {"type": "integer", "minimum": 1},
        },
        "required": ["lattice", "J", "h", "dt", "steps"],
        "additionalProperties": False,
    },
    "mitigate": {
        "type": "object",
        "properties": {
            "lattice": _LATTICE,
            "raw_archive": {"type": "string"},
            "amplified_archive": {"type": "string"},
            "plan": {
                "type": "object",
                "properties": {
                    "alpha": {"type": "number", "minimum": 1},
                    "r": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "zeta": {"type": "number", "exclusiveMinimum": 0},
                    "kappa": {"type": "number", "exclusiveMinimum": 0},
                },
                "additionalProperties": False,
            },
            "noise_model": {"type": "string"},
            "eta": {"type": "number", "exclusiveMinimum": 0},
            "offset": {"type": "number"},
        },
        "required": ["lattice", "raw_archive"],
        "additionalProperties": False,
    },
    "spd": {
        "type": "object",
        "properties": {
            **_QUENCH_PROPS,
            "deltas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
            "max_weight": {"type": ["integer", "null"], "minimum": 0},
            "symmetry": {"type": "boolean"},
            "max_terms": {"type": "integer", "minimum": 1},
            "compare_exact": {"type": "boolean"},
        },
        "required": ["lattice", "J", "h", "dt", "steps"],
        "additionalProperties": False,
    },
    "cb": {
        "type": "object",
        "properties": {
            "total_error": {"type": "number", "minimum": 0, "maximum": 1},
            "theta_eps": {"type": "number"},
            "shots": {"type": "integer", "minimum": 1},
            "lengths": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2},
            "spam": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "coverage_sigma": {"type": "number", "exclusiveMinimum": 0},
            "min_covered": {"type": "integer", "minimum": 0, "maximum": 15},
        },
        "additionalProperties": False,
    },
    "hydro": {
        "type": "object",
        "properties": {
            "data": {"type": "string"},
            "s_min": {"type": "integer", "minimum": 0},
            "snr": {"type": "number", "minimum": 0},
            "modes": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        },
        "additionalProperties": False,
    },
    "magnus": {
        "type": "object",
        "properties": {
            **_QUENCH_PROPS,
            "dts": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
            "thermal": {"type": "boolean"},
        },
        "required": ["lattice", "J", "h"],
        "additionalProperties": False,
    },
}

DEFAULTS = {
    "quench": {"mode": "ideal", "shots": 1000, "theta": 0.0},
    "spd": {"deltas": [2.0**-16], "max_weight": None, "symmetry": True, "max_terms": 2_000_000, "compare_exact": False, "theta": 0.0},
    "cb": {"total_error": 6e-4, "theta_eps": 0.01, "shots": 10_000, "lengths": list(DEFAULT_LENGTHS), "spam": 1.0,
           "coverage_sigma": 3.0, "min_covered": 14},
    "hydro": {"s_min": 5, "snr": 3.0, "modes": [0, 1, 2, 3]},
    "magnus": {"dts": [0.2, 0.1], "thermal": False, "dt": 0.25, "steps": 0, "theta": 0.0},
    "mitigate": {"eta": 1.0, "offset": 0.0},
}

HELP = {
    "quench": "Run a quench. Writes observables.csv (s, mean, stderr, tag) with tags raw and NA, "
    "shot archives (seed, s, shot, bitstring, m, herald_mask, replaced_mask) in shots mode, and manifest.json.",
    "mitigate": "ZNR per archive then ZNE across archives. Writes mitigation.csv "
    "(s, raw, raw_err, na, na_err, znr, znr_err, znr_na, znr_na_err, mitigated, mitigated_err) or mitigation.json.",
    "spd": "Sparse Pauli dynamics of Z_tot^2. Writes spd.csv (delta, s, value, M, wall_time, truncated_mass[, exact]) "
    "and a per-delta summary.",
    "cb": "Simulate and fit cycle benchmarking. Writes cb_fit.csv (label, p_true, p_fit, p_err, pull) and noise_model.json; "
    "exits 4 when fewer than min_covered Paulis agree within coverage_sigma.",
    "hydro": "Fit Fourier-mode decay rates and D. Input CSV columns: s, x, energy, stderr. "
    "Writes hydro.csv (n, q, q2, gamma, gamma_err, n_points, model) and the report.",
    "magnus": "Floquet-Magnus check. Writes magnus.csv (dt, mismatch_h0, mismatch_h2) and term counts.",
}


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int | None
    versions: dict
    started: str
    finished: str = ""
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


class _Outputs:
    """Writes files into the run directory and records their hashes."""

    def __init__(self, out_dir: Path, manifest: RunManifest):
        self.dir = out_dir
        self.manifest = manifest
        out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        self.manifest.outputs[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def write_json(self, name: str, doc) -> Path:
        return self.write(name, json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")

    def close(self) -> None:
        self.manifest.finished = _now()
        (self.dir / "manifest.json").write_text(self.manifest.to_json(), encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# config helpers


def load_config(command: str, path: str | None) -> dict:
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(doc, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    return {**DEFAULTS.get(command, {}), **doc}


def quench_spec(cfg: dict) -> QuenchSpec:
    lattice = Lattice.from_dict(cfg["lattice"])
    theta = cfg.get("theta", 0.0)
    if "delta_theta" in cfg:
        theta = mean_field_angle(cfg["h"], cfg["J"]).theta + cfg["delta_theta"]
    if isinstance(theta, list) and len(theta) != lattice.n_sites:
        raise ConfigError(f"theta lists {len(theta)} angles for {lattice.n_sites} sites")
    doc = {**cfg, "theta": theta, "steps": cfg.get("steps", 0)}
    return QuenchSpec.from_dict(doc)


def _noise_config(doc: dict | None) -> NoiseConfig:
    if not doc:
        return NoiseConfig.noiseless()
    doc = dict(doc)
    if "depolarizing" in doc:
        if "two_qubit_channel" in doc:
            raise ConfigError("give either depolarizing or two_qubit_channel, not both")
        doc["two_qubit_channel"] = PauliChannel.depolarizing(doc.pop("depolarizing"))
    return NoiseConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# commands


def cmd_quench(cfg: dict, out: _Outputs, seed: int, fmt: str, workers: int) -> int:
    spec = quench_spec(cfg)
    cap = cfg.get("qubit_cap", DEFAULT_QUBIT_CAP)
    if spec.n_sites > cap:
        raise ResourceError(f"simulator: {spec.n_sites} qubits exceed the statevector cap of {cap}; use the spd command")
    circuit = build_trotter(spec)
    series = []
    if cfg["mode"] == "ideal":
        vals = [expectation_ztot2(st) for _, st in ideal_states_by_step(circuit, spec, cap=cap)]
        series.append(ObservableSeries(np.arange(len(vals)), vals, np.zeros(len(vals)), "raw"))
    else:
        noise = _noise_config(cfg.get("noise"))
        tr = cfg.get("transforms", {})
        base = CircuitRecipe(
            circuit,
            dynamical_decoupling=tr.get("dynamical_decoupling", False),
            randomized_compiling=tr.get("randomized_compiling", False),
            phase_rule=tr.get("phase_rule", "standard"),
        )
        runs = [("raw", base, seed)]
        amp = cfg.get("amplification")
        plan = None
        if amp is not None:
            plan = _plan_from(amp)
            recipe = CircuitRecipe(
                circuit,
                dynamical_decoupling=base.dynamical_decoupling,
                randomized_compiling=base.randomized_compiling,
                phase_rule=base.phase_rule,
                alpha=plan.alpha,
                channel=noise.two_qubit_channel,
            )
            runs.append(("NA", recipe, seed + 1))
        total = cfg["shots"]
        split = plan.shot_split(total) if plan is not None else (total, 0)
        for (tag, recipe, run_seed), shots in zip(runs, split):
            if shots < 1:
                raise ConfigError(f"shot split leaves no shots for the {tag} run")
            tables = run_noisy_shots(recipe, noise, spec, shots, run_seed, workers=workers, cap=cap)
            out.write(f"archive_{tag.lower()}.csv", write_shot_archive(tables, run_seed))
            ests = [estimate_from_shots(t) for t in tables]
            series.append(ObservableSeries(np.arange(len(ests)), [e.mean for e in ests], [e.stderr for e in ests], tag))
        if plan is not None:
            out.write_json("plan.json", plan.to_dict())
    if fmt == "csv":
        out.write("observables.csv", series_to_csv(series))
    else:
        out.write_json(
            "observables.json",
            {"spec": spec.to_dict(), "series": [{"tag": s.tag, "s": s.s, "mean": s.mean, "stderr": s.stderr} for s in series]},
        )
    for s in series:
        log.info("%s: s=%d  <Z_tot^2> = %.6f", s.tag, s.s[-1], s.mean[-1])
    return EXIT_OK


def _plan_from(doc: dict) -> ZNEPlan:
    if "alpha" in doc:
        alpha = float(doc["alpha"])
        zeta = float(doc.get("zeta", 0.3))
        kappa = float(doc.get("kappa", 1.0))
        if "r" in doc:
            r = float(doc["r"])
        else:
            r = optimal_r_fixed_alpha(alpha, zeta, kappa) if alpha > 1 else 0.5
        return ZNEPlan(alpha, r, zeta, kappa)
    return optimal_zne_params(float(doc.get("zeta", 0.3)), float(doc.get("kappa", 1.0)))


def cmd_mitigate(cfg: dict, out: _Outputs, seed: int, fmt: str, workers: int) -> int:
    lattice = Lattice.from_dict(cfg["lattice"])
    n = lattice.n_sites
    try:
        raw = read_shot_archive(Path(cfg["raw_archive"]).read_text(encoding="utf-8"), n)
    except OSError as exc:
        raise ConfigError(f"cannot read raw archive: {exc}") from exc
    amplified = None
    na_path = cfg.get("amplified_archive")
    if na_path is not None and Path(na_path).exists():
        amplified = read_shot_archive(Path(na_path).read_text(encoding="utf-8"), n)
    elif na_path is not None:
        warnings.warn(f"amplified archive {na_path} not found", RuntimeWarning, stacklevel=2)
    plan = _plan_from(cfg["plan"]) if "plan" in cfg else None
    eta = cfg["eta"]
    if "noise_model" in cfg:
        channel, meta = PauliChannel.from_json(Path(cfg["noise_model"]).read_text(encoding="utf-8"))
        log.info("noise model total infidelity %.3g", channel.average_infidelity)
    reports = mitigate_tables(raw, amplified, plan, eta=eta, offset=cfg["offset"])
    if fmt == "csv":
        rows = []
        for r in reports:
            na = r.amplified or (math.nan, math.nan)
            zna = r.znr_amplified or (math.nan, math.nan)
            rows.append([r.s, *r.raw, *na, *r.znr, *zna, *r.mitigated])
        header = ["s", "raw", "raw_err", "na", "na_err", "znr", "znr_err", "znr_na", "znr_na_err", "mitigated", "mitigated_err"]
        out.write("mitigation.csv", _csv_text(header, rows))
    out.write_json(
        "mitigation.json",
        {"plan": None if plan is None else {**plan.to_dict(), "eta": eta}, "steps": [r.to_dict() for r in reports]},
    )
    return EXIT_OK


def cmd_spd(cfg: dict, out: _Outputs, seed: int, fmt: str, workers: int) -> int:
    spec = quench_spec(cfg)
    exact = None
    if cfg["compare_exact"]:
        if spec.n_sites > DEFAULT_QUBIT_CAP:
            raise ResourceError(f"simulator: exact comparison needs <= {DEFAULT_QUBIT_CAP} qubits")
        exact = [expectation_ztot2(st) for _, st in ideal_states_by_step(build_trotter(spec), spec)]
    rows, summary = [], []
    for delta in cfg["deltas"]:
        res = run_spd(spec, delta=delta, max_weight=cfg["max_weight"], symmetry=cfg["symmetry"], max_terms=cfg["max_terms"])
        for t in res.telemetry:
            row = [float(delta), t.s, float(t.value), t.n_terms, round(t.wall_time, 6), float(t.truncated_mass)]
            if exact is not None:
                row.append(float(exact[t.s]))
            rows.append(row)
        entry = {"delta": delta, "max_terms": res.max_terms, "saturated": res.saturated, "symmetry_merged": res.symmetry_merged}
        if exact is not None:
            entry["max_abs_error"] = float(np.max(np.abs(res.values - np.asarray(exact[: res.values.size]))))
        summary.append(entry)
        log.info("delta=%g  max terms %d%s", delta, res.max_terms, "  (saturated)" if res.saturated else "")
    header = ["delta", "s", "value", "M", "wall_time", "truncated_mass"] + (["exact"] if exact is not None else [])
    if fmt == "csv":
        out.write("spd.csv", _csv_text(header, rows))
    out.write_json("spd_summary.json", {"spec": spec.to_dict(), "runs": summary})
    if any(e["saturated"] for e in summary):
        return EXIT_RESOURCE
    return EXIT_OK


def cmd_cb(cfg: dict, out: _Outputs, seed: int, fmt: str, workers: int) -> int:
    rng = np.random.default_rng(seed)
    true = PauliChannel.random_symmetric(cfg["total_error"], rng)
    data = simulate_cb_experiment(true, cfg["theta_eps"], cfg["shots"], rng, lengths=tuple(cfg["lengths"]), spam=cfg["spam"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = fit_cb(data)
    p_true = true.probs[1:]
    p_fit = res.raw_probs[1:]
    p_err = res.prob_errors[1:]
    pulls = (p_fit - p_true) / np.where(p_err > 0, p_err, np.inf)
    covered = int(np.sum(np.abs(pulls) <= cfg["coverage_sigma"]))
    rows = [[lab, float(a), float(b), float(c), float(d)] for lab, a, b, c, d in zip(NONTRIVIAL_TWO_QUBIT_LABELS, p_true, p_fit, p_err, pulls)]
    if fmt == "csv":
        out.write("cb_fit.csv", _csv_text(["label", "p_true", "p_fit", "p_err", "pull"], rows))
    out.write_json("cb_report.json", {**res.to_dict(), "covered": covered, "true_probs": true.to_dict()})
    stamp = "1970-01-01T00:00:00+00:00"  # fixed so that reruns are byte-identical
    path = out.dir / "noise_model.json"
    write_noise_model(path, res.channel, theta_eps=res.theta_eps, timestamp=stamp, seed=seed)
    out.manifest.outputs["noise_model.json"] = hashlib.sha256(path.read_bytes()).hexdigest()
    log.info("covered %d/15 Paulis within %.1f sigma", covered, cfg["coverage_sigma"])
    return EXIT_OK if covered >= cfg["min_covered"] else EXIT_FIT


def load_hydro_csv(text: str):
    """Read ``s, x, energy, stderr`` rows into ``(s, columns, errors)`` arrays."""
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or {"s", "x", "energy", "stderr"} - set(rows[0]):
        raise ConfigError("hydro data needs columns s, x, energy, stderr")
    s_vals = sorted({int(r["s"]) for r in rows})
    x_vals = sorted({int(r["x"]) for r in rows})
    cols = np.full((len(s_vals), len(x_vals)), np.nan)
    errs = np.zeros_like(cols)
    si = {s: k for k, s in enumerate(s_vals)}
    for r in rows:
        cols[si[int(r["s"])], int(r["x"])] = float(r["energy"])
        errs[si[int(r["s"])], int(r["x"])] = float(r["stderr"])
    if np.isnan(cols).any():
        raise ConfigError("hydro data has missing (s, x) entries")
    return np.array(s_vals), cols, errs


def hydro_csv(s, columns, errors) -> str:
    rows = [[int(sv), x, float(columns[k, x]), float(errors[k, x])] for k, sv in enumerate(s) for x in range(columns.shape[1])]
    return _csv_text(["s", "x", "energy", "stderr"], rows)


def cmd_hydro(cfg: dict, out: _Outputs, seed: int, fmt: str, workers: int) -> int:
    if "data" in cfg:
        text = Path(cfg["data"]).read_text(encoding="utf-8")
    else:
        text = resources.files("floqising").joinpath("data/hydro_synthetic.csv").read_text(encoding="utf-8")
    s, cols, errs = load_hydro_csv(text)
    series = FourierSeries.from_profiles(s, cols, errs, n_modes=cfg["modes"])
    fit = HydroFit(s_min=cfg["s_min"], snr=cfg["snr"]).fit(series)
    report = fit.report()
    if fmt == "csv":
        rows = [[m.n, m.q, m.q**2, m.gamma, m.gamma_err, m.n_points, m.model] for m in fit.modes_]
        out.write("hydro.csv", _csv_text(["n", "q", "q2", "gamma", "gamma_err", "n_points", "model"], rows))
    out.write_json("hydro_report.json", report)
    print(f"D = {report['D']:.4f} +- {report['D_err']:.4f}")
    return EXIT_OK


def cmd_magnus(cfg: dict, out: _Outputs, seed: int, fmt: str, workers: int) -> int:
    lattice = Lattice.from_dict(cfg["lattice"])
    if lattice.n_sites > 12:
        raise ResourceError("analysis: dense eigenphase checks are limited to 12 qubits")
    rows = []
    for dt in cfg["dts"]:
        spec = QuenchSpec.uniform(lattice, cfg["J"], cfg["h"], dt, 0.0, 1)
        rows.append([float(dt), eigenphase_mismatch(spec, include_h2=False), eigenphase_mismatch(spec)])
    spec = quench_spec(cfg)
    h0, h2 = magnus_h2(spec)
    report = {
        "term_counts": {"ZZ": h2.count("ZZ"), "YY": h2.count("YY"), "X": h2.count("X"), "ZXZ": len(bond_paths(lattice))},
        "mismatch": [{"dt": r[0], "h0": r[1], "h0_plus_h2": r[2]} for r in rows],
    }
    if len(rows) > 1:
        report["ratios"] = [rows[k][2] / rows[k + 1][2] for k in range(len(rows) - 1)]
    if cfg["thermal"]:
        h_eff = h0 + h2
        ts = ThermalState.from_hamiltonian(h_eff)
        energy = product_state_energy(h_eff, spec.theta)
        beta = ts.solve_beta(energy)
        report["thermal"] = {"energy": energy, "beta_eff": beta, "ztot2": ts.average(ztot2_operator(lattice.n_sites), beta)}
    if fmt == "csv":
        out.write("magnus.csv", _csv_text(["dt", "mismatch_h0", "mismatch_h2"], rows))
    out.write_json("magnus_report.json", report)
    return EXIT_OK


COMMANDS = {
    "quench": cmd_quench,
    "mitigate": cmd_mitigate,
    "spd": cmd_spd,
    "cb": cmd_cb,
    "hydro": cmd_hydro,
    "magnus": cmd_magnus,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floqising", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name].split(".")[0], description=HELP[name])
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=None, help="output directory (default: ./floqising-out/<command>)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: available cores)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out_dir = os.environ.get("FLOQISING_OUT_DIR") or args.out_dir or os.path.join("floqising-out", args.command)
    workers = args.workers or int(os.environ.get("FLOQISING_THREADS", 0)) or (os.cpu_count() or 1)
    try:
        cfg = load_config(args.command, args.config)
        manifest = RunManifest(
            command=args.command,
            config_hash=config_hash(cfg),
            seed=args.seed,
            versions={"floqising": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
            started=_now(),
        )
        out = _Outputs(Path(out_dir), manifest)
        code = COMMANDS[args.command](cfg, out, args.seed, args.format, workers)
        out.close()
        return code
    except (ConfigError, jsonschema.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputDomainError as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResourceError, MemoryError) as exc:
        print(f"resource limit ({args.command}): {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (FitFailure, ExtrapolationError, InconsistentSpectrumError) as exc:
        print(f"fit failure ({args.command}): {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
