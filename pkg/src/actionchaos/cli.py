"""Command-line front end.

Configuration comes from an INI file (``--config``) and from flags that
mirror every key as ``--section-key``; flags win over the file, which wins
over the defaults. Artifacts are held in memory and written only when the
run succeeds, followed by ``manifest.json``. On failure only ``error.json``
is written.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .actionmatrix import (
    assemble_action_matrix,
    deform_grid,
    load_action_matrix,
    make_regular_grid,
    matrix_sidecar,
    matrix_text,
)
from .chaos import ChaosConfig, chaos_scan, compare_potentials
from .dynamics import PolynomialPotential, ShootingConfig, SystemParams, format_terms, parse_terms
from .errors import ActionChaosError, ConfigError, OverlapRiskError, SolverFailure
from .qaction import PerturbationInput, ground_state_energy_numeric, perturbative_flow_1d, residual_scaling
from .spectra import (
    analyze_matrix,
    degree_sensitivity,
    eigenvalues,
    histogram_csv,
    rmt_selftest,
    values_csv,
)

ENV_OUT_DIR = "ACTIONCHAOS_OUT_DIR"
SUBCOMMANDS = ("build-matrix", "spectrum", "spacing", "qaction-flow", "chaos-scan",
               "compare-potentials", "rmt-selftest")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_SELFTEST, EXIT_OTHER, EXIT_INTERNAL = 0, 2, 3, 4, 5, 1


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    t = str(text).strip().lower()
    return None if t in ("", "auto", "none") else float(t)


def _floats(text):
    return [float(v) for v in str(text).replace(" ", "").split(",") if v]


def _choice(*options):
    def conv(text):
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text
    return conv


# section -> key -> (converter, default)
SCHEMA = {
    "run": {"subcommand": (_choice("", *SUBCOMMANDS), ""), "seed": (int, 7),
            "workers": (int, 1), "out_dir": (str, ""), "format": (_choice("csv", "json"), "csv")},
    "system": {"mass": (float, 1.0), "hbar": (float, 1.0), "dim": (int, 1)},
    "potential": {"omega": (float, 1.0), "lam": (float, 0.0), "terms": (str, "")},
    "grid": {"extent": (float, 6.0), "spacing": (float, 0.5), "deformation": (float, 0.05),
             "seed": (int, 7)},
    "dynamics": {"T": (float, 1.0), "steps": (int, 512), "order": (_choice("2", "4", "6"), "4"),
                 "tol": (float, 1e-11), "max_iter": (int, 30)},
    "spectra": {"matrix": (str, ""), "degree": (int, 6), "edge_fraction": (float, 0.05),
                "bins": (int, 40), "range_max": (float, 4.0)},
    "qaction": {"lam": (float, 0.01), "ladder": (_floats, "1e-4,3e-4,1e-3,3e-3"),
                "fd_points": (int, 4000), "fd_levels": (int, 3), "numeric": (_bool, True)},
    "chaos": {"energies": (_floats, "0.5,2,5,10"), "n_samples": (int, 200),
              "t_total": (float, 500.0), "dt": (float, 0.005), "order": (_choice("2", "4", "6"), "6"),
              "renorm_interval": (float, 1.0), "threshold": (_opt_float, "auto"),
              "dump_exponents": (_bool, False)},
    "quantum": {"lam": (_opt_float, "none"), "terms": (str, "")},
    "selftest": {"n_matrices": (int, 50), "size": (int, 400), "goe_q_min": (float, 0.90),
                 "goe_q_max": (float, 1.00), "poisson_q_max": (float, 0.10),
                 "goe_ks_max": (float, 0.02)},
}


@dataclass
class RunConfig:
    raw: dict
    values: dict
    sources: dict = field(default_factory=dict)

    def __getitem__(self, path):
        section, key = path.split(".")
        return self.values[section][key]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, keys in self.raw.items():
            cp[section] = {k: str(v) for k, v in keys.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def echo(self) -> dict:
        return {"values": self.raw, "sources": self.sources}


def _flag_name(section, key):
    return f"--{section}-{key.replace('_', '-')}"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, "argv")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="actionchaos",
                                description="Action-matrix spectra, quantum-action flow and "
                                            "classical chaos scans.")
    p.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS)
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--seed", dest="run.seed", default=argparse.SUPPRESS)
    p.add_argument("--workers", dest="run.workers", default=argparse.SUPPRESS)
    p.add_argument("--out-dir", dest="run.out_dir", default=argparse.SUPPRESS)
    p.add_argument("--format", dest="run.format", default=argparse.SUPPRESS,
                   choices=("csv", "json"))
    p.add_argument("--version", action="version", version=__version__)
    for section, keys in SCHEMA.items():
        group = p.add_argument_group(section)
        for key, (_, default) in keys.items():
            if section == "run" and key in ("seed", "workers", "out_dir", "format", "subcommand"):
                continue
            group.add_argument(_flag_name(section, key), dest=f"{section}.{key}",
                               default=argparse.SUPPRESS, metavar="VALUE",
                               help=f"default: {default}")
    return p


def parse_config(argv=None) -> RunConfig:
    """Merge defaults, the optional INI file and flags into a validated config."""
    args = build_parser().parse_args(argv)
    raw = {s: {k: str(d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    sources = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found", "config")
        cp = configparser.ConfigParser(interpolation=None, strict=True)
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file: {exc}", "config") from exc
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", section)
            for key, val in cp[section].items():
                if key not in SCHEMA[section]:
                    raise ConfigError("unknown key", f"{section}.{key}")
                raw[section][key] = val
                sources[f"{section}.{key}"] = "file"
    for dest, val in vars(args).items():
        if "." in dest:
            section, key = dest.split(".")
            raw[section][key] = str(val)
            sources[dest] = "flag"
    if args.subcommand:
        raw["run"]["subcommand"] = args.subcommand
        sources["run.subcommand"] = "flag"
    if not raw["run"]["out_dir"]:
        raw["run"]["out_dir"] = os.environ.get(ENV_OUT_DIR, "actionchaos-out")
        sources["run.out_dir"] = "env" if ENV_OUT_DIR in os.environ else "default"
    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, _) in keys.items():
            try:
                values[section][key] = conv(raw[section][key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc), f"{section}.{key}") from exc
    cfg = RunConfig(raw, values, sources)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if not cfg["run.subcommand"]:
        raise ConfigError("no subcommand given", "run.subcommand")
    positive = ["system.mass", "system.hbar", "potential.omega", "grid.extent", "grid.spacing",
                "dynamics.T", "dynamics.tol", "chaos.t_total", "chaos.dt",
                "chaos.renorm_interval", "spectra.range_max"]
    for key in positive:
        if not cfg[key] > 0:
            raise ConfigError("must be positive", key)
    for key in ("run.workers", "dynamics.steps", "spectra.bins", "chaos.n_samples",
                "selftest.n_matrices", "qaction.fd_points", "qaction.fd_levels"):
        if cfg[key] < 1:
            raise ConfigError("must be at least 1", key)
    if cfg["system.dim"] not in (1, 2):
        raise ConfigError("must be 1 or 2", "system.dim")
    if cfg["grid.deformation"] < 0:
        raise ConfigError("must be non-negative", "grid.deformation")
    if cfg["grid.deformation"] >= cfg["grid.spacing"] / 2:
        raise OverlapRiskError("must be below grid.spacing/2 so nodes "
                               "cannot overlap", "grid.deformation")
    if not 0 <= cfg["spectra.edge_fraction"] < 0.5:
        raise ConfigError("must lie in [0, 0.5)", "spectra.edge_fraction")
    thr = cfg["chaos.threshold"]
    if thr is not None and not thr > 0:
        raise ConfigError("must be positive or 'auto'", "chaos.threshold")
    if not cfg["chaos.energies"]:
        raise ConfigError("energy grid is empty", "chaos.energies")
    if not cfg["qaction.ladder"]:
        raise ConfigError("coupling ladder is empty", "qaction.ladder")


def _system(cfg, dim=None):
    return SystemParams(cfg["system.mass"], cfg["system.hbar"], dim or cfg["system.dim"])


def _potential(cfg, dim=None, terms_key="potential.terms", lam=None):
    dim = dim or cfg["system.dim"]
    terms = cfg[terms_key]
    if terms:
        pot = PolynomialPotential(parse_terms(terms))
        if pot.dim != dim:
            raise ConfigError(f"potential is {pot.dim}-D but a {dim}-D potential is needed",
                              terms_key)
        return pot
    lam = cfg["potential.lam"] if lam is None else lam
    return PolynomialPotential.anharmonic(cfg["system.mass"], cfg["potential.omega"], lam, dim)


def _shooting(cfg):
    return ShootingConfig(steps=cfg["dynamics.steps"], order=int(cfg["dynamics.order"]),
                          tol=cfg["dynamics.tol"], max_iter=cfg["dynamics.max_iter"])


def _chaos_config(cfg):
    return ChaosConfig(dt=cfg["chaos.dt"], order=int(cfg["chaos.order"]),
                       t_total=cfg["chaos.t_total"], renorm_interval=cfg["chaos.renorm_interval"],
                       threshold=cfg["chaos.threshold"])


def _fmt(x):
    return format(float(x), ".17g")


def _table(name, columns: dict, provenance: dict, fmt: str):
    """Render a table as CSV (with ``#`` provenance lines) or JSON."""
    if fmt == "json":
        data = {"provenance": provenance,
                "columns": {k: [float(v) for v in vals] for k, vals in columns.items()}}
        return f"{name}.json", json.dumps(data, indent=2) + "\n"
    if len(columns) == 1:
        (col, vals), = columns.items()
        return f"{name}.csv", values_csv(col, vals, provenance)
    lines = [f"# {k}: {v}" for k, v in provenance.items()]
    lines.append(",".join(columns))
    for row in zip(*columns.values()):
        lines.append(",".join(_fmt(v) for v in row))
    return f"{name}.csv", "\n".join(lines) + "\n"


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _matrix(cfg):
    if cfg["spectra.matrix"]:
        return load_action_matrix(cfg["spectra.matrix"])
    dim = cfg["system.dim"]
    grid = make_regular_grid(cfg["grid.extent"], cfg["grid.spacing"], dim)
    grid = deform_grid(grid, cfg["grid.deformation"], cfg["grid.seed"])
    return assemble_action_matrix(_system(cfg), _potential(cfg), grid, cfg["dynamics.T"],
                                  _shooting(cfg), cfg["run.workers"])


def _provenance(cfg, matrix=None):
    out = {"toolkit": f"actionchaos {__version__}", "subcommand": cfg["run.subcommand"]}
    if matrix is not None:
        out.update(n=matrix.n, T=matrix.T, potential=format_terms(matrix.potential),
                   grid_spacing=matrix.nodes.spacing, grid_deformation=matrix.nodes.deformation,
                   grid_seed=matrix.nodes.seed)
    return out


def cmd_build_matrix(cfg):
    m = _matrix(cfg)
    return {"matrix.txt": matrix_text(m), "matrix.txt.json": matrix_sidecar(m)}, m.metadata()


def cmd_spectrum(cfg):
    m = _matrix(cfg)
    spec = eigenvalues(m)
    trace = float(np.trace(m.values))
    summary = {"n": len(spec), "norm": spec.norm, "max_residual": spec.max_residual,
               "noise_floor": spec.noise_floor, "n_resolved": spec.n_resolved,
               "trace": trace, "eigenvalue_sum": float(np.sum(spec.eigenvalues))}
    name, text = _table("spectrum", {"eigenvalue": spec.eigenvalues}, _provenance(cfg, m),
                        cfg["run.format"])
    return {name: text, "spectrum_summary.json": _dumps(summary)}, summary


def cmd_spacing(cfg):
    m = _matrix(cfg)
    rng = (0.0, cfg["spectra.range_max"])
    an = analyze_matrix(m, cfg["spectra.degree"], cfg["spectra.edge_fraction"],
                        cfg["spectra.bins"], rng)
    prov = _provenance(cfg, m)
    prov.update(degree=an.unfolded.degree, edge_fraction=an.unfolded.edge_fraction)
    summary = {**an.fit.as_dict(), "n_levels": len(an.spectrum),
               "n_resolved": an.spectrum.n_resolved, "noise_floor": an.spectrum.noise_floor,
               "mean_spacing": an.unfolded.mean_spacing, "overflow": an.sample.overflow,
               "fit_residual": an.unfolded.fit_residual,
               "degree_sensitivity": {str(k): v for k, v in
                                      degree_sensitivity(an.spectrum, edge_fraction=an.unfolded.edge_fraction).items()}}
    art = dict([_table("spacings", {"spacing": an.sample.spacings}, prov, cfg["run.format"]),
                _table("unfolded", {"level": an.unfolded.levels}, prov, cfg["run.format"])])
    art["histogram.csv"] = histogram_csv(an.sample, prov)
    art["fit.json"] = _dumps(summary)
    return art, summary


def cmd_qaction_flow(cfg):
    m, hb, om = cfg["system.mass"], cfg["system.hbar"], cfg["potential.omega"]
    ladder = cfg["qaction.ladder"]
    numeric = cfg["qaction.numeric"]
    inp = PerturbationInput(m, om, hb, cfg["qaction.lam"])
    gs = (ground_state_energy_numeric(inp.potential(), m, hb, n=cfg["qaction.fd_points"],
                                      levels=cfg["qaction.fd_levels"], tol=1e-6)
          if numeric else None)
    flow = perturbative_flow_1d(inp, gs.energy if gs else None)
    table = residual_scaling(ladder, m, om, hb, numeric, cfg["qaction.fd_points"],
                             cfg["qaction.fd_levels"])
    rungs = []
    for row in table.rows:
        rungs.append({**row, "u2_over_w2_minus_1": row["u2"] / row["w2"] - 1})
    report = {"inputs": {"m": m, "omega": om, "hbar": hb, "lambda": inp.lam,
                         "length_scale": inp.length_scale, "smallness": inp.smallness},
              "E0": flow.E0, "E1": flow.E1,
              "E_gr_numeric": gs.energy if gs else None,
              "E_gr_convergence": gs.convergence if gs else None,
              "w": {"w0": flow.w.w0, "w2": flow.w.w2, "w4": flow.w.w4},
              "u": {"u0": flow.u.u0, "u2": flow.u2_final, "u2_chain": flow.u2_chain,
                    "u4_printed": flow.u4_printed, "u4_chain": flow.u4_chain,
                    "u6_printed": flow.u6_printed, "u6_chain": flow.u6_chain},
              "residual_printed": flow.residual_printed, "residual_chain": flow.residual_chain,
              "designated": flow.designated,
              "designated_u": {"u2": flow.u.u2, "u4": flow.u.u4, "u6": flow.u.u6},
              "x4_relation_gap": flow.x4_relation,
              "scaling": {"rows": rungs, "slope_printed": table.slope_printed,
                          "slope_chain": table.slope_chain,
                          "slope_u2_gap": table.slope_chain_u2,
                          "designated": table.designated}}
    return {"qaction_report.json": _dumps(report)}, {"designated": table.designated}


def cmd_chaos_scan(cfg):
    cc = _chaos_config(cfg)
    res = chaos_scan(_system(cfg, 2), _potential(cfg, 2), cfg["chaos.energies"],
                     cfg["chaos.n_samples"], cfg["run.seed"], cc, cfg["run.workers"])
    art = {"chaos_scan.csv": res.to_csv(), "chaos_config.json": _dumps(res.config_echo())}
    if cfg["chaos.dump_exponents"]:
        art["exponents.csv"] = res.exponents_csv()
    return art, {"fractions": res.fractions.tolist(), "threshold": res.threshold}


def cmd_compare_potentials(cfg):
    if not cfg["quantum.terms"] and cfg["quantum.lam"] is None:
        raise ConfigError("compare-potentials needs quantum.terms or quantum.lam", "quantum.terms")
    cc = _chaos_config(cfg)
    classical = _potential(cfg, 2)
    quantum = _potential(cfg, 2, "quantum.terms", cfg["quantum.lam"])
    paired = compare_potentials(_system(cfg, 2), classical, quantum, cfg["chaos.energies"],
                                cfg["chaos.n_samples"], cfg["run.seed"], cc, cfg["run.workers"])
    echo = {**paired.classical.config_echo(), "classical": format_terms(classical),
            "quantum": format_terms(quantum)}
    return ({"paired_scan.csv": paired.to_csv(), "chaos_config.json": _dumps(echo)},
            {"classical": paired.classical.fractions.tolist(),
             "quantum": paired.quantum.fractions.tolist()})


class SelftestFailure(ActionChaosError):
    def __init__(self, message, details):
        super().__init__(message)
        self.details = details


def cmd_rmt_selftest(cfg):
    r = rmt_selftest(cfg["selftest.n_matrices"], cfg["selftest.size"], cfg["run.seed"],
                     cfg["spectra.degree"], cfg["spectra.edge_fraction"], cfg["run.workers"])
    passed = (cfg["selftest.goe_q_min"] <= r.goe.q <= cfg["selftest.goe_q_max"]
              and r.goe.ks_wigner < cfg["selftest.goe_ks_max"]
              and 0.0 <= r.poisson.q <= cfg["selftest.poisson_q_max"])
    summary = {"goe": r.goe.as_dict(), "poisson": r.poisson.as_dict(), "passed": passed}
    if not passed:
        raise SelftestFailure("random-matrix self-test outside acceptance window", summary)
    return {"selftest.json": _dumps(summary)}, summary


COMMANDS = {"build-matrix": cmd_build_matrix, "spectrum": cmd_spectrum, "spacing": cmd_spacing,
            "qaction-flow": cmd_qaction_flow, "chaos-scan": cmd_chaos_scan,
            "compare-potentials": cmd_compare_potentials, "rmt-selftest": cmd_rmt_selftest}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, SolverFailure):
        return EXIT_SOLVER
    if isinstance(exc, SelftestFailure):
        return EXIT_SELFTEST
    if isinstance(exc, ActionChaosError):
        return EXIT_OTHER
    return EXIT_INTERNAL


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute a validated config; returns (exit status, artifacts written)."""
    out = Path(cfg["run.out_dir"])
    start = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            artifacts, summary = COMMANDS[cfg["run.subcommand"]](cfg)
    except Exception as exc:  # noqa: BLE001 - every failure becomes error.json
        _write_error(out, exc, cfg)
        return exit_code(exc), {}
    manifest = {"toolkit": "actionchaos", "version": __version__, "config": cfg.echo(),
                "config_ini": cfg.to_ini(), "wall_time": time.perf_counter() - start,
                "summary": summary,
                "warnings": sorted({f"{w.category.__name__}: {w.message}" for w in caught}),
                "checksums": {name: _sha256(text) for name, text in sorted(artifacts.items())}}
    out.mkdir(parents=True, exist_ok=True)
    for name, text in artifacts.items():
        (out / name).write_text(text)
    (out / "manifest.json").write_text(_dumps(manifest))
    return EXIT_OK, artifacts


def _write_error(out: Path, exc: BaseException, cfg=None):
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exit_code(exc)}
    for attr in ("key", "pair", "best_residual", "last_valid_time", "details"):
        val = getattr(exc, attr, None)
        if val is not None:
            err[attr] = val
    if cfg is not None:
        err["config"] = cfg.raw
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").write_text(_dumps(err))


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        args = list(sys.argv[1:] if argv is None else argv)
        out = Path(os.environ.get(ENV_OUT_DIR, "actionchaos-out"))
        for i, a in enumerate(args):
            if a == "--out-dir" and i + 1 < len(args):
                out = Path(args[i + 1])
            elif a.startswith("--out-dir="):
                out = Path(a.split("=", 1)[1])
        _write_error(out, exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status, _ = run(cfg)
    if status != EXIT_OK:
        print((Path(cfg["run.out_dir"]) / "error.json").read_text(), file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
