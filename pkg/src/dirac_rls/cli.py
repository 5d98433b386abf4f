"""Batch driver: configuration, command dispatch and result files.

Configuration files are INI-style (read with :mod:`configparser`) with the
sections ``[potential]``, ``[grid]``, ``[solver]`` and ``[output]``. Unknown
sections or keys are rejected. Every run writes CSV tables plus one
``manifest.json`` into the output directory; files are replaced atomically.

Exit codes: 0 success, 1 validation error, 2 solver failure (near-exceptional
lambda or divergence), 3 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import amplitude as amp
from . import partial_wave as pw
from . import s_matrix as sm
from .dirac_algebra import Kinematics
from .discretization import build_volume_grid, lebedev_orders
from .kernels import kernel_check
from .potentials import FAMILIES, PotentialSpec
from .rls_solver import (COND_LIMIT, EXCEPTIONAL_RATIO, RESIDUAL_TOL, BornDivergenceError,
                         GridResolutionError, NearExceptionalError, assemble, exceptional_scan,
                         recover_phi, solve_modified_rls)

logger = logging.getLogger("dirac_rls")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
COMMANDS = ("kernel-check", "solve", "amplitude", "smatrix", "reconstruct", "partial-wave",
            "exceptional-scan", "sweep")
SWEEPABLE = COMMANDS[:6]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


# ---------------------------------------------------------------------------
# configuration

def _floats(text: str) -> tuple:
    items = [t for t in text.replace(";", ",").split(",") if t.strip()]
    return tuple(float(t) for t in items)


def _vec3(text: str) -> tuple:
    v = _floats(text)
    if len(v) != 3:
        raise ValueError("expected three comma-separated numbers")
    return v


def _optional(conv):
    def parse(text: str):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


# section -> key -> parser
_SCHEMA = {
    "potential": {"family": str, "strength": float, "inverse_range": float,
                  "cutoff": _optional(float), "charge": float, "vector": _optional(_vec3)},
    "grid": {"r_max": float, "n_r": int, "sphere_order": int},
    "solver": {"mass": float, "lambda": _floats, "lambda_range": _floats, "channel": str,
               "direction": _vec3, "convention": str, "l_max": int, "radii": _optional(_floats),
               "pairs": int, "seed": int, "condition_limit": float, "residual_tol": float,
               "exceptional_ratio": float, "threads": int},
    "output": {"directory": str, "command": str, "precision": int},
}


@dataclass(frozen=True)
class RunConfig:
    potential: PotentialSpec
    mass: float
    lambdas: tuple
    r_max: float
    n_r: int = 32
    sphere_order: int = 26
    channel: str = "auto"
    direction: tuple = (0.0, 0.0, 1.0)
    convention: str = "unitary"
    l_max: int = 3
    radii: tuple | None = None
    pairs: int = 50
    seed: int = 0
    condition_limit: float = COND_LIMIT
    residual_tol: float = RESIDUAL_TOL
    exceptional_ratio: float = EXCEPTIONAL_RATIO
    threads: int = 1
    out_dir: str = "results"
    sweep_command: str = "smatrix"
    precision: int = 12

    def channel_for(self, kin: Kinematics) -> int:
        """Incident channel n at this lambda; "auto" is the upper channel of the on-shell block."""
        if self.channel == "auto":
            return kin.channels[1]
        return int(self.channel)

    def asymptotic_radii(self) -> tuple:
        return self.radii if self.radii else (2.0 * self.r_max, 4.0 * self.r_max, 8.0 * self.r_max)


def _parse(parser: configparser.ConfigParser) -> dict:
    raw = {}
    for sec in parser.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        raw[sec] = {}
        for key, text in parser.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key '{key}' in [{sec}]")
            try:
                raw[sec][key] = _SCHEMA[sec][key](text)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key} = {text!r}: {exc}") from None
    return raw


def config_from_dict(raw: dict, check: bool = True) -> RunConfig:
    """Build a :class:`RunConfig` from parsed sections, filling defaults.

    With ``check`` (default) the result is also passed through :func:`validate`.
    """
    pot = dict(raw.get("potential", {}))
    grid = raw.get("grid", {})
    sol = raw.get("solver", {})
    out = raw.get("output", {})
    if "family" not in pot:
        raise ConfigError("[potential] family is required")
    if pot["family"] not in FAMILIES or pot["family"] == "matrix-table":
        allowed = ", ".join(f for f in FAMILIES if f != "matrix-table")
        raise ConfigError(f"potential family {pot['family']!r} not available from a config file "
                          f"(choose from {allowed})")
    try:
        spec = PotentialSpec(pot.pop("family"), **pot)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if "mass" not in sol:
        raise ConfigError("[solver] mass is required")
    if ("lambda" in sol) == ("lambda_range" in sol):
        raise ConfigError("give exactly one of [solver] lambda or lambda_range")
    if "lambda" in sol:
        lams = tuple(sol["lambda"])
    else:
        rng = sol["lambda_range"]
        if len(rng) != 3 or rng[2] < 1 or rng[2] != int(rng[2]):
            raise ConfigError("lambda_range is 'start, stop, count'")
        lams = tuple(float(x) for x in np.linspace(rng[0], rng[1], int(rng[2])))
    keys = {"n_r": grid.get("n_r", 32), "sphere_order": grid.get("sphere_order", 26)}
    for k in ("channel", "direction", "convention", "l_max", "radii", "pairs", "seed",
              "condition_limit", "residual_tol", "exceptional_ratio", "threads"):
        if k in sol:
            keys[k] = sol[k]
    if "directory" in out:
        keys["out_dir"] = out["directory"]
    if "command" in out:
        keys["sweep_command"] = out["command"]
    if "precision" in out:
        keys["precision"] = out["precision"]
    cfg = RunConfig(spec, float(sol["mass"]), lams,
                    float(grid.get("r_max", 12.0 * spec.range)), **keys)
    if check:
        validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Raise :class:`ConfigError` for anything that would fail before computing."""
    if cfg.mass <= 0:
        raise ConfigError("mass must be positive")
    if not cfg.lambdas:
        raise ConfigError("no lambda values given")
    for lam in cfg.lambdas:
        if abs(lam) <= cfg.mass:
            raise ConfigError(f"requires |lambda| > m (lambda={lam:g}, m={cfg.mass:g})")
    if cfg.sphere_order not in lebedev_orders():
        raise ConfigError(f"sphere_order {cfg.sphere_order} is not a Lebedev point count; "
                          f"choose from {sorted(lebedev_orders())}")
    if cfg.n_r < 8:
        raise ConfigError("n_r must be at least 8")
    if cfg.r_max <= 0:
        raise ConfigError("r_max must be positive")
    if cfg.convention not in sm.CONVENTIONS:
        raise ConfigError(f"convention must be one of {sm.CONVENTIONS}")
    if cfg.channel != "auto":
        try:
            n = int(cfg.channel)
        except ValueError:
            raise ConfigError("channel is 'auto' or an integer 1..4") from None
        for lam in cfg.lambdas:
            kin = Kinematics(cfg.mass, lam)
            if n not in kin.channels:
                raise ConfigError(f"channel {n} is not in the on-shell block at lambda={lam:g} "
                                  f"(channels {kin.channels})")
    if cfg.l_max < 0 or cfg.pairs < 1 or cfg.threads < 1 or cfg.precision < 1:
        raise ConfigError("l_max >= 0, pairs >= 1, threads >= 1 and precision >= 1 required")
    if cfg.sweep_command not in SWEEPABLE:
        raise ConfigError(f"[output] command must be one of {SWEEPABLE}")
    for lam in cfg.lambdas:
        kappa = Kinematics(cfg.mass, lam).kappa
        if kappa * cfg.r_max > cfg.n_r / 2:
            raise ConfigError(f"grid too coarse at lambda={lam:g}: kappa*r_max = "
                              f"{kappa * cfg.r_max:.3g} > n_r/2 = {cfg.n_r / 2:g}")


def load_config(path, check: bool = True) -> RunConfig:
    """Read, parse and (by default) validate a config file. Missing files raise OSError."""
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as fh:
        try:
            parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
    return config_from_dict(_parse(parser), check)


def _fmt_float(x: float) -> str:
    return repr(float(x))


def config_to_dict(cfg: RunConfig) -> dict:
    """Config echo with every value explicit (round-trips through load_config)."""
    p = cfg.potential
    pot = {"family": p.family, "strength": p.strength, "inverse_range": p.inverse_range,
           "cutoff": p.cutoff, "charge": p.charge,
           "vector": None if p.vector is None else list(p.vector)}
    return {
        "potential": pot,
        "grid": {"r_max": cfg.r_max, "n_r": cfg.n_r, "sphere_order": cfg.sphere_order},
        "solver": {"mass": cfg.mass, "lambda": list(cfg.lambdas), "channel": cfg.channel,
                   "direction": list(cfg.direction), "convention": cfg.convention,
                   "l_max": cfg.l_max, "radii": None if cfg.radii is None else list(cfg.radii),
                   "pairs": cfg.pairs, "seed": cfg.seed, "condition_limit": cfg.condition_limit,
                   "residual_tol": cfg.residual_tol, "exceptional_ratio": cfg.exceptional_ratio,
                   "threads": cfg.threads},
        "output": {"directory": cfg.out_dir, "command": cfg.sweep_command,
                   "precision": cfg.precision},
    }


def _ini_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt_float(x) for x in v)
    if isinstance(v, float):
        return _fmt_float(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for sec, items in config_to_dict(cfg).items():
        parser[sec] = {k: _ini_value(v) for k, v in items.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def write_config(cfg: RunConfig, path) -> str:
    _atomic_write(str(path), dump_config(cfg))
    return str(path)


# ---------------------------------------------------------------------------
# results

@dataclass
class Table:
    name: str
    header: list
    rows: list


@dataclass
class ResultManifest:
    command: str
    config: dict
    outputs: list = field(default_factory=list)  # [{"lambda": x, "files": [...]}, ...]
    diagnostics: dict = field(default_factory=dict)  # keyed by lambda label
    timings: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "command": self.command,
                "config": self.config, "outputs": self.outputs,
                "diagnostics": self.diagnostics, "timings": self.timings}


MANIFEST_KEYS = ("schema_version", "command", "config", "outputs", "diagnostics", "timings")


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(v, precision: int) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{precision}e}"
    return str(v)


def table_csv(table: Table, precision: int = 12) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(table.header)
    for row in table.rows:
        wr.writerow([_cell(v, precision) for v in row])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def write_results(manifest: ResultManifest, tables: list, out_dir: str,
                  precision: int = 12) -> list:
    """Write every table as CSV, then the manifest. Returns the written paths."""
    paths = []
    for t in tables:
        path = os.path.join(out_dir, f"{t.name}.csv")
        _atomic_write(path, table_csv(t, precision))
        paths.append(path)
    for entry in manifest.outputs:
        for f in entry["files"]:
            if not os.path.exists(os.path.join(out_dir, f)):
                raise OSError(f"manifest references missing file {f}")
    mpath = os.path.join(out_dir, "manifest.json")
    _atomic_write(mpath, json.dumps(_jsonable(manifest.to_dict()), indent=2, sort_keys=True) + "\n")
    paths.append(mpath)
    return paths


# ---------------------------------------------------------------------------
# commands (one lambda each; return tables and scalar diagnostics)

def _tag(lam: float) -> str:
    return f"lam{lam:+.6f}".replace(".", "p")


def _reim(z) -> list:
    out = []
    for c in np.ravel(z):
        out += [float(c.real), float(c.imag)]
    return out


def _reim_header(prefix: str, n: int) -> list:
    return [f"{p}_{prefix}{i}" for i in range(1, n + 1) for p in ("re", "im")]


class _Context:
    """Per-lambda solver state (grid, potential, assembled operator)."""

    def __init__(self, cfg: RunConfig, lam: float):
        self.cfg = cfg
        self.kin = Kinematics(cfg.mass, lam, cfg.direction)
        self.grid = build_volume_grid(cfg.r_max, cfg.n_r, cfg.sphere_order)
        self._op = None

    @property
    def op(self):
        if self._op is None:
            self._op = assemble(self.kin, self.cfg.potential, self.grid)
            self._op.cond_limit = self.cfg.condition_limit
            self._op.residual_tol = self.cfg.residual_tol
        return self._op


def cmd_kernel_check(ctx: _Context):
    rep = kernel_check(ctx.kin, n_points=20, seed=ctx.cfg.seed)
    header = ["x", "y", "z", "rel_diff"] + [f"residual_h{i}" for i in range(rep.steps.size)] \
        + ["min_order"]
    rows = [list(p) + [d] + list(res) + [float(o.min())]
            for p, d, res, o in zip(rep.points, rep.rel_diff, rep.residuals, rep.orders)]
    diag = {"max_rel_diff": rep.max_rel_diff, "min_fd_order": rep.min_order,
            "fd_steps": list(rep.steps)}
    return [("kernel_check", header, rows)], diag


def cmd_solve(ctx: _Context):
    kin, op = ctx.kin, ctx.op
    n = ctx.cfg.channel_for(kin)
    psi = solve_modified_rls(kin, n, None, op=op)
    phi = recover_phi(psi, op)
    header = ["x", "y", "z"] + _reim_header("psi", 4) + _reim_header("phi", 4)
    rows = [list(r) + _reim(p) + _reim(f) for r, p, f in zip(ctx.grid.nodes, psi.values, phi)]
    diag = {"channel": n, "nodes": ctx.grid.size,
            "condition": op.condition if not op.potential.is_zero else 1.0,
            "relative_residual": op.last_residual}
    return [("phi", header, rows)], diag


def cmd_amplitude(ctx: _Context):
    kin, op = ctx.kin, ctx.op
    n = ctx.cfg.channel_for(kin)
    psi = solve_modified_rls(kin, n, None, op=op)
    w = ctx.grid.sphere.directions
    comp = amp.amplitude_components(w, psi, op)
    f = amp.scattering_amplitude(w, psi, op)
    rep = amp.asymptotic_check(psi, op, ctx.cfg.asymptotic_radii())
    header = ["wx", "wy", "wz", "wpx", "wpy", "wpz", "n"] + _reim_header("f", 4) \
        + _reim_header("f_s", 4)
    rows = [list(wa) + list(kin.direction) + [n] + _reim(fa) + _reim(ca)
            for wa, fa, ca in zip(w, f, comp.values)]
    diag = {"channel": n, "asymptotic_radii": list(rep.radii),
            "asymptotic_deviation": list(rep.deviation), "asymptotic_monotone": rep.monotone,
            "literal_coefficient_deviation": list(rep.literal_deviation),
            "two_route_far_field_error": rep.two_route_error,
            "radii_beyond_reliable_range": rep.beyond_grid}
    return [("amplitude", header, rows)], diag


def _s_matrix(ctx: _Context):
    kin, op = ctx.kin, ctx.op
    T = sm.assemble_t_operator(kin, kin.block, None, ctx.grid, ctx.grid.sphere, op=op,
                               convention=ctx.cfg.convention)
    S = sm.s_operator(T)
    return T, S, sm.spectrum(S)


def cmd_smatrix(ctx: _Context):
    T, S, sd = _s_matrix(ctx)
    header = ["j", "re_mu", "im_mu", "abs_mu", "half_arg_mu", "abs_mu_minus_1"]
    rows = [[j, float(m.real), float(m.imag), float(abs(m)), float(np.angle(m) / 2),
             float(abs(m - 1))] for j, m in enumerate(sd.mu)]
    diag = {"block": T.p, "convention": T.convention,
            "unitarity_defect": S.diagnostics["unitarity_defect"], "hs_norm": sm.hs_norm(T),
            "condition": T.diagnostics.get("condition", 1.0),
            "orthonormality_residual": sd.orthonormality_residual,
            "eigen_residual": sd.eigen_residual, "schur_fallback": sd.schur,
            "max_abs_mu_minus_1": float(np.max(np.abs(sd.mu - 1.0)))}
    return [("eigenvalues", header, rows)], diag


def cmd_reconstruct(ctx: _Context):
    kin, op, cfg = ctx.kin, ctx.op, ctx.cfg
    T, S, sd = _s_matrix(ctx)
    rec = sm.reconstruct(sd)
    dirs = ctx.grid.sphere.directions
    M = dirs.shape[0]
    block = sm.solve_block(kin, kin.block, None, ctx.grid, dirs, op)
    direct = sm.nu_factor(kin) * sm.t_kernel(dirs, block)  # (M, 2, M, 2)
    rng = np.random.default_rng(cfg.seed)
    flat = rng.choice(M * M, size=min(cfg.pairs, M * M), replace=False)
    pairs = sorted((int(i // M), int(i % M)) for i in flat)
    chans = kin.channels
    amp_cache = {}
    for _, b in pairs:
        if b in amp_cache:
            continue
        kb = kin.with_direction(dirs[b])
        vals = []
        for n in chans:
            psi = solve_modified_rls(kb, n, None, op=op)
            vals.append(amp.amplitude_components(dirs, psi, op).on_block)  # (M, 2)
        amp_cache[b] = np.stack(vals, axis=-1)  # (M, 2 s, 2 n)
    header = ["a", "b", "wx", "wy", "wz", "wpx", "wpy", "wpz", "s", "n",
              "re_recon", "im_recon", "re_direct", "im_direct", "re_amplitude", "im_amplitude",
              "abs_err_direct", "abs_err_amplitude"]
    rows, rec_v, dir_v, amp_v = [], [], [], []
    for a, b in pairs:
        for si, s in enumerate(chans):
            for ni, n in enumerate(chans):
                r = rec.f_components[a, si, b, ni]
                d = direct[a, si, b, ni]
                f = amp_cache[b][a, si, ni]
                rec_v.append(r)
                dir_v.append(d)
                amp_v.append(f)
                rows.append([a, b] + list(dirs[a]) + list(dirs[b]) + [s, n]
                            + _reim(r) + _reim(d) + _reim(f) + [float(abs(r - d)), float(abs(r - f))])
    rec_v, dir_v, amp_v = map(np.asarray, (rec_v, dir_v, amp_v))

    def rel(x, y):
        scale = np.max(np.abs(y))
        return float(np.max(np.abs(x - y)) / scale) if scale > 0 else float(np.max(np.abs(x)))

    diag = {"pairs": len(pairs), "rank": rec.rank,
            "max_relative_error": max(rel(rec_v, dir_v), rel(rec_v, amp_v)),
            "max_relative_error_direct": rel(rec_v, dir_v),
            "max_relative_error_amplitude": rel(rec_v, amp_v),
            "unitarity_defect": S.diagnostics["unitarity_defect"]}
    return [("reconstruction", header, rows)], diag


def cmd_partial_wave(ctx: _Context):
    spec, kin = ctx.cfg.potential, ctx.kin
    if not spec.is_scalar or not spec.is_radial:
        raise ConfigError("partial-wave needs a radial potential without a vector part")
    if kin.lam <= 0:
        raise ConfigError("partial-wave needs lambda > m")
    T, S, sd = _s_matrix(ctx)
    if ctx.cfg.convention != "unitary":
        raise ConfigError("partial-wave compares against exp(2 i delta); use convention = unitary")
    rep = pw.mu_equals_s_check(spec, kin, ctx.cfg.l_max, sd)
    header = ["l", "nu", "sign", "kappa_dirac", "delta", "re_S", "im_S", "re_mu", "im_mu",
              "abs_mu_minus_S", "angle_deg", "cluster_size"]
    rows = []
    for c, row in zip(rep.matches, rep.rows()):
        rows.append([row[0], row[1], row[2], c.channel.kappa_dirac] + list(row[3:]) + [c.cluster_size])
    diag = {"max_error": rep.max_error, "max_angle_deg": rep.max_angle,
            "unitarity_defect": S.diagnostics["unitarity_defect"]}
    return [("partial_waves", header, rows)], diag


_PER_LAMBDA = {"kernel-check": cmd_kernel_check, "solve": cmd_solve, "amplitude": cmd_amplitude,
               "smatrix": cmd_smatrix, "reconstruct": cmd_reconstruct,
               "partial-wave": cmd_partial_wave}


def _run_one(cfg: RunConfig, command: str, lam: float):
    t0 = time.perf_counter()
    tables, diag = _PER_LAMBDA[command](_Context(cfg, lam))
    return lam, tables, diag, time.perf_counter() - t0


def run_per_lambda(cfg: RunConfig, command: str, threads: int = 1):
    """Run ``command`` at every lambda; results come back sorted by lambda."""
    lams = sorted(cfg.lambdas)
    if threads > 1 and len(lams) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda l: _run_one(cfg, command, l), lams))
    else:
        results = [_run_one(cfg, command, l) for l in lams]
    return sorted(results, key=lambda r: r[0])


def _assemble_outputs(cfg: RunConfig, command: str, results, prefix: str = ""):
    manifest = ResultManifest(command, config_to_dict(cfg))
    tables = []
    for lam, tabs, diag, dt in results:
        files = []
        for name, header, rows in tabs:
            tname = f"{prefix}{name}_{_tag(lam)}"
            tables.append(Table(tname, header, rows))
            files.append(f"{tname}.csv")
        manifest.outputs.append({"lambda": lam, "files": files})
        manifest.diagnostics[repr(lam)] = diag
        manifest.timings[repr(lam)] = dt
    return manifest, tables


def _summary_table(command: str, results) -> Table:
    keys = sorted({k for _, _, d, _ in results for k, v in d.items()
                   if isinstance(v, (int, float, bool, np.floating, np.integer, np.bool_))
                   and not isinstance(v, str)})
    rows = []
    for lam, _, d, _ in results:
        rows.append([lam] + [d.get(k, "") for k in keys])
    return Table(f"sweep_{command}", ["lambda"] + keys, rows)


def command_exceptional_scan(cfg: RunConfig):
    grid = build_volume_grid(cfg.r_max, cfg.n_r, cfg.sphere_order)
    t0 = time.perf_counter()
    rep = exceptional_scan(cfg.lambdas, cfg.mass, cfg.potential, grid, cfg.exceptional_ratio)
    dt = time.perf_counter() - t0
    manifest = ResultManifest("exceptional-scan", config_to_dict(cfg))
    scan = Table("exceptional_scan", ["lambda", "sigma_min", "flagged"], rep.rows())
    minima = Table("exceptional_minima", ["index", "lambda_refined", "sigma_refined", "flagged"],
                   [[i, l, s, int(i in rep.flagged)] for i, l, s in rep.minima])
    manifest.outputs.append({"lambda": None, "files": [f"{scan.name}.csv", f"{minima.name}.csv"]})
    manifest.diagnostics["scan"] = {"threshold": rep.threshold, "dip": rep.dip,
                                    "dip_lambda": rep.dip_lambda,
                                    "flagged_lambdas": [float(rep.lambdas[i]) for i in rep.flagged],
                                    "median_sigma_min": float(np.median(rep.sigma_min))}
    manifest.timings["scan"] = dt
    return manifest, [scan, minima]


# ---------------------------------------------------------------------------
# entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dirac-rls", description=(
        "Dirac Lippmann-Schwinger scattering: solves, amplitudes, S-matrix and checks."))
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("target", nargs="?", choices=SWEEPABLE,
                    help="subcommand run by 'sweep' (default: [output] command)")
    ap.add_argument("--config", required=True, help="INI config file")
    ap.add_argument("--out", help="output directory (overrides [output] directory)")
    ap.add_argument("--threads", type=int, help="worker threads (fallback: RLS_THREADS)")
    ap.add_argument("--lambda", dest="lam", type=float, help="run at this lambda only")
    ap.add_argument("--verbose", action="store_true")
    return ap


def resolve_threads(flag: int | None, cfg: RunConfig) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("RLS_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"RLS_THREADS={env!r} is not an integer") from None
    return cfg.threads


def run_command(argv) -> int:
    """Parse ``argv``, run the command and write results. Returns the exit code."""
    ap = _parser()
    try:
        args = ap.parse_args(list(argv))
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, check=False)
        if args.lam is not None:
            cfg = replace(cfg, lambdas=(args.lam,))
        if args.out:
            cfg = replace(cfg, out_dir=args.out)
        validate(cfg)
        threads = resolve_threads(args.threads, cfg)
        if threads < 1:
            raise ConfigError("thread count must be >= 1")
        if args.target and args.command != "sweep":
            raise ConfigError("a target subcommand is only accepted by 'sweep'")
    except (ConfigError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        logger.error("cannot read config: %s", exc)
        return EXIT_IO

    try:
        # BLAS stays single-threaded inside a worker so results do not depend on thread count
        with threadpool_limits(limits=1 if args.command == "sweep" else threads):
            if args.command == "exceptional-scan":
                manifest, tables = command_exceptional_scan(cfg)
            elif args.command == "sweep":
                target = args.target or cfg.sweep_command
                results = run_per_lambda(cfg, target, threads)
                manifest, tables = _assemble_outputs(cfg, target, results)
                manifest.command = f"sweep {target}"
                summary = _summary_table(target, results)
                tables.append(summary)
                manifest.outputs.append({"lambda": None, "files": [f"{summary.name}.csv"]})
            else:
                results = run_per_lambda(cfg, args.command, 1)
                manifest, tables = _assemble_outputs(cfg, args.command, results)
    except (NearExceptionalError, BornDivergenceError, np.linalg.LinAlgError) as exc:
        logger.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except (ConfigError, GridResolutionError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION

    try:
        paths = write_results(manifest, tables, cfg.out_dir, cfg.precision)
    except OSError as exc:
        logger.error("cannot write results: %s", exc)
        return EXIT_IO
    logger.info("wrote %d files to %s", len(paths), cfg.out_dir)
    return EXIT_OK


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
