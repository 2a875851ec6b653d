"""Configuration-driven runner.

A run is described by a flat INI document with sections [mesh],
[material], [integrator], [pulse] and [output]. `solve` executes one
such file and writes three artifacts into the output directory:

    snapshots.csv   per-node rows (time, X, u_total, u_coarse, u_fine, F_avg)
    metrics.json    config echo, iteration statistics, wall time, errors
    steps.log       one line per time step

`matrix` executes every config listed in a manifest file, one per line,
and writes an aligned summary table plus a CSV next to the manifest.
Failed rows are recorded and the remaining rows still run.

Values in snapshots.csv are printed with 17 significant digits, so
re-reading the file reproduces the in-memory float64 arrays exactly.
"""

import argparse
import configparser
import json
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .assembly import build_operators, element_average_stretch, total_stretch
from .dns import DnsProblem, dns_run, element_stretch_profile
from .errors import ParseError, ValidationError, VmeError
from .integrate import IntegratorConfig, run
from .mesh import build_mesh
from .scenario import (
    InitialPulse,
    Microstructure,
    build_modulus_field,
    relative_error_linf,
    split_displacement,
)

__all__ = ["RunConfig", "parse_config", "run_experiment", "run_matrix", "main"]

_SCHEMES = ("ee-cdm", "ee-ssm", "ei-ssm")
_DNS_SCHEMES = ("ee-cdm", "ee-ssm")
_SOLVERS = ("vme", "dns", "both")

_REQUIRED = object()


@dataclass(frozen=True)
class RunConfig:
    """One fully resolved run description."""

    solver: str = "vme"
    n_es: int = 100
    n_ecp: int = 1
    n_ef: int = 8
    n_el: int = 800
    contrast: float = 1.0
    fraction: float = 0.5
    cell_size: float = 0.01
    modulus: float = 1.0
    rho: float = 1.0
    scheme: str = "ee-ssm"
    p: float = 0.54
    cfl: float = None
    tol_c: float = 1e-3
    tol_f: float = 1e-3
    tol_newton: float = 1e-10
    max_split_iters: int = 50
    max_newton_iters: int = 25
    coarse_only: bool = False
    workers: int = 1
    reference_scheme: str = "ee-ssm"
    reference_cfl: float = None
    amplitude: float = 0.04
    width: float = 0.05
    end_time: float = None
    times: tuple = ()
    out_dir: str = None

    @property
    def end_time_effective(self):
        if self.end_time is not None:
            return self.end_time
        return max(self.times)

    @property
    def times_effective(self):
        """Requested times up to the end time, with the end time appended."""
        end = self.end_time_effective
        kept = sorted({t for t in self.times if t <= end + 1e-12} | {end})
        return tuple(kept)

    def echo(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["times"] = list(self.times)
        d["times_effective"] = list(self.times_effective)
        d["end_time_effective"] = self.end_time_effective
        return d


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_times(raw):
    parts = raw.replace(",", " ").split()
    return tuple(float(p) for p in parts)


# section -> key -> (converter, target field, default marker). Defaults of
# None mean "fall back to the RunConfig default"; _REQUIRED marks fields
# the file must provide.
_SCHEMA = {
    "mesh": {
        "n_es": (int, "n_es"),
        "n_ecp": (int, "n_ecp"),
        "n_ef": (int, "n_ef"),
        "n_el": (int, "n_el"),
    },
    "material": {
        "contrast": (float, "contrast"),
        "fraction": (float, "fraction"),
        "cell_size": (float, "cell_size"),
        "modulus": (float, "modulus"),
        "rho": (float, "rho"),
    },
    "integrator": {
        "solver": (str, "solver"),
        "scheme": (str, "scheme"),
        "p": (float, "p"),
        "cfl": (float, "cfl"),
        "tol_c": (float, "tol_c"),
        "tol_f": (float, "tol_f"),
        "tol_newton": (float, "tol_newton"),
        "max_split_iters": (int, "max_split_iters"),
        "max_newton_iters": (int, "max_newton_iters"),
        "coarse_only": (_parse_bool, "coarse_only"),
        "workers": (int, "workers"),
        "reference_scheme": (str, "reference_scheme"),
        "reference_cfl": (float, "reference_cfl"),
    },
    "pulse": {
        "amplitude": (float, "amplitude"),
        "width": (float, "width"),
    },
    "output": {
        "end_time": (float, "end_time"),
        "times": (_parse_times, "times"),
        "out_dir": (str, "out_dir"),
    },
}


def parse_config(text):
    """Read one INI document into a validated RunConfig.

    Syntax problems, unknown sections or keys, and values that fail to
    convert raise ParseError. Values that convert but violate a
    constraint are collected and raised together as ValidationError.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParseError(f"config syntax: {exc}") from exc

    problems = []
    fields = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")
            continue
        schema = _SCHEMA[section]
        for key, raw in cp.items(section):
            if key not in schema:
                problems.append(f"unknown key '{key}' in [{section}]")
                continue
            conv, field_name = schema[key]
            try:
                fields[field_name] = conv(raw)
            except ValueError as exc:
                problems.append(f"[{section}] {key}: {exc}")
    if problems:
        raise ParseError("config fields:\n  " + "\n  ".join(problems))

    cfg = RunConfig(**fields)
    _validate(cfg)
    return cfg


def _validate(cfg):
    bad = []

    def check(ok, msg):
        if not ok:
            bad.append(msg)

    check(cfg.solver in _SOLVERS, f"[integrator] solver must be one of {_SOLVERS}")
    check(cfg.scheme in _SCHEMES, f"[integrator] scheme must be one of {_SCHEMES}")
    if cfg.solver == "dns" and cfg.scheme not in _DNS_SCHEMES:
        bad.append("[integrator] the reference solver is explicit only; "
                   f"scheme must be one of {_DNS_SCHEMES} when solver = dns")
    check(cfg.reference_scheme in _DNS_SCHEMES,
          f"[integrator] reference_scheme must be one of {_DNS_SCHEMES}")

    check(cfg.cfl is not None, "[integrator] cfl is mandatory")
    if cfg.cfl is not None:
        check(cfg.cfl > 0, "[integrator] cfl must be positive")
    if cfg.reference_cfl is not None:
        check(cfg.reference_cfl > 0, "[integrator] reference_cfl must be positive")
    check(0.0 < cfg.p < 1.0, "[integrator] p must lie strictly inside (0, 1)")
    for name in ("tol_c", "tol_f", "tol_newton"):
        check(getattr(cfg, name) > 0, f"[integrator] {name} must be positive")
    check(cfg.max_split_iters >= 1, "[integrator] max_split_iters must be >= 1")
    check(cfg.max_newton_iters >= 1, "[integrator] max_newton_iters must be >= 1")
    check(cfg.workers >= 1, "[integrator] workers must be >= 1")

    check(cfg.n_es >= 1, "[mesh] n_es must be >= 1")
    check(cfg.n_ecp >= 1, "[mesh] n_ecp must be >= 1")
    check(cfg.n_ef >= 1, "[mesh] n_ef must be >= 1")
    check(cfg.n_el >= 1, "[mesh] n_el must be >= 1")
    if cfg.n_ecp >= 1 and cfg.n_ef >= 1:
        check(cfg.n_ef % cfg.n_ecp == 0,
              f"[mesh] n_ef = {cfg.n_ef} must be divisible by n_ecp = {cfg.n_ecp}")

    check(cfg.contrast > 0, "[material] contrast must be positive")
    check(cfg.modulus > 0, "[material] modulus must be positive")
    check(cfg.rho > 0, "[material] rho must be positive")
    check(0.0 < cfg.fraction < 1.0, "[material] fraction must lie inside (0, 1)")
    check(cfg.cell_size > 0, "[material] cell_size must be positive")
    if cfg.cell_size > 0 and cfg.n_es >= 1:
        check(abs(cfg.n_es * cfg.cell_size - 1.0) <= 1e-9,
              f"[material] n_es * cell_size = {cfg.n_es * cfg.cell_size:.6g} "
              "must tile the unit domain")
        per_cell = cfg.n_ef
        if (0.0 < cfg.fraction < 1.0 and
                abs(cfg.fraction * per_cell - round(cfg.fraction * per_cell)) > 1e-9):
            bad.append(f"[material] fraction {cfg.fraction} does not land on a "
                       f"fine element boundary with n_ef = {per_cell}")
    if cfg.solver in ("dns", "both") and cfg.n_es >= 1:
        check(cfg.n_el % cfg.n_es == 0,
              f"[mesh] n_el = {cfg.n_el} must hold a whole number of cells "
              f"(n_es = {cfg.n_es})")

    check(cfg.width > 0, "[pulse] width must be positive")

    for t in cfg.times:
        check(t >= 0, f"[output] times must be non-negative, got {t}")
    if cfg.end_time is not None:
        check(cfg.end_time >= 0, "[output] end_time must be non-negative")
    if cfg.end_time is None and not cfg.times:
        bad.append("[output] end_time or times is required")

    if bad:
        raise ValidationError(bad)


def _micro(cfg):
    return Microstructure(cell_size=cfg.cell_size, contrast=cfg.contrast,
                          fraction=cfg.fraction, modulus_a=cfg.modulus,
                          rho=cfg.rho)


def _run_vme(cfg):
    mesh = build_mesh(cfg.n_es, cfg.n_ecp, cfg.n_ef)
    E = build_modulus_field(_micro(cfg), mesh.n_fel)
    ops = build_operators(mesh, E, rho=cfg.rho)
    icfg = IntegratorConfig(
        scheme=cfg.scheme, cfl=cfg.cfl, p=cfg.p,
        tol_c=cfg.tol_c, tol_f=cfg.tol_f, tol_newton=cfg.tol_newton,
        max_split_iters=cfg.max_split_iters,
        max_newton_iters=cfg.max_newton_iters,
        coarse_only=cfg.coarse_only, workers=cfg.workers,
    )
    pulse = InitialPulse(amplitude=cfg.amplitude, width=cfg.width)
    d_c0 = pulse.displacement(mesh.x_c)
    result = run(ops, icfg, d_c0, snapshot_times=cfg.times_effective,
                 end_time=cfg.end_time_effective)
    return result, ops


def _run_dns(cfg, as_reference):
    scheme = cfg.reference_scheme if as_reference else cfg.scheme
    cfl = cfg.cfl
    if as_reference and cfg.reference_cfl is not None:
        cfl = cfg.reference_cfl
    E = build_modulus_field(_micro(cfg), cfg.n_el)
    prob = DnsProblem(n_el=cfg.n_el, E_el=E, rho=cfg.rho, scheme=scheme,
                      cfl=cfl, p=cfg.p)
    pulse = InitialPulse(amplitude=cfg.amplitude, width=cfg.width)
    d0 = pulse.displacement(prob.node_coords)
    return dns_run(prob, d0, snapshot_times=cfg.times_effective,
                   end_time=cfg.end_time_effective)


def _node_element_map(n_nodes, n_el):
    return np.minimum(np.arange(n_nodes) // 2, n_el - 1)


def _snapshot_columns(result, ops, snap):
    """(X, u_total, u_coarse, u_fine, F_avg per node) for one snapshot."""
    if result.kind == "vme":
        mesh = result.mesh
        x = mesh.x_f
        u_c, u_f = split_displacement(mesh, snap.state.d_c, snap.state.d_f, x)
        F = total_stretch(ops, snap.state.d_c, snap.state.d_f)
        F_el = element_average_stretch(ops.tf.wjac, F)
        F_node = F_el[_node_element_map(x.size, mesh.n_fel)]
        return x, u_c + u_f, u_c, u_f, F_node
    prob = result.problem
    x = prob.node_coords
    u = np.asarray(snap.state.d, dtype=float)
    F_el = element_stretch_profile(prob, u)
    F_node = F_el[_node_element_map(x.size, prob.n_el)]
    return x, u, u, np.zeros_like(u), F_node


def _write_snapshots(path, result, ops):
    with open(path, "w") as f:
        f.write("time,X,u_total,u_coarse,u_fine,F_avg\n")
        for snap in result.snapshots:
            x, u_t, u_c, u_f, F_node = _snapshot_columns(result, ops, snap)
            t = snap.state.t
            for i in range(x.size):
                f.write(f"{t:.17g},{x[i]:.17g},{u_t[i]:.17g},"
                        f"{u_c[i]:.17g},{u_f[i]:.17g},{F_node[i]:.17g}\n")


def _write_steps(path, result):
    with open(path, "w") as f:
        for r in result.records:
            f.write(f"step {r.step} t={r.t:.12e} dt={r.dt:.12e} "
                    f"split={r.split_iters} newton={r.newton_max}\n")


def _run_stats(result):
    records = result.records
    split = [r.split_iters for r in records]
    return {
        "steps": len(records),
        "wall_seconds": result.wall_seconds,
        "split_iters_max": max(split, default=0),
        "split_iters_mean": float(np.mean(split)) if split else 0.0,
        "newton_iters_max": max((r.newton_max for r in records), default=0),
        "snapshot_times": [s.state.t for s in result.snapshots],
    }


def run_experiment(cfg, out_dir=None):
    """Execute one config and write its artifacts.

    Returns the metrics dictionary that was written to metrics.json.
    """
    out = Path(out_dir if out_dir is not None else (cfg.out_dir or "run-output"))
    out.mkdir(parents=True, exist_ok=True)

    wall0 = time.perf_counter()
    primary = reference = None
    ops = None
    if cfg.solver in ("vme", "both"):
        primary, ops = _run_vme(cfg)
    if cfg.solver in ("dns", "both"):
        reference = _run_dns(cfg, as_reference=cfg.solver == "both")
        if primary is None:
            primary = reference

    metrics = {
        "config": cfg.echo(),
        "runs": {},
        "errors": [],
        "wall_seconds_total": 0.0,
    }
    metrics["runs"][primary.kind if cfg.solver != "both" else "vme"] = \
        _run_stats(primary)
    if cfg.solver == "both":
        metrics["runs"]["dns"] = _run_stats(reference)
        for t in cfg.times_effective:
            err = relative_error_linf(primary, reference, t)
            sa = next(s for s in primary.snapshots if abs(s.requested_t - t) <= 1e-12)
            sb = next(s for s in reference.snapshots if abs(s.requested_t - t) <= 1e-12)
            metrics["errors"].append({
                "requested_time": t,
                "vme_time": sa.state.t,
                "dns_time": sb.state.t,
                "relative_error_linf": err,
            })
    metrics["wall_seconds_total"] = time.perf_counter() - wall0

    _write_snapshots(out / "snapshots.csv", primary, ops)
    _write_steps(out / "steps.log", primary)
    if cfg.solver == "both":
        _write_steps(out / "reference_steps.log", reference)
    with open(out / "metrics.json", "w") as f:
        json.dump(metrics, f, indent=2)
        f.write("\n")
    return metrics


_MATRIX_COLUMNS = ("config", "contrast", "scheme", "n_ef", "cfl",
                   "wall_seconds", "rel_error", "status")


def run_matrix(manifest_path):
    """Run every config listed in the manifest, one path per line.

    Lines that are empty or start with '#' are skipped. Each row writes
    its artifacts into <config stem>.run next to the manifest unless the
    config names its own out_dir. A failing row is recorded in the
    summary and the remaining rows still run.
    """
    manifest = Path(manifest_path)
    base = manifest.parent
    rows = []
    for line in manifest.read_text().splitlines():
        name = line.strip()
        if not name or name.startswith("#"):
            continue
        cfg_path = base / name
        row = {k: "" for k in _MATRIX_COLUMNS}
        row["config"] = name
        try:
            cfg = parse_config(cfg_path.read_text())
            row.update(contrast=f"{cfg.contrast:g}", scheme=cfg.scheme,
                       n_ef=str(cfg.n_ef), cfl=f"{cfg.cfl:g}")
            out_dir = cfg.out_dir or (base / (cfg_path.stem + ".run"))
            metrics = run_experiment(cfg, out_dir=out_dir)
            key = "vme" if cfg.solver != "dns" else "dns"
            row["wall_seconds"] = f"{metrics['runs'][key]['wall_seconds']:.2f}"
            if metrics["errors"]:
                row["rel_error"] = f"{metrics['errors'][-1]['relative_error_linf']:.5f}"
            row["status"] = "ok"
        except (VmeError, OSError) as exc:
            row["status"] = f"failed: {type(exc).__name__}"
        rows.append(row)

    table = _format_table(rows)
    (base / "matrix.txt").write_text(table)
    with open(base / "matrix.csv", "w") as f:
        f.write(",".join(_MATRIX_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(str(row[k]) for k in _MATRIX_COLUMNS) + "\n")
    return rows, table


def _format_table(rows):
    widths = {k: len(k) for k in _MATRIX_COLUMNS}
    for row in rows:
        for k in _MATRIX_COLUMNS:
            widths[k] = max(widths[k], len(str(row[k])))
    lines = ["  ".join(k.ljust(widths[k]) for k in _MATRIX_COLUMNS)]
    for row in rows:
        lines.append("  ".join(str(row[k]).ljust(widths[k])
                               for k in _MATRIX_COLUMNS))
    return "\n".join(lines) + "\n"


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="vmewave",
        description="Two-scale 1-D nonlinear elastic wave solver.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_solve = sub.add_parser("solve", help="run one configuration file")
    p_solve.add_argument("config", help="path to an INI run description")
    p_solve.add_argument("--workers", type=int, default=None,
                         help="override the worker count")
    p_solve.add_argument("--out", default=None,
                         help="override the output directory")
    p_matrix = sub.add_parser("matrix",
                              help="run every configuration in a manifest")
    p_matrix.add_argument("manifest", help="file listing config paths")
    args = parser.parse_args(argv)

    try:
        if args.command == "solve":
            cfg_path = Path(args.config)
            cfg = parse_config(cfg_path.read_text())
            if args.workers is not None:
                cfg = replace(cfg, workers=args.workers)
            out_dir = args.out or cfg.out_dir or (cfg_path.stem + ".out")
            metrics = run_experiment(cfg, out_dir=out_dir)
            for err in metrics["errors"]:
                print(f"t = {err['requested_time']:g}: relative error "
                      f"{err['relative_error_linf']:.5f}")
            print(f"wrote {out_dir} ({metrics['wall_seconds_total']:.2f} s)")
        else:
            rows, table = run_matrix(args.manifest)
            print(table, end="")
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VmeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
