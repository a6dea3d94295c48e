"""Command line entry point.

    stockloan <subcommand> [--config FILE] [--section.key VALUE | --key VALUE ...]

Subcommands: classify, simulate, solve1d, solve2d, boundaries, oracle, check,
emit-figure.  Every run writes ``<out-dir>/<subcommand>-<hash>.csv`` whose
first line records the tool version and the hash of the resolved config.
Exit codes: 0 ok, 1 config error, 2 solver error, 3 check failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import io
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .boundary1d import extract_boundary_1d, solve_vi_1d
from .errors import ConvergenceError, DomainError, GridError, RegressionError, StabilityError
from .filter import simulate
from .grids import Grid1D, Grid2D
from .mc_oracle import BasisSpec, estimates_to_csv, european_value, lattice_value, lsmc_value
from .model import ModelParams, classify_regime, validate
from .properties import (CheckReport, check_oracle_agreement, check_regions, exit_code, region_reports,
                         regularity_suite, reports_to_csv)
from .vi2d import extract_boundaries_2d, solve_vi_2d

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3
SUBCOMMANDS = ("classify", "simulate", "solve1d", "solve2d", "boundaries", "oracle", "check", "emit-figure")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    nx: int = 200
    npi: int = 101
    nt: int = 200
    nx1d: int = 400
    nt1d: int = 200
    xmin: Optional[float] = None
    xmax: Optional[float] = None


@dataclass(frozen=True)
class SolverConfig:
    eps: tuple = (0.0,)
    rho: Optional[float] = None
    tol: float = 1e-6
    drift: str = "b"
    dim: int = 2


@dataclass(frozen=True)
class MCConfig:
    x0: float = 100.0
    pi0: float = 0.5
    paths: int = 100_000
    dates: int = 50
    steps: int = 100
    seed: int = 0
    deg_logx: int = 3
    deg_pi: int = 2
    cross: bool = True
    european_basis: bool = True
    lattice_time: int = 6000
    lattice_space: int = 1001
    sim_paths: int = 100
    sim_steps: int = 100


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    # keep every k-th time level in surface dumps; 0 keeps only t = 0 and t = T
    time_stride: int = 0


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mc: MCConfig = field(default_factory=MCConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def canonical(self) -> str:
        lines = [f"model.{k}={v!r}" for k, v in sorted(self.model.as_dict().items())]
        for name in ("grid", "solver", "mc", "output"):
            sec = getattr(self, name)
            for f in dataclasses.fields(sec):
                # where results go does not change what they are
                if (name, f.name) != ("output", "dir"):
                    lines.append(f"{name}.{f.name}={getattr(sec, f.name)!r}")
        return "\n".join(lines)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def grid1d(self) -> Grid1D:
        g = self.grid
        return Grid1D.build(self.model, g.nx1d, g.nt1d, g.xmin, g.xmax)

    def grid2d(self, scale: int = 1) -> Grid2D:
        g = self.grid
        npi = (g.npi - 1) // scale + 1
        return Grid2D.build(self.model, g.nx // scale, npi, g.nt // scale, g.xmin, g.xmax)


SECTIONS = {"grid": GridConfig, "solver": SolverConfig, "mc": MCConfig, "output": OutputConfig}
MODEL_KEYS = ("a", "b", "gamma", "r", "K", "T")


def _convert(cls, key, raw):
    f = {f.name: f for f in dataclasses.fields(cls)}[key]
    default = f.default
    text = str(raw).strip()
    if key == "eps":
        return tuple(float(v) for v in text.replace(",", " ").split())
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, str):
        return text
    if text.lower() in ("", "none", "auto"):
        return None
    return float(text)


def _key_index():
    idx = {}
    for sec, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            idx.setdefault(f.name, []).append(sec)
    for k in MODEL_KEYS:
        idx.setdefault(k, []).append("model")
    return idx


def _resolve_key(key: str):
    if "." in key:
        sec, name = key.split(".", 1)
        return sec, name
    owners = _key_index().get(key)
    if not owners:
        raise ConfigError(f"unknown override --{key}")
    if len(owners) > 1:
        raise ConfigError(f"ambiguous override --{key}; use --section.{key}")
    return owners[0], key


def parse_overrides(extra) -> dict:
    """``['--a', '0.1', '--grid.nx', '100']`` -> ``{('model', 'a'): '0.1', ('grid', 'nx'): '100'}``."""
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(f"override --{key} needs a value") from None
        out[_resolve_key(key.replace("-", "_"))] = val
    return out


def load_config(path: Optional[str], overrides: Optional[dict] = None) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
    raw = {s: dict(cp.items(s)) for s in cp.sections()}
    for (sec, key), val in (overrides or {}).items():
        raw.setdefault(sec, {})[key] = val
    for sec in raw:
        if sec != "model" and sec not in SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
    m = raw.get("model", {})
    for key in m:
        if key not in MODEL_KEYS:
            raise ConfigError(f"unknown key {key!r} in [model]")
    missing = [k for k in ("a", "b", "gamma", "r") if k not in m]
    if missing:
        raise ConfigError(f"[model] is missing {', '.join(missing)}")
    try:
        params = validate(ModelParams(**{k: float(v) for k, v in m.items()}))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    parts = {}
    for sec, cls in SECTIONS.items():
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for key, val in raw.get(sec, {}).items():
            if key not in names:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                kw[key] = _convert(cls, key, val)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from exc
        parts[sec] = cls(**kw)
    cfg = RunConfig(params, **parts)
    if cfg.solver.drift not in ("a", "b"):
        raise ConfigError("[solver] drift must be 'a' or 'b'")
    if cfg.solver.dim not in (1, 2):
        raise ConfigError("[solver] dim must be 1 or 2")
    if any(e < 0 for e in cfg.solver.eps):
        raise ConfigError("[solver] eps values must be non-negative")
    return cfg


# --- subcommands ------------------------------------------------------------------

def _header(cfg: RunConfig, name: str) -> str:
    return f"# stockloan {__version__} {name} config={cfg.digest}\n"


def _write(cfg: RunConfig, name: str, body: str) -> str:
    os.makedirs(cfg.output.dir, exist_ok=True)
    path = os.path.join(cfg.output.dir, f"{name}-{cfg.digest}.csv")
    with open(path, "w", newline="") as fh:
        fh.write(_header(cfg, name))
        fh.write(body)
    return path


def solve_surface(cfg: RunConfig, scale: int = 1):
    grid = cfg.grid2d(scale)
    eps = cfg.solver.eps
    if len(eps) > 1:
        from .vi2d import refine_epsilon
        surface, _ = refine_epsilon(cfg.model, grid, eps, cfg.solver.rho)
        return surface
    return solve_vi_2d(cfg.model, grid, eps[0], cfg.solver.rho)


def _dump_surface(surface, stride: int) -> str:
    g = surface.grid
    keep = sorted({0, g.nt} | (set(range(0, g.nt + 1, stride)) if stride > 0 else set()))
    p = surface.params
    buf = io.StringIO()
    buf.write(f"# nx={g.nx},npi={g.npi},nt={g.nt},eps={surface.epsilon!r},rho={surface.penalty!r},"
              + ",".join(f"{k}={v!r}" for k, v in p.as_dict().items()) + "\n")
    buf.write("t,pi,x,u\n")
    for n in keep:
        for j in range(g.npi):
            for i in range(g.nx):
                buf.write(f"{g.t[n]!r},{g.pi[j]!r},{g.x[i]!r},{surface.u[n, i, j]!r}\n")
    return buf.getvalue()


def cmd_classify(cfg):
    rc = classify_regime(cfg.model)
    buf = io.StringIO()
    buf.write("case,high_bull,kind,tag,description\n")
    for c in rc.constraints:
        buf.write(f"{rc.id},{str(rc.high_bull).lower()},{c.kind},{c.tag},\"{c.description}\"\n")
    path = _write(cfg, "classify", buf.getvalue())
    print(rc.report())
    return EXIT_OK, path


def cmd_simulate(cfg):
    mc = cfg.mc
    dt = cfg.model.T / mc.sim_steps
    bundle = simulate(cfg.model, mc.x0, mc.pi0, dt, mc.sim_steps, mc.sim_paths, mc.seed)
    path = _write(cfg, "simulate", bundle.to_csv())
    print(f"simulate: {mc.sim_paths} paths x {mc.sim_steps} steps, seed={mc.seed} -> {path}")
    return EXIT_OK, path


def cmd_solve1d(cfg):
    curve = solve_vi_1d(cfg.model, cfg.solver.drift, cfg.grid1d(), cfg.solver.rho)
    path = _write(cfg, "solve1d", curve.to_csv())
    print(f"solve1d: drift={cfg.solver.drift} residual={curve.penalty_residual:.3g} -> {path}")
    return EXIT_OK, path


def cmd_solve2d(cfg):
    surface = solve_surface(cfg)
    path = _write(cfg, "solve2d", _dump_surface(surface, cfg.output.time_stride))
    print(f"solve2d: u(x0,pi0,0)={surface.at(cfg.mc.x0, cfg.mc.pi0, 0):.6g} "
          f"residual={surface.penalty_residual:.3g} -> {path}")
    return EXIT_OK, path


def cmd_boundaries(cfg):
    if cfg.solver.dim == 1:
        curve = solve_vi_1d(cfg.model, cfg.solver.drift, cfg.grid1d(), cfg.solver.rho)
        bd = extract_boundary_1d(curve, cfg.solver.tol)
        path = _write(cfg, "boundaries", bd.to_csv())
        print(f"boundaries: structure={bd.structure} -> {path}")
        return EXIT_OK, path
    bd = extract_boundaries_2d(solve_surface(cfg), cfg.solver.tol)
    path = _write(cfg, "boundaries", bd.to_csv())
    print(f"boundaries: contact nodes={int(bd.contact.sum())} interval violations={bd.interval_violations} -> {path}")
    return EXIT_OK, path


def run_oracles(cfg):
    mc, p = cfg.mc, cfg.model
    basis = BasisSpec(mc.deg_logx, mc.deg_pi, mc.cross, mc.european_basis)
    return [
        european_value(p, mc.x0, mc.pi0, mc.paths, mc.seed, mc.steps),
        lsmc_value(p, mc.x0, mc.pi0, mc.paths, mc.dates, basis, mc.seed),
        lattice_value(p, mc.x0, mc.pi0, mc.lattice_time, mc.lattice_space),
    ]


def cmd_oracle(cfg):
    est = run_oracles(cfg)
    path = _write(cfg, "oracle", estimates_to_csv(est))
    for e in est:
        print(e.csv_line())
    return EXIT_OK, path


def _face_report(cfg, surface):
    worst, loc = 0.0, ()
    g1 = Grid1D(surface.grid.x, surface.grid.t)
    for j, drift in ((0, "b"), (surface.grid.npi - 1, "a")):
        curve = solve_vi_1d(cfg.model, drift, g1, surface.penalty)
        d = np.abs(surface.u[:, :, j] - curve.u)
        k = np.unravel_index(int(np.argmax(d)), d.shape)
        if d[k] > worst:
            worst, loc = float(d[k]), (int(k[0]), int(k[1]), j)
    tol = 1e-3 * cfg.model.K
    return CheckReport("face-consistency", worst <= tol, worst, loc, tol)


def cmd_check(cfg):
    surface = solve_surface(cfg)
    coarse = solve_surface(cfg, scale=2)
    boundary = extract_boundaries_2d(surface, cfg.solver.tol)
    reports = regularity_suite(surface, cfg.model, cfg.solver.tol, coarse)
    reports.extend(region_reports(boundary, cfg.model))
    reports.append(check_regions(surface, boundary, cfg.model))
    if cfg.solver.eps == (0.0,):
        reports.append(_face_report(cfg, surface))
    point = (cfg.mc.x0, cfg.mc.pi0, 0.0)
    reports.append(check_oracle_agreement(surface, run_oracles(cfg), point))
    path = _write(cfg, "check", reports_to_csv(reports))
    code = exit_code(reports)
    failed = [r.check for r in reports if not r.passed]
    print(f"check: {len(reports) - len(failed)}/{len(reports)} passed"
          + (f"; failed: {', '.join(failed)}" if failed else "") + f" -> {path}")
    return code, path


def cmd_emit_figure(cfg):
    surface = solve_surface(cfg)
    bd = extract_boundaries_2d(surface, cfg.solver.tol)
    nt = bd.t.size
    sections = sorted({0, nt // 2, nt - 1})
    buf = io.StringIO()
    buf.write("section,t,coord,x1,x2,Pi\n")

    def f(v):
        return "" if np.isnan(v) else repr(float(v))

    for n in sections:
        t = float(bd.t[n])
        for j, pi in enumerate(bd.pi):
            buf.write(f"pi-section,{t!r},{float(pi)!r},{f(bd.x1[n, j])},{f(bd.x2[n, j])},\n")
        for i, x in enumerate(bd.x):
            buf.write(f"x-section,{t!r},{float(x)!r},,,{float(bd.Pi[n, i])!r}\n")
    path = _write(cfg, "emit-figure", buf.getvalue())
    print(f"emit-figure: t-sections at {', '.join(f'{bd.t[n]:.4g}' for n in sections)} -> {path}")
    return EXIT_OK, path


COMMANDS = {
    "classify": cmd_classify,
    "simulate": cmd_simulate,
    "solve1d": cmd_solve1d,
    "solve2d": cmd_solve2d,
    "boundaries": cmd_boundaries,
    "oracle": cmd_oracle,
    "check": cmd_check,
    "emit-figure": cmd_emit_figure,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stockloan", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", "-c", help="INI config with [model], [grid], [solver], [mc], [output]")
    ap.add_argument("--seed", type=int, help="RNG seed (mc.seed)")
    ap.add_argument("--out-dir", help="output directory (output.dir)")
    ap.add_argument("--tol", type=float, help="contact / check tolerance relative to K (solver.tol)")
    ap.add_argument("--version", action="version", version=f"stockloan {__version__}")
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    try:
        overrides = parse_overrides(extra)
        if args.seed is not None:
            overrides[("mc", "seed")] = str(args.seed)
        if args.out_dir is not None:
            overrides[("output", "dir")] = args.out_dir
        if args.tol is not None:
            overrides[("solver", "tol")] = str(args.tol)
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code, _ = COMMANDS[args.subcommand](cfg)
    except (GridError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, StabilityError, RegressionError, MemoryError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
