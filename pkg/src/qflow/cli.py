"""Command-line entry point: ``qflow run <config.toml>`` and ``qflow verify <suite>``.

Exit codes: 0 success, 1 configuration error or unknown suite, 2 step failure
during a run, 3 a failing verification check.

A run config is a single TOML file::

    t_end = 0.05
    output_dir = "out/bubble"
    snapshot_interval = 10     # accepted steps between snapshots
    dim = 3

    [grid]      nx, ny, lx, ly, bc
    [material]  a, b, c, lam, gamma
    [viscosity] family, nu0, nu1
    [scheme]    dt, epsilon, mode, picard_tol, picard_max, inner_tol, stress,
                max_halvings, solver_tol, solver_method, preconditioner
    [initial]   kind = "zero" | "uniaxial_bubble" | "file"
                bubble: s, center, radius, director, twist
                file:   q_path, u_path

Every key is optional except ``t_end`` and ``scheme.dt``. The resolved config,
defaults included, is written back to ``<output_dir>/config.resolved.toml``.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .energy_ledger import EnergyLedger, dissipation_audit
from .grid_ops import GridSpec, VelocityField, write_snapshot
from .initial_data import from_snapshots, uniaxial_bubble
from .poisson_helmholtz import SolverConfig
from .scheme import RunFailure, SchemeConfig, State, advance, format_log_line
from .tensor_core import MaterialParams, ViscositySpec

__all__ = ["ConfigError", "RunConfig", "load_config", "run", "verify", "main"]

log = logging.getLogger("qflow")


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"config key '{key}': {msg}")
        self.key = key


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "uniaxial_bubble"
    s: float = 0.5
    center: tuple = (0.5, 0.5)
    radius: float = 0.3
    director: tuple = (1.0, 0.0)
    twist: float = 1.0
    q_path: str = ""
    u_path: str = ""


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec
    dim: int
    material: MaterialParams
    viscosity: ViscositySpec
    scheme: SchemeConfig
    initial: InitialSpec
    t_end: float
    output_dir: str = "qflow_out"
    snapshot_interval: int = 10

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError("dim", f"must be 2 or 3, got {self.dim}")
        if not self.t_end > 0:
            raise ConfigError("t_end", "must be positive")
        if self.snapshot_interval < 1:
            raise ConfigError("snapshot_interval", "must be a positive integer")

    def to_dict(self) -> dict:
        s = self.scheme
        ini = {k: v for k, v in dataclasses.asdict(self.initial).items()}
        ini["center"] = list(ini["center"])
        ini["director"] = list(ini["director"])
        return {
            "t_end": self.t_end,
            "output_dir": self.output_dir,
            "snapshot_interval": self.snapshot_interval,
            "dim": self.dim,
            "grid": dataclasses.asdict(self.grid),
            "material": dataclasses.asdict(self.material),
            "viscosity": dataclasses.asdict(self.viscosity),
            "scheme": {
                "dt": s.dt,
                "epsilon": s.epsilon,
                "mode": s.mode,
                "picard_tol": s.picard_tol,
                "picard_max": s.picard_max,
                "inner_tol": s.inner_tol,
                "stress": s.stress,
                "max_halvings": s.max_halvings,
                "solver_tol": s.solver.tol,
                "solver_method": s.solver.method,
                "preconditioner": s.solver.preconditioner,
            },
            "initial": ini,
        }


_SCHEME_KEYS = {
    "dt", "epsilon", "mode", "picard_tol", "picard_max", "inner_tol", "stress", "max_halvings",
    "solver_tol", "solver_method", "preconditioner",
}


def _table(raw: dict, key: str) -> dict:
    val = raw.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(key, "must be a table")
    return val


def _build(cls, section: str, values: dict, rename: dict | None = None):
    """Construct a dataclass, mapping unknown keys and ValueErrors to ConfigError."""
    types = {f.name: str(f.type) for f in dataclasses.fields(cls)}
    rename = rename or {}
    kwargs = {}
    for k, v in values.items():
        name = rename.get(k, k)
        if name not in types:
            raise ConfigError(f"{section}.{k}", "unknown key")
        want = types[name].split(" |")[0]
        if want in ("float", "int") and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"{section}.{k}", f"expected a number, got {v!r}")
        if want == "int" and isinstance(v, float):
            raise ConfigError(f"{section}.{k}", f"expected an integer, got {v!r}")
        if want == "str" and not isinstance(v, str):
            raise ConfigError(f"{section}.{k}", f"expected a string, got {v!r}")
        kwargs[name] = tuple(v) if isinstance(v, list) else v
    for f in dataclasses.fields(cls):
        if (f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
                and f.name not in kwargs):
            raise ConfigError(f"{section}.{f.name}", "missing")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(section + _guess_key(str(exc), values), str(exc)) from exc


def _guess_key(msg: str, values: dict) -> str:
    for k in sorted(values, key=len, reverse=True):
        if k in msg:
            return f".{k}"
    return ""


def parse_config(raw: dict) -> RunConfig:
    known = {"t_end", "output_dir", "snapshot_interval", "dim", "grid", "material", "viscosity", "scheme", "initial"}
    for k in raw:
        if k not in known:
            raise ConfigError(k, "unknown key")
    if "t_end" not in raw:
        raise ConfigError("t_end", "missing")
    grid = _build(GridSpec, "grid", _table(raw, "grid"))
    material = _build(MaterialParams, "material", _table(raw, "material"))
    viscosity = _build(ViscositySpec, "viscosity", _table(raw, "viscosity"))
    sch = dict(_table(raw, "scheme"))
    for k in sch:
        if k not in _SCHEME_KEYS:
            raise ConfigError(f"scheme.{k}", "unknown key")
    if "dt" not in sch:
        raise ConfigError("scheme.dt", "missing")
    solver = _build(
        SolverConfig, "scheme",
        {k: sch.pop(k) for k in ("solver_tol", "solver_method", "preconditioner") if k in sch},
        rename={"solver_tol": "tol", "solver_method": "method"},
    ) if any(k in sch for k in ("solver_tol", "solver_method", "preconditioner")) else SolverConfig(method="direct")
    scheme = _build(SchemeConfig, "scheme", dict(sch, solver=solver))
    initial = _build(InitialSpec, "initial", _table(raw, "initial"))
    if initial.kind not in ("zero", "uniaxial_bubble", "file"):
        raise ConfigError("initial.kind", f"must be zero, uniaxial_bubble or file, got {initial.kind!r}")
    if initial.kind == "file" and not initial.q_path:
        raise ConfigError("initial.q_path", "required for kind = 'file'")
    for key, typ in (("t_end", (int, float)), ("snapshot_interval", int), ("dim", int), ("output_dir", str)):
        if key in raw and (not isinstance(raw[key], typ) or isinstance(raw[key], bool)):
            raise ConfigError(key, f"wrong type {type(raw[key]).__name__}")
    return RunConfig(
        grid=grid,
        dim=raw.get("dim", 3),
        material=material,
        viscosity=viscosity,
        scheme=scheme,
        initial=initial,
        t_end=float(raw["t_end"]),
        output_dir=raw.get("output_dir", "qflow_out"),
        snapshot_interval=raw.get("snapshot_interval", 10),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("<file>", f"{path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"malformed TOML: {exc}") from exc
    return parse_config(raw)


def initial_state(cfg: RunConfig) -> State:
    ini, g = cfg.initial, cfg.grid
    try:
        if ini.kind == "zero":
            return State.zeros(g, cfg.dim)
        if ini.kind == "uniaxial_bubble":
            Q = uniaxial_bubble(g, cfg.dim, s=ini.s, center=ini.center, radius=ini.radius,
                                director=ini.director, twist=ini.twist)
            return State(0.0, VelocityField.zeros(g), Q)
        u, Q = from_snapshots(ini.q_path, ini.u_path or None, g.lx, g.ly, g.bc)
    except (ValueError, OSError) as exc:
        raise ConfigError("initial", str(exc)) from exc
    if Q.grid != g or Q.dim != cfg.dim:
        raise ConfigError("initial.q_path", "snapshot grid or dimension does not match the config")
    return State(0.0, u, Q)


@contextlib.contextmanager
def _thread_limit():
    """Cap BLAS/OpenMP worker threads to ``QFLOW_THREADS`` when set."""
    n = os.environ.get("QFLOW_THREADS")
    if not n:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # optional
        yield
        return
    with threadpool_limits(limits=int(n)):
        yield


def _snapshot(outdir: Path, step: int, state: State) -> None:
    write_snapshot(outdir / f"Q_{step:06d}.bin", state.Q)
    write_snapshot(outdir / f"u_{step:06d}.bin", state.u)


def run(cfg: RunConfig) -> int:
    """Execute a configured run; returns the exit code."""
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.resolved.toml").write_text(tomli_w.dumps(cfg.to_dict()))
    state = initial_state(cfg)
    ledger = EnergyLedger()
    p, spec = cfg.material, cfg.viscosity
    _snapshot(outdir, 0, state)
    with open(outdir / "run.log", "w") as logf:
        logf.write(f"# {'step':>6s} {'t':>14s} {'dt':>11s} {'it':>4s} {'rho':>10s} "
                   f"{'kinetic':>16s} {'free':>16s} {'total':>16s} {'B':>16s}\n")

        def on_step(step, st, report):
            dt = ledger.t[-1] - ledger.t[-2]
            energies = (ledger.kinetic[-1], ledger.free[-1], ledger.total[-1], ledger.B[-1])
            logf.write(format_log_line(step, st, dt, report, energies) + "\n")
            if step % cfg.snapshot_interval == 0:
                _snapshot(outdir, step, st)

        try:
            with _thread_limit():
                final = advance(state, cfg.t_end, p, spec, cfg.scheme, ledger, on_step=on_step)
        except (RunFailure, FloatingPointError) as exc:
            logf.write(f"# FAILED: {exc}\n")
            ledger.to_csv(outdir / "energy.csv")
            print(f"qflow run: step failure: {exc}", file=sys.stderr)
            return 2
        _snapshot(outdir, len(ledger) - 1, final)
        audit = dissipation_audit(ledger)
        logf.write(f"# {audit.summary()}\n")
    ledger.to_csv(outdir / "energy.csv")
    print(audit.summary())
    return 0


def verify(suite: str, seed: int = 0, outdir=None) -> int:
    from . import verify as vmod

    if suite != "all" and suite not in vmod.SUITES:
        print(f"qflow verify: unknown suite {suite!r}; choose from {', '.join(['all', *vmod.SUITES])}",
              file=sys.stderr)
        return 1
    names = list(vmod.SUITES) if suite == "all" else [suite]
    ok = True
    with _thread_limit():
        for name in names:
            reports = vmod.run_suite(name, seed)
            print(f"[{name}]")
            for r in reports:
                print("  " + r.line())
                orders = r.details.get("orders")
                if orders:
                    _print_table(r)
            ok &= all(r.passed for r in reports if r.gating)
            if outdir is not None:
                vmod.export_reports(reports, outdir, name)
    return 0 if ok else 3


def _print_table(r) -> None:
    d = r.details
    xs = d.get("grids") or d.get("dt")
    for key in ("u", "Q"):
        errs = d["errors"][key] if isinstance(d["errors"], dict) else (d["errors"] if key == "Q" else None)
        if not errs or not any(errs):
            continue
        orders = d["orders"][key] if isinstance(d["orders"], dict) else d["orders"]
        print(f"      {key}: " + "  ".join(f"{x:g}:{e:.3e}" for x, e in zip(xs, errs))
              + "  orders " + " ".join(f"{o:.3f}" for o in orders))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="qflow", description="Q-tensor flow simulator and verification harness")
    sub = ap.add_subparsers(dest="command", required=True)
    pr = sub.add_parser("run", help="run a simulation from a TOML config")
    pr.add_argument("config")
    pv = sub.add_parser("verify", help="run a verification suite")
    pv.add_argument("suite", help="identities, cancellation, projector, mms, energy, epsilon, picard or all")
    pv.add_argument("--seed", type=int, default=0)
    pv.add_argument("--out", default=None, help="directory for per-suite CSV and summary.json")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        try:
            cfg = load_config(args.config)
            return run(cfg)
        except ConfigError as exc:
            print(f"qflow run: {exc}", file=sys.stderr)
            return 1
    return verify(args.suite, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
