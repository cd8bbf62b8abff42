"""Command-line front end.

Subcommands::

    kahan-cdc integrate  --preset lv1-paper --output-dir out/
    kahan-cdc converge   --preset lv1-paper --grid 1:5:0.01,2:7:0.05 --metric H1
    kahan-cdc structure  --model lv2

Configurations are JSON documents; a preset supplies defaults and explicit
flags override it.  Exit codes: 0 success, 1 validation error, 2 numerical
failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .analysis import convergence_study, invariant_trace, study_threads
from .cdc import CdcConfig, cdc_integrate
from .errors import DomainError, KahanCdcError, NumericalError, ValidationError
from .integrators import NewtonConfig, integrate_fixed
from .models import (LV1_PARAMS, LV1_U0, LV2_U0, Lv1Params, ModelBundle,
                     build_custom, build_lv1, build_lv2, structure_residuals)

log = logging.getLogger("kahan_cdc")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
STRUCTURE_LIMIT = 1e-10


@dataclass
class ExperimentConfig:
    model: str = "lv1"
    params: dict | None = None
    r: list | None = None
    A: list | None = None
    u0: list = field(default_factory=lambda: list(LV1_U0))
    t_end: float = 100.0
    dt: float = 0.01
    corrections: int = 1
    nodes: int | None = None
    reference_tol: float = 1e-13
    output_dir: str = "."
    grid: list | None = None
    dt0: float | None = None
    target: float = 1e-10
    metric: str = "u"
    samples: int = 1000
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**copy.deepcopy(data))
        cfg.normalize()
        return cfg

    def normalize(self) -> None:
        """Coerce numeric fields so that parse -> emit -> parse is stable."""
        try:
            self.u0 = [float(x) for x in self.u0]
            self.t_end = float(self.t_end)
            self.dt = float(self.dt)
            self.corrections = int(self.corrections)
            self.nodes = None if self.nodes is None else int(self.nodes)
            self.reference_tol = float(self.reference_tol)
            self.target = float(self.target)
            self.dt0 = None if self.dt0 is None else float(self.dt0)
            self.samples = int(self.samples)
            self.seed = int(self.seed)
            self.output_dir = str(self.output_dir)
            if self.params is not None:
                self.params = {k: float(v) for k, v in self.params.items()}
            if self.grid is not None:
                self.grid = [[int(c[0]), int(c[1])] + [float(x) for x in c[2:]] for c in self.grid]
        except (TypeError, ValueError, AttributeError, IndexError) as exc:
            raise ValidationError(f"malformed config value: {exc}") from None

    def build_model(self) -> ModelBundle:
        if self.model == "lv1":
            p = Lv1Params(**self.params) if self.params else LV1_PARAMS
            return build_lv1(p)
        if self.model == "lv2":
            return build_lv2()
        if self.model == "custom":
            if self.r is None or self.A is None:
                raise ValidationError("custom model needs both 'r' and 'A'")
            return build_custom(self.r, self.A)
        raise ValidationError(f"model must be lv1, lv2 or custom; got {self.model!r}")

    def validate(self) -> ModelBundle:
        model = self.build_model()
        u0 = np.asarray(self.u0, dtype=float)
        if u0.shape != (model.system.dim,):
            raise ValidationError(f"u0 must have {model.system.dim} components, got {self.u0}")
        if self.model in ("lv1", "lv2") and np.any(u0 <= 0):
            raise ValidationError(f"u0 must be strictly positive, got {self.u0}")
        self.cdc_config()
        if not (1e-14 <= self.reference_tol <= 1e-6):
            raise ValidationError(f"reference_tol must lie in [1e-14, 1e-6], got {self.reference_tol}")
        return model

    def cdc_config(self) -> CdcConfig:
        return CdcConfig(dt=self.dt, t_end=self.t_end, corrections=self.corrections,
                         nodes_per_interval=self.nodes, newton=NewtonConfig())


TABLE_GRID = [[1, 5, 0.01], [2, 7, 0.05], [3, 9, 0.15], [4, 11, 0.25]]

PRESETS: dict[str, dict] = {
    "lv1-paper": {
        "model": "lv1",
        "params": asdict(LV1_PARAMS),
        "u0": list(LV1_U0),
        "t_end": 100.0,
        "dt": 0.01,
        "corrections": 1,
        "nodes": 5,
        "grid": TABLE_GRID,
        "metric": "H1",
    },
    "lv2-paper": {
        "model": "lv2",
        "u0": list(LV2_U0),
        "t_end": 100.0,
        "dt": 0.01,
        "corrections": 1,
        "nodes": 5,
        "grid": TABLE_GRID,
        "metric": "H2",
    },
}


def _parse_grid(text: str) -> list:
    cells = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) not in (2, 3):
            raise ValidationError(f"grid cell {chunk!r} must be S:n or S:n:dt0")
        try:
            cell = [int(parts[0]), int(parts[1])] + [float(p) for p in parts[2:]]
        except ValueError:
            raise ValidationError(f"grid cell {chunk!r} is not numeric") from None
        cells.append(cell)
    return cells


def resolve_config(args) -> ExperimentConfig:
    data: dict = {}
    if args.preset:
        if args.preset not in PRESETS:
            raise ValidationError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        data.update(copy.deepcopy(PRESETS[args.preset]))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        data.update(loaded)
    if args.model is not None:
        if args.model != data.get("model"):
            # model switch invalidates model-specific defaults from the preset
            for key in ("params", "u0", "r", "A"):
                data.pop(key, None)
            if args.model == "lv2":
                data["u0"] = list(LV2_U0)
        data["model"] = args.model
    overrides = {
        "dt": args.dt, "corrections": args.corrections, "nodes": args.nodes,
        "t_end": args.t_end, "output_dir": args.output_dir,
    }
    for key in ("grid", "dt0", "target", "metric", "reference_tol", "samples", "seed"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    if overrides.get("grid") is not None:
        overrides["grid"] = _parse_grid(overrides["grid"])
    if getattr(args, "u0", None) is not None:
        try:
            overrides["u0"] = [float(x) for x in args.u0.split(",")]
        except ValueError:
            raise ValidationError(f"--u0 must be comma-separated numbers, got {args.u0!r}") from None
    data.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "no_cdc", False):
        data["corrections"] = 0
    return ExperimentConfig.from_dict(data)


def _write_rows(path: Path, header: str, rows: np.ndarray) -> None:
    with path.open("w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.16e}" for v in row) + "\n")


def cmd_integrate(cfg: ExperimentConfig) -> int:
    model = cfg.validate()
    ccfg = cfg.cdc_config()
    if ccfg.corrections == 0:
        traj = integrate_fixed(model.system, cfg.u0, ccfg.dt, ccfg.intervals)
    else:
        traj = cdc_integrate(model.system, cfg.u0, ccfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = model.system.dim
    header = "t," + ",".join(f"u{i + 1}" for i in range(m))
    _write_rows(out / "trajectory.csv", header, np.column_stack([traj.times, traj.states]))
    written = ["trajectory.csv"]
    if model.invariants:
        cols = [traj.times] + [invariant_trace(traj, h) for h in model.invariants]
        header = "t," + ",".join(f"{h.label}_err" for h in model.invariants)
        _write_rows(out / "invariants.csv", header, np.column_stack(cols))
        written.append("invariants.csv")
        for h, col in zip(model.invariants, cols[1:]):
            print(f"{h.label}: max |H(t) - H(0)| = {np.max(np.abs(col)):.3e}")
    print(f"wrote {', '.join(str(out / w) for w in written)} ({len(traj)} rows)")
    return EXIT_OK


def cmd_converge(cfg: ExperimentConfig) -> int:
    model = cfg.validate()
    if not cfg.grid:
        raise ValidationError("convergence grid is empty")
    report = convergence_study(model, cfg.u0, cfg.t_end, cfg.grid, dt0=cfg.dt0,
                               target=cfg.target, metric=cfg.metric,
                               reference_tol=cfg.reference_tol, threads=study_threads())
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "convergence.csv"
    path.write_text("\n".join(report.csv_lines()) + "\n")
    for cell in report.cells:
        print(f"S={cell.corrections} n={cell.nodes}: measured {cfg.metric} order "
              f"{cell.measured_order():.2f} (expected {cell.expected_order}), "
              f"{len(cell.rows)} step sizes, stop: {cell.stop_reason}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_structure(cfg: ExperimentConfig) -> int:
    model = cfg.validate()
    if not model.has_structure:
        raise ValidationError(f"model {cfg.model!r} has no bi-Hamiltonian structure to check")
    rng = np.random.default_rng(cfg.seed)
    states = rng.uniform(0.1, 2.0, size=(cfg.samples, 3))
    res = np.array([structure_residuals(model, u) for u in states])
    worst = res.max(axis=0)
    labels = ("|J1 grad H1|", "|J2 grad H2|", "|J1 grad H2 - f|", "|J2 grad H1 - f|")
    for label, v in zip(labels, worst):
        print(f"{label:>18s}  max = {v:.3e}")
    if np.any(worst > STRUCTURE_LIMIT):
        print(f"structure check FAILED (limit {STRUCTURE_LIMIT:.0e})")
        return EXIT_NUMERICAL
    print("structure check passed")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Argument errors are validation errors: exit 1, not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kahan-cdc", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--config", help="JSON config file (applied after the preset)")
        p.add_argument("--model", choices=["lv1", "lv2", "custom"])
        p.add_argument("--u0", help="comma-separated initial state")
        p.add_argument("--dt", type=float)
        p.add_argument("--corrections", type=int)
        p.add_argument("--nodes", type=int)
        p.add_argument("--t-end", dest="t_end", type=float)
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved JSON config and exit")

    p = sub.add_parser("integrate", help="integrate one trajectory and write CSV files")
    common(p)
    p.add_argument("--no-cdc", action="store_true", help="plain Kahan (same as --corrections 0)")

    p = sub.add_parser("converge", help="step-halving convergence study")
    common(p)
    p.add_argument("--grid", help="cells S:n[:dt0], comma separated")
    p.add_argument("--dt0", type=float)
    p.add_argument("--target", type=float)
    p.add_argument("--metric", choices=["u", "H1", "H2"])
    p.add_argument("--reference-tol", dest="reference_tol", type=float)

    p = sub.add_parser("structure", help="check the bi-Hamiltonian identities")
    common(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    return parser


COMMANDS = {"integrate": cmd_integrate, "converge": cmd_converge, "structure": cmd_structure}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(cfg.to_json())
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except (ValidationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KahanCdcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
