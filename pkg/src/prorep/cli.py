"""Command line front end: ``fit``, ``simulate``, ``validate``, ``bootstrap``.

All commands read one YAML (or JSON) config file::

    input: panel.csv            # fit, bootstrap
    K: 24                       # optional horizon truncation
    schema:
      columns: {id: patient, k: month}
      covariates:
        meld: numeric
        blood: {kind: categorical, reference: O, baseline: true}
    formulas:
      B: [{time: {}}, meld, blood]
      H: [{time: {}}, meld]
      C: [{time: {}}, meld]
      gamma: [{time: {}}, Z, {interact: [Z, {time: {}}]}]
    V: []
    regimes: [g0, g1, {label: half, q: 0.5, m: 1.0}]
    mode: general
    weight_cap: null
    bootstrap: {B: 500, seed: 0}
    out: results
    simulate: {generator: transplant, n: 5000, seed: 0, K: 24}
    oracle: {bound: 10000000, seed: 0, n_dgms: null, suites: null, dgm: null}

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 5 validation failure.  On failure a JSON error record is written to
stderr and to ``error.json`` in the output directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
import yaml

from .basis import FormulaError
from .boot import DEFAULT_REPLICATES, TooManyFailures, bootstrap
from .data import PanelDataset, PanelError, PanelSchema, load_panel
from .glm import GlmError
from .msm import MSMError
from .oracle import DEFAULT_STATE_BOUND, DiscreteDGM, InvalidDGM, OracleError, gformula_risk, random_dgm
from .oracle import PositivityViolation as OraclePositivity
from .pipeline import PipelineConfig, estimate, prepare
from .regime import ConstraintInfeasible, RegimeError, RegimeSpec, regimes_from_config
from .sim import TransplantGenerator, sample_dgm
from .validate import run_suites
from .weights import DegenerateZ, PositivityViolation

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4, 5
FLOAT_FORMAT = "%.17g"


class ConfigError(ValueError):
    pass


class ValidationFailure(RuntimeError):
    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message)


ERROR_CODES = (
    (ValidationFailure, EXIT_VALIDATION),
    (InvalidDGM, EXIT_VALIDATION),
    (ConfigError, EXIT_CONFIG),
    (RegimeError, EXIT_CONFIG),
    (FormulaError, EXIT_CONFIG),
    (MSMError, EXIT_CONFIG),
    (DegenerateZ, EXIT_CONFIG),
    (PanelError, EXIT_DATA),
    (FileNotFoundError, EXIT_DATA),
    (OracleError, EXIT_NUMERIC),
    (GlmError, EXIT_NUMERIC),
    (PositivityViolation, EXIT_NUMERIC),
    (OraclePositivity, EXIT_NUMERIC),
    (ConstraintInfeasible, EXIT_NUMERIC),
    (TooManyFailures, EXIT_NUMERIC),
)


def exit_code_for(exc: BaseException) -> int:
    for cls, code in ERROR_CODES:
        if isinstance(exc, cls):
            return code
    return EXIT_NUMERIC if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)) else EXIT_CONFIG


@dataclass
class RunConfig:
    """Parsed run configuration; see the module docstring for the file layout."""

    input: str | None = None
    schema: PanelSchema = field(default_factory=PanelSchema)
    formulas: dict = field(default_factory=dict)
    V: tuple[str, ...] = ()
    regimes: list[RegimeSpec] = field(default_factory=list)
    K: int | None = None
    mode: str = "general"
    weight_cap: float | None = None
    bootstrap_B: int = DEFAULT_REPLICATES
    seed: int = 0
    out: str = "."
    simulate: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    base_dir: str = "."

    @classmethod
    def from_mapping(cls, raw: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        known = {"input", "schema", "formulas", "V", "regimes", "K", "mode", "weight_cap", "bootstrap", "out", "simulate", "oracle"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        boot = raw.get("bootstrap") or {}
        if not isinstance(boot, dict):
            raise ConfigError("bootstrap must be a mapping with B and seed")
        mode = raw.get("mode", "general")
        if mode not in ("general", "main"):
            raise ConfigError(f"mode must be 'general' or 'main', got {mode!r}")
        K = raw.get("K")
        if K is not None and (not isinstance(K, int) or K < 1):
            raise ConfigError(f"K must be a positive integer, got {K!r}")
        cap = raw.get("weight_cap")
        if cap is not None and not (isinstance(cap, (int, float)) and cap > 0):
            raise ConfigError(f"weight_cap must be positive, got {cap!r}")
        try:
            schema = PanelSchema.from_config(raw.get("schema"))
        except (TypeError, PanelError) as exc:
            raise ConfigError(f"bad schema: {exc}") from exc
        return cls(
            input=raw.get("input"),
            schema=schema,
            formulas=dict(raw.get("formulas") or {}),
            V=tuple(raw.get("V") or ()),
            regimes=regimes_from_config(raw["regimes"]) if raw.get("regimes") else [],
            K=K,
            mode=mode,
            weight_cap=cap,
            bootstrap_B=int(boot.get("B", DEFAULT_REPLICATES)),
            seed=int(boot.get("seed", 0)),
            out=str(raw.get("out", ".")),
            simulate=dict(raw.get("simulate") or {}),
            oracle=dict(raw.get("oracle") or {}),
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        return cls.from_mapping(raw or {}, os.path.dirname(os.path.abspath(path)))

    def path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def pipeline(self) -> PipelineConfig:
        if not self.regimes:
            raise ConfigError("at least one regime is required")
        labels = [r.label for r in self.regimes]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"regime labels must be unique: {labels}")
        missing = [m for m in ("B", "H", "gamma") if m not in self.formulas]
        if missing:
            raise ConfigError(f"missing formulas: {missing}")
        return PipelineConfig(self.formulas, self.regimes, self.V, self.mode, self.weight_cap)

    def check_columns(self, panel: PanelDataset) -> None:
        from .basis import FormulaSpec

        allowed = set(panel.schema.names) | {"k"}
        for name, formula in self.formulas.items():
            used = FormulaSpec.parse(formula).names_used()
            extra = used - allowed - ({"Z"} if name == "gamma" else set())
            if extra:
                raise ConfigError(f"formula {name!r} uses unknown columns {sorted(extra)}")
        for v in self.V:
            if v not in panel.schema.names:
                raise ConfigError(f"V covariate {v!r} is not in the schema")

    def load_panel(self) -> PanelDataset:
        if not self.input:
            raise ConfigError("config needs an 'input' panel file")
        panel = load_panel(self.path(self.input), self.schema, self.K)
        self.check_columns(panel)
        return panel


# ---------------------------------------------------------------------------
# output helpers


def _write_csv(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _write_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _outdir(cfg: RunConfig, override: str | None) -> str:
    out = override or cfg.path(cfg.out)
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg: RunConfig, out: str, threads: int = 1) -> dict:
    """Fit models, weights and the hazard model; write risk, utilization, diagnostics."""
    panel = cfg.load_panel()
    est = estimate(prepare(panel, cfg.pipeline()))
    _write_csv(est.risk_frame(), os.path.join(out, "risk.csv"))
    _write_csv(est.utilization(), os.path.join(out, "utilization.csv"))
    _write_csv(est.diagnostics, os.path.join(out, "diagnostics.csv"))
    summary = {"command": "fit", "n_subjects": panel.n, "K": panel.K, **est.summary()}
    _write_json(summary, os.path.join(out, "summary.json"))
    return summary


def cmd_bootstrap(cfg: RunConfig, out: str, threads: int = 1) -> dict:
    """Point estimate plus subject-bootstrap percentile bands."""
    panel = cfg.load_panel()
    prep = prepare(panel, cfg.pipeline())
    point = estimate(prep)
    res = bootstrap(prep, B=cfg.bootstrap_B, seed=cfg.seed, threads=threads, point=point)
    _write_csv(point.risk_frame(), os.path.join(out, "risk.csv"))
    _write_csv(res.bands()[["regime", "k", "lo", "hi"]], os.path.join(out, "bands.csv"))
    _write_csv(res.contrast_bands(), os.path.join(out, "contrast_bands.csv"))
    summary = {
        "command": "bootstrap",
        "B": res.B,
        "seed": res.seed,
        "failures": res.failures,
        "failed_replicates": {str(k): v for k, v in sorted(res.errors.items())},
        **point.summary(),
    }
    _write_json(summary, os.path.join(out, "summary.json"))
    return summary


def _dgm_from(spec, cfg: RunConfig) -> DiscreteDGM:
    if isinstance(spec, str):
        return DiscreteDGM.from_json(cfg.path(spec) if not spec.lstrip().startswith("{") else spec)
    if isinstance(spec, dict) and "random" in spec:
        r = dict(spec["random"])
        return random_dgm(
            K=int(r.get("K", 3)),
            n_levels=int(r.get("n_levels", 2)),
            seed=int(r.get("seed", 0)),
            censoring=bool(r.get("censoring", False)),
        )
    if isinstance(spec, dict):
        dgm = DiscreteDGM.from_dict(spec)
        dgm.validate()
        return dgm
    raise ConfigError(f"cannot read DGM from {spec!r}")


def cmd_simulate(cfg: RunConfig, out: str, threads: int = 1) -> dict:
    """Sample a panel from the transplant-like generator or a discrete DGM."""
    sim = cfg.simulate
    generator = sim.get("generator", "transplant")
    n = int(sim.get("n", 1000))
    K = sim.get("K")
    output = os.path.join(out, sim.get("output", "panel.csv"))
    seed = int(sim.get("seed", cfg.seed))
    summary = {"command": "simulate", "generator": generator, "n": n, "seed": seed}
    if generator == "transplant":
        panel = TransplantGenerator().sample(n, seed, K)
    elif generator == "dgm":
        if "dgm" not in sim:
            raise ConfigError("simulate.generator 'dgm' needs simulate.dgm")
        dgm = _dgm_from(sim["dgm"], cfg)
        panel = sample_dgm(dgm, n, seed, K)
        dgm.to_json(os.path.join(out, "dgm.json"))
        bound = int(cfg.oracle.get("bound", DEFAULT_STATE_BOUND))
        rows = []
        for reg in cfg.regimes:
            risk = gformula_risk(dgm, reg, K, mode=cfg.mode, bound=bound).risk
            rows += [{"regime": reg.label, "k": k, "risk": r} for k, r in enumerate(risk, start=1)]
        if rows:
            _write_csv(pd.DataFrame(rows), os.path.join(out, "oracle_risk.csv"))
    else:
        raise ConfigError(f"unknown generator {generator!r}; use 'transplant' or 'dgm'")
    panel.write_csv(output)
    summary.update({"K": panel.K, "rows": len(panel.frame), "output": os.path.basename(output)})
    _write_json(summary, os.path.join(out, "simulate.json"))
    return summary


def cmd_validate(cfg: RunConfig, out: str, threads: int = 1) -> dict:
    """Exact oracle suites; any failing suite gives exit code 5."""
    o = cfg.oracle
    dgms = None
    if o.get("dgm") is not None:
        dgms = [(cfg.seed, _dgm_from(o["dgm"], cfg))]
    results = run_suites(o.get("suites"), o.get("n_dgms"), int(o.get("seed", cfg.seed)), dgms)
    for r in results:
        print(r.line())
    report = {"command": "validate", "passed": all(r.passed for r in results), "suites": [r.as_dict() for r in results]}
    _write_json(report, os.path.join(out, "validation.json"))
    if not report["passed"]:
        failed = [r.name for r in results if not r.passed]
        raise ValidationFailure(f"validation suites failed: {failed}", report)
    return report


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "validate": cmd_validate, "bootstrap": cmd_bootstrap}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prorep", description="Resource-constrained regime estimation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", required=name != "validate", help="YAML or JSON run config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for bootstrap replicates")
        p.add_argument("--seed", type=int, help="seed (overrides config)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = None
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = int(args.seed)
            cfg.simulate["seed"] = cfg.oracle["seed"] = cfg.seed
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = _outdir(cfg, args.out)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](cfg, out, args.threads)
        return EXIT_OK
    except Exception as exc:  # every failure becomes an error record and exit code
        code = exit_code_for(exc)
        record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, "command": args.command}
        if isinstance(exc, ValidationFailure) and exc.report is not None:
            record["report"] = exc.report
        text = json.dumps(_jsonable(record), sort_keys=True)
        print(text, file=sys.stderr)
        if out is not None:
            with open(os.path.join(out, "error.json"), "w") as fh:
                fh.write(text + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
