"""Command-line runner: ``mlab run|list|validate``.

Config files are flat ``key = value`` text with ``[section]`` headers.
The ``[run]`` section names the experiment, the seed and the output
directory; the experiment's own section holds its parameters. Every error
message carries the file name and line number it refers to.

Exit status: 0 when every assertion passes, 1 when one fails, 2 when the
config does not validate.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .experiments import REGISTRY, ConfigError, Experiment

EXIT_OK, EXIT_ASSERTION, EXIT_INVALID = 0, 1, 2
RUN_KEYS = ("experiment", "seed", "output")


class ValidationError(Exception):
    def __init__(self, source: str, line: int | None, message: str):
        self.source, self.line, self.message = source, line, message
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass
class RawConfig:
    source: str
    sections: dict = field(default_factory=dict)  # section -> key -> (value, line)


def parse_config_text(text: str, source: str = "<config>") -> RawConfig:
    cfg = RawConfig(source)
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ValidationError(source, n, f"malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section in cfg.sections:
                raise ValidationError(source, n, f"duplicate section [{section}]")
            cfg.sections[section] = {}
            continue
        if "=" not in line:
            raise ValidationError(source, n, f"expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ValidationError(source, n, "key outside any section")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValidationError(source, n, "empty key")
        if key in cfg.sections[section]:
            raise ValidationError(source, n, f"duplicate key {key!r} in [{section}]")
        cfg.sections[section][key] = (value, n)
    return cfg


@dataclass
class ExperimentConfig:
    experiment: Experiment
    params: dict
    seed: int
    output: str

    def resolved(self) -> dict:
        return {"experiment": self.experiment.name, "seed": self.seed, "output": self.output,
                self.experiment.section: {k: _clean(v) for k, v in sorted(self.params.items())}}


def resolve(cfg: RawConfig, overrides: dict | None = None, env: dict | None = None,
            seed_flag: str | None = None) -> ExperimentConfig:
    """Validate a parsed config.

    ``overrides`` are flag values for the experiment section. Seed precedence:
    ``seed_flag``, then ``MLAB_SEED``, then the config.
    """
    env = os.environ if env is None else env
    src = cfg.source
    run = cfg.sections.get("run")
    if run is None:
        raise ValidationError(src, None, "missing [run] section")
    for key, (_, n) in run.items():
        if key not in RUN_KEYS:
            raise ValidationError(src, n, f"unknown key {key!r} in [run]")
    if "experiment" not in run:
        raise ValidationError(src, None, "[run] needs 'experiment'")
    name, n = run["experiment"]
    if name not in REGISTRY:
        raise ValidationError(src, n, f"unknown experiment {name!r}; see 'mlab list'")
    exp = REGISTRY[name]
    for sec in cfg.sections:
        if sec not in ("run", exp.section):
            line = min((ln for _, ln in cfg.sections[sec].values()), default=None)
            raise ValidationError(src, line, f"section [{sec}] is not used by {name}")
    seed = 0
    if "seed" in run:
        text, n = run["seed"]
        try:
            seed = int(text)
        except ValueError:
            raise ValidationError(src, n, f"seed must be an integer, got {text!r}") from None
    if env.get("MLAB_SEED"):
        try:
            seed = int(env["MLAB_SEED"])
        except ValueError:
            raise ValidationError("MLAB_SEED", None, f"must be an integer, got {env['MLAB_SEED']!r}") from None
    if seed_flag is not None:
        try:
            seed = int(seed_flag)
        except ValueError:
            raise ValidationError("--seed", None, f"must be an integer, got {seed_flag!r}") from None
    if seed < 0:
        raise ValidationError(src, run.get("seed", (None, None))[1], "seed must be nonnegative")
    output = run.get("output", (f"mlab-out/{name}", None))[0]
    given = dict(cfg.sections.get(exp.section, {}))
    for key, value in (overrides or {}).items():
        given[key] = (value, None)
    params = {}
    for key, (text, n) in given.items():
        if key not in exp.params:
            raise ValidationError(src if n is not None else "--" + key, n,
                                  f"unknown key {key!r} for {name}")
        try:
            params[key] = exp.params[key].parse(text)
        except ConfigError as e:
            raise ValidationError(src if n is not None else "--" + key, n, f"{key}: {e}") from None
    for key, p in exp.params.items():
        if key not in params:
            if p.required:
                raise ValidationError(src, None, f"missing required key {key!r} in [{exp.section}]")
            params[key] = list(p.default) if isinstance(p.default, list) else p.default
    return ExperimentConfig(exp, params, seed, output)


def load(path: str, overrides: dict | None = None, env: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ValidationError(path, None, f"cannot read config: {e.strerror}") from None
    return resolve(parse_config_text(text, path), overrides, env)


def _clean(v):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def report_bytes(cfg: ExperimentConfig, outcome) -> bytes:
    # the output directory is an artefact location, not an input; it lives in the manifest
    config = {k: v for k, v in cfg.resolved().items() if k != "output"}
    doc = {"experiment": cfg.experiment.name, "seed": cfg.seed, "config": config,
           "rows": outcome.rows, "assertions": outcome.assertions, "passed": outcome.passed}
    return (json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n").encode()


def _write_series(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])


def execute(cfg: ExperimentConfig, echo=print) -> int:
    started = time.time()
    outcome = cfg.experiment.run(cfg.params, cfg.seed)
    finished = time.time()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    data = report_bytes(cfg, outcome)
    (out / "report.json").write_bytes(data)
    series = {}
    for name, (header, rows) in sorted(outcome.series.items()):
        fname = f"{name}.csv"
        _write_series(out / fname, header, rows)
        series[name] = {"file": fname, "x": header[0], "y": list(header[1:])}
    manifest = {"config": cfg.resolved(), "report": "report.json",
                "report_sha256": hashlib.sha256(data).hexdigest(), "series": series,
                "started": started, "finished": finished, "version": __version__,
                "kernel_backend": kernels.BACKEND, "passed": outcome.passed}
    (out / "manifest.json").write_text(json.dumps(_clean(manifest), sort_keys=True, indent=2) + "\n")
    for a in outcome.assertions:
        status = "PASS" if a["passed"] else "FAIL"
        echo(f"{status} {a['name']}: {a['statistic']} = {a['value']} (threshold {a['threshold']})")
    return EXIT_OK if outcome.passed else EXIT_ASSERTION


def list_experiments() -> str:
    lines = []
    for name in sorted(REGISTRY):
        e = REGISTRY[name]
        req = ", ".join(e.required_keys) or "none"
        lines.append(f"{name}  [{e.section}]  required: {req}  {e.description}")
        lines.append(f"    keys: {', '.join(sorted(e.params))}")
    return "\n".join(lines)


_FLAGS = ("dynamics", "x", "phi", "lambda1", "lambda2", "eps", "ensemble", "seed")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlab", description="Markov-selection verification experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("config", nargs="?")
    run.add_argument("--experiment", help="experiment name when no config file is given")
    run.add_argument("--output")
    for flag in _FLAGS:
        run.add_argument(f"--{flag}")
    sub.add_parser("list", help="list registered experiments")
    val = sub.add_parser("validate", help="validate a config file without running it")
    val.add_argument("config")
    return ap


def _from_args(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in _FLAGS if k != "seed" and getattr(args, k) is not None}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ValidationError(args.config, None, f"cannot read config: {e.strerror}") from None
        cfg = parse_config_text(text, args.config)
    else:
        if not args.experiment:
            raise ValidationError("<command line>", None, "give a config file or --experiment")
        cfg = RawConfig("<command line>", {"run": {"experiment": (args.experiment, None)}})
    if args.output is not None:
        cfg.sections.setdefault("run", {})["output"] = (args.output, None)
    return resolve(cfg, overrides, seed_flag=args.seed)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        print(list_experiments())
        return EXIT_OK
    try:
        if args.command == "validate":
            cfg = load(args.config)
            print(f"{args.config}: ok ({cfg.experiment.name}, seed {cfg.seed})")
            return EXIT_OK
        cfg = _from_args(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return execute(cfg)
    except (ValueError, ArithmeticError) as e:
        # parameter combinations rejected by a module (e.g. a step-size guard)
        print(f"error: {cfg.experiment.name}: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
