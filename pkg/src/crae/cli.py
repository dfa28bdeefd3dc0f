"""Command-line runner: method x seed sweeps with per-run CSVs and a summary table.

Configuration is a flat ``key = value`` file (``#`` starts a comment).  List
keys (``method``, ``seed``) take comma-separated values.  Command-line flags
override the file.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .data import DataError, make_benchmark
from .methods import Method, MethodError, TrainConfig, confusion_set, model_config_for, train

log = logging.getLogger("crae")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    C: int = 4
    H: int = 16
    W: int = 16
    n_per_class: int = 1260
    n_labeled: int = 40
    n_test: int = 1000
    noise_rate: float = 0.05
    max_jitter: int = 2


@dataclass(frozen=True)
class ExperimentSpec:
    methods: tuple[Method, ...] = (Method.CRAE,)
    seeds: tuple[int, ...] = (0,)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: Path = Path("results")


TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "seed"}
DATA_KEYS = {f.name: f for f in dataclasses.fields(DataConfig)}
LIST_KEYS = {"method", "seed"}
KEYS = sorted(LIST_KEYS | {"out"} | set(TRAIN_KEYS) | set(DATA_KEYS))


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, text: str):
    try:
        if key == "method":
            return tuple(Method.parse(m.strip()) for m in text.split(",") if m.strip())
        if key == "seed":
            return tuple(int(s) for s in text.split(",") if s.strip())
        if key == "out":
            return Path(text.strip())
        if key == "alpha_range":
            lo, hi = (float(v) for v in text.split(","))
            return (lo, hi)
        f = TRAIN_KEYS.get(key) or DATA_KEYS[key]
        kind = f.type if isinstance(f.type, str) else f.type.__name__
        if kind == "bool":
            return _bool(text)
        return int(text) if kind == "int" else float(text)
    except (ValueError, MethodError) as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from exc


def read_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        values[key] = value
    return values


def build_spec(values: dict[str, str]) -> ExperimentSpec:
    """Turn raw key/value strings into a validated ExperimentSpec."""
    unknown = set(values) - set(KEYS)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")
    parsed = {k: _convert(k, v) for k, v in values.items()}
    if "temp" in parsed and not 0 < parsed["temp"] <= 1:
        raise ConfigError(f"temp: must lie in (0, 1], got {parsed['temp']}")
    try:
        tcfg = TrainConfig(**{k: v for k, v in parsed.items() if k in TRAIN_KEYS})
    except MethodError as exc:
        raise ConfigError(str(exc)) from exc
    data = DataConfig(**{k: v for k, v in parsed.items() if k in DATA_KEYS})
    if data.H != data.W:
        raise ConfigError(f"H, W: images must be square, got {data.H}x{data.W}")
    spec = ExperimentSpec(parsed.get("method", ExperimentSpec.methods), parsed.get("seed", ExperimentSpec.seeds),
                          data, tcfg, parsed.get("out", ExperimentSpec.out))
    if not spec.methods:
        raise ConfigError("method: at least one method is required")
    if not spec.seeds:
        raise ConfigError("seed: at least one seed is required")
    return spec


FLAG_KEYS = {"method": "method", "seed": "seed", "labels": "n_labeled", "epochs": "epochs", "out": "out",
             "eta": "eta", "eta1": "eta1", "eta2": "eta2", "temp": "temp", "proj_dim": "proj_dim"}


def parse_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> ExperimentSpec:
    """Read ``path`` (may be None for all defaults) and apply ``overrides`` on top."""
    values = read_config_file(path) if path else {}
    values.update(overrides or {})
    return build_spec(values)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crae", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--method", help="comma-separated methods, e.g. CRAE,S4L")
    ap.add_argument("--seed", help="comma-separated seeds, e.g. 0,1,2")
    ap.add_argument("--labels", help="number of labeled examples")
    ap.add_argument("--epochs")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--eta")
    ap.add_argument("--eta1")
    ap.add_argument("--eta2")
    ap.add_argument("--temp")
    ap.add_argument("--proj-dim", dest="proj_dim")
    ap.add_argument("--no-aux", action="store_true", help="test with the semantic head instead of the auxiliary one")
    ap.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    ap.add_argument("--list-keys", action="store_true", help="print the configuration keys and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def overrides_from_args(args: argparse.Namespace) -> dict[str, str]:
    out = {key: getattr(args, flag) for flag, key in FLAG_KEYS.items() if getattr(args, flag) is not None}
    if args.no_aux:
        out["use_aux"] = "false"
    return out


def run_one(spec: ExperimentSpec, method: Method, seed: int) -> float:
    """Train one (method, seed) pair, write its CSVs, return the final test error."""
    d = spec.data
    split = make_benchmark(d.C, d.H, d.n_per_class, d.n_labeled, d.n_test, d.noise_rate, d.max_jitter, seed)
    tcfg = dataclasses.replace(spec.train, seed=seed)
    params, records = train(method, split, model_config_for(split, tcfg), tcfg)
    stem = spec.out / f"{method.value}_{seed}"
    diag.write_metrics(records, f"{stem}_metrics.csv")
    x, y = confusion_set(split, tcfg)
    diag.write_confusion(diag.head_confusion(params, x, y), f"{stem}_confusion.csv")
    log.info("%s seed=%d final test error %.4f", method.value, seed, records[-1].test_error)
    return records[-1].test_error


def write_summary(spec: ExperimentSpec, errors: dict[tuple[Method, int], float]) -> None:
    with open(spec.out / "summary.csv", "w") as fh:
        fh.write("method,n_seeds,mean_test_error,std_test_error\n")
        for m in spec.methods:
            v = np.array([errors[m, s] for s in spec.seeds])
            fh.write(f"{m.value},{len(v)},{v.mean():.17g},{v.std():.17g}\n")


def run(spec: ExperimentSpec, jobs: int = 1) -> int:
    """Run every (method, seed) pair; 0 on success, 1 if any run failed."""
    try:
        spec.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory %s: %s", spec.out, exc)
        return 1
    pairs = [(m, s) for m in spec.methods for s in spec.seeds]
    errors, failed = {}, []
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            futures = {pair: pool.submit(run_one, spec, *pair) for pair in pairs}
        outcomes = {}
        for pair, fut in futures.items():
            try:
                outcomes[pair] = fut.result()
            except Exception as exc:  # noqa: BLE001 - reported below
                outcomes[pair] = exc
    else:
        outcomes = {}
        for pair in pairs:
            try:
                outcomes[pair] = run_one(spec, *pair)
            except Exception as exc:  # noqa: BLE001 - reported below
                outcomes[pair] = exc
    for pair, result in outcomes.items():
        if isinstance(result, Exception):
            log.error("%s seed=%d failed: %s", pair[0].value, pair[1], result)
            failed.append(pair)
        else:
            errors[pair] = result
    if failed:
        return 1
    write_summary(spec, errors)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.list_keys:
        print("\n".join(KEYS))
        return 0
    try:
        spec = parse_config(args.config, overrides_from_args(args))
    except (ConfigError, OSError, DataError) as exc:
        print(f"crae: configuration error: {exc}", file=sys.stderr)
        return 2
    return run(spec, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
