"""Command-line interface.

Subcommands: ``run`` (fit and score algorithms, writing results.csv and a
chart), ``grid`` (hyperparameter search on a dedicated seed), and ``ntk``
(kernel diagnostics for a sampled context set).  Every option can also be
supplied through a BANDITLAB_-prefixed environment variable or a key=value
config file; explicit flags win over the environment, which wins over the
file.  Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import network as net
from .harness import (
    ALGO_IDS,
    ConfigError,
    ExperimentConfig,
    emit_outputs,
    grid_search,
    make_bandit,
    run_experiment,
    sample_eval_set,
)
from .ntk import effective_dim, min_eigenvalue, ntk_gram

ENV_PREFIX = "BANDITLAB_"

_BOOL_TRUE = ("1", "true", "yes", "on")
_BOOL_FALSE = ("0", "false", "no", "off")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_grid(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _parse_int_grid(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


# option name -> (config field, parser); None field means CLI-only
_OPTIONS: dict[str, tuple[str | None, object]] = {
    "algo": ("algos", lambda s: tuple(tok.strip() for tok in s.split(",") if tok.strip())),
    "bandit": (None, str),
    "T": ("horizon", int),
    "n_grid": ("n_grid", _parse_int_grid),
    "trials": ("trials", int),
    "n_te": ("n_te", int),
    "seed": ("seed", int),
    "mode": ("mode", str),
    "beta": ("beta", float),
    "lambda": ("lam", float),
    "eta": ("eta", float),
    "reg": ("reg", float),
    "sigma": ("sigma", float),
    "m": ("width", int),
    "L": ("depth", int),
    "layer_norm": ("layer_norm", _parse_bool),
    "collect": (None, str),
    "d": ("context_dim", int),
    "K": ("num_actions", int),
    "noise_std": ("noise_std", float),
    "return_rule": ("return_rule", str),
    "cov_mode": ("cov_mode", str),
    "optimizer": ("optimizer", str),
    "kern_cap": ("kern_cap", int),
    "beta_grid": ("beta_grid", _parse_grid),
    "sigma_grid": ("sigma_grid", _parse_grid),
    "eta_grid": ("eta_grid", _parse_grid),
    "mode_grid": ("mode_grid", lambda s: tuple(tok.strip() for tok in s.split(",") if tok.strip())),
    "schema": ("schema", str),
    "has_header": ("has_header", _parse_bool),
    "out": ("out_dir", str),
    "measure_time": ("measure_time", _parse_bool),
    "blob_classes": ("blob_classes", int),
    "blob_samples": ("blob_samples", int),
    "config": (None, str),
    "n_contexts": (None, int),  # ntk subcommand
}


def _add_options(parser: argparse.ArgumentParser) -> None:
    for name in _OPTIONS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None)


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}: line {lineno}: expected key=value")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    unknown = [k for k in values if k not in _OPTIONS]
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    return values


def _resolve(args: argparse.Namespace) -> dict[str, object]:
    """Merge flag, environment and file values with flag-first precedence."""
    file_values: dict[str, str] = {}
    config_path = getattr(args, "config", None) or os.environ.get(ENV_PREFIX + "CONFIG")
    if config_path:
        file_values = _read_config_file(config_path)
    resolved: dict[str, object] = {}
    for name, (_, parse) in _OPTIONS.items():
        raw = getattr(args, name, None)
        if raw is None:
            raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is None:
            raw = file_values.get(name)
        if raw is None:
            continue
        try:
            resolved[name] = parse(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for --{name}: {raw!r} ({exc})") from exc
    return resolved


def _split_bandit(value: str, resolved: dict[str, object]) -> None:
    """'classify:<path>' and 'mushroom:<path>' carry the data path inline."""
    name, sep, path = value.partition(":")
    resolved["bandit_name"] = name
    if sep:
        resolved.setdefault("data_path", path)


def build_config(resolved: dict[str, object]) -> ExperimentConfig:
    kwargs: dict[str, object] = {}
    for name, (field_name, _) in _OPTIONS.items():
        if field_name is not None and name in resolved:
            kwargs[field_name] = resolved[name]
    if "bandit_name" in resolved:
        kwargs["bandit"] = resolved["bandit_name"]
    if "data_path" in resolved:
        kwargs["data_path"] = resolved["data_path"]
    if "collect" in resolved:
        spec = str(resolved["collect"])
        kind, sep, eps = spec.partition(":")
        if kind not in ("eps", "adaptive"):
            raise ConfigError(f"unknown collection policy {kind!r}")
        kwargs["collect"] = kind
        if sep:
            try:
                kwargs["collect_eps"] = float(eps)
            except ValueError:
                raise ConfigError(f"bad collection rate {eps!r}") from None
    valid = {f.name for f in fields(ExperimentConfig)}
    assert set(kwargs) <= valid, f"internal option mismatch: {set(kwargs) - valid}"
    try:
        config = ExperimentConfig(**kwargs)
        config.validate()
    except (ConfigError, net.ConfigError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config


def _cmd_run(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    if "bandit" in resolved:
        _split_bandit(str(resolved["bandit"]), resolved)
    config = build_config(resolved)
    report = run_experiment(config)
    if not config.out_dir:
        print("algo,n,mean_subopt,ci_low,ci_high,trials,seconds")
        for row in report.rows:
            print(
                f"{row.algo},{row.n},{row.mean:.6g},{row.mean - row.half_width:.6g},"
                f"{row.mean + row.half_width:.6g},{row.trials},{row.seconds:.6g}"
            )
    return 0


def _cmd_grid(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    if "bandit" in resolved:
        _split_bandit(str(resolved["bandit"]), resolved)
    config = build_config(resolved)
    best = grid_search(config)
    lines = ["algo,param,value"]
    for algo in config.algos:
        for key, value in sorted(best[algo].items()):
            lines.append(f"{algo},{key},{value}")
    text = "\n".join(lines) + "\n"
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        with open(os.path.join(config.out_dir, "grid.csv"), "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_ntk(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    if "bandit" in resolved:
        _split_bandit(str(resolved["bandit"]), resolved)
    config = build_config(resolved)
    n_contexts = int(resolved.get("n_contexts", 32))
    if n_contexts < 1:
        raise ConfigError(f"n_contexts must be >= 1, got {n_contexts}")
    instance = make_bandit(config)
    arms, _ = sample_eval_set(
        instance, n_contexts,
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,)),
    )
    stacked = arms.reshape(-1, instance.dim)
    gram = ntk_gram(stacked, config.depth)
    lam0 = min_eigenvalue(gram.matrix)
    d_eff = effective_dim(gram.matrix, config.lam, n_contexts, instance.num_actions)
    text = "lambda0,effective_dim,nK,lambda\n" + (
        f"{lam0:.6g},{d_eff:.6g},{stacked.shape[0]},{config.lam:.6g}\n"
    )
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        with open(os.path.join(config.out_dir, "ntk.csv"), "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bandit-lab",
        description="Offline contextual-bandit experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in (("run", _cmd_run), ("grid", _cmd_grid), ("ntk", _cmd_ntk)):
        p = sub.add_parser(name)
        _add_options(p)
        p.set_defaults(handler=handler)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface as a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
