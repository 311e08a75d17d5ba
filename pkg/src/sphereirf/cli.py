"""Command-line pipeline: simulate, bin, fit, and order-select fields.

One JSON config document per run; a few scalar flags (--seed, --kappa,
--d, --out) may override it.  Every output JSON embeds the effective
config, and all writers are deterministic — fixed key order, fixed float
formatting, no timestamps — so a rerun with the same config is
byte-identical.

Exit codes: 0 success, 2 configuration or input-format error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericalError
from .estimate import BinSpec, MoMTable, fit, mom_estimate
from .fieldio import load_locations_csv, read_field_csv, write_field_csv
from .kernels import Family, IntrinsicSpec, ModelSpec, icf_value
from .selection import DEFAULT_DROP_RATIO, m_criterion
from .simulate import GridSpec, difference_time, simulate_irf, truncate_harmonics

__all__ = ["COMMANDS", "RunConfig", "main"]

COMMANDS = ("simulate", "fit", "mom", "select-order", "curves")

_FLOAT_FMT = "%.17g"

# Which config field each override flag lands in, per command.
_OVERRIDE_PATHS = {
    "simulate": {
        "seed": ("grid", "seed"),
        "kappa": ("intrinsic", "kappa"),
        "d": ("intrinsic", "d"),
        "out": ("out",),
    },
    "fit": {"kappa": ("kappa",), "d": ("d",), "out": ("out",)},
    "mom": {"kappa": ("kappa",), "d": ("d",), "out": ("out",)},
    "select-order": {"d": ("d",), "out": ("out",)},
    "curves": {"kappa": ("kappa",), "d": ("d",), "out": ("out",)},
}

_TOP_LEVEL_KEYS = {
    "simulate": ({"model", "intrinsic", "grid", "out"}, {"locations_csv"}),
    "fit": ({"input", "kappa", "d", "out"}, {"bins", "fit", "true"}),
    "mom": ({"input", "kappa", "d", "out"}, {"bins"}),
    "select-order": ({"input", "d", "n_max", "out"}, {"bins", "drop_ratio"}),
    "curves": ({"input", "kappa", "d", "fitted", "out"}, {"bins", "true"}),
}


def _check_keys(raw, command, required, optional):
    unknown = set(raw) - required - optional
    if unknown:
        raise ConfigError(
            f"unknown config keys for {command}: {sorted(unknown)}"
        )
    missing = required - set(raw)
    if missing:
        hint = " (or pass --out)" if "out" in missing else ""
        raise ConfigError(f"{command} config missing keys: {sorted(missing)}{hint}")


def _as_int(raw, key, minimum=None):
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def _reference_model(raw, where):
    """A family + shape template whose alpha/beta slots the fit replaces."""
    allowed = {"family", "shape"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    family = Family.parse(raw.get("family", Family.GENERATING_FUNCTION))
    shape = raw.get("shape")
    return ModelSpec(
        family=family,
        alpha=0.5,
        beta=0.1,
        shape=None if shape is None else float(shape),
    )


def _amplitude_model(raw, where):
    """A fully specified curve: a model plus the table-scale amplitude."""
    allowed = {"model", "gamma0"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    if "model" not in raw:
        raise ConfigError(f"{where} requires a 'model' entry")
    gamma0 = float(raw.get("gamma0", 1.0))
    if gamma0 <= 0.0:
        raise ConfigError(f"{where}.gamma0 must be > 0, got {gamma0!r}")
    return ModelSpec.from_dict(raw["model"]), gamma0


@dataclass(frozen=True)
class RunConfig:
    """Validated parameters for one subcommand invocation.

    ``raw`` keeps the effective config document (after flag overrides)
    exactly as validated, for embedding in every output JSON.
    """

    command: str
    raw: dict
    out: str
    model: ModelSpec | None = None
    intrinsic: IntrinsicSpec | None = None
    grid: GridSpec | None = None
    locations_csv: str | None = None
    input: str | None = None
    kappa: int | None = None
    d: int | None = None
    bins: BinSpec | None = None
    template: ModelSpec | None = None
    tol: float = 1e-8
    max_iter: int = 200
    starts: tuple | None = None
    n_max: int | None = None
    drop_ratio: float = DEFAULT_DROP_RATIO
    fitted: tuple | None = None
    true: tuple | None = None

    @classmethod
    def parse(cls, command, raw):
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a JSON object")
        required, optional = _TOP_LEVEL_KEYS[command]
        _check_keys(raw, command, required, optional)
        out = raw["out"]
        if not isinstance(out, str) or not out:
            raise ConfigError(f"out must be a non-empty path, got {out!r}")

        if command == "simulate":
            grid = GridSpec.from_dict(raw["grid"])
            return cls(
                command=command,
                raw=raw,
                out=out,
                model=ModelSpec.from_dict(raw["model"]),
                intrinsic=IntrinsicSpec.from_dict(raw["intrinsic"]),
                grid=grid,
                locations_csv=raw.get("locations_csv"),
            )

        bins = BinSpec.from_dict(raw["bins"]) if "bins" in raw else BinSpec()
        common = {"command": command, "raw": raw, "out": out, "bins": bins}
        input_path = raw["input"]
        if not isinstance(input_path, str) or not input_path:
            raise ConfigError(f"input must be a non-empty path, got {input_path!r}")

        if command == "select-order":
            drop_ratio = float(raw.get("drop_ratio", DEFAULT_DROP_RATIO))
            return cls(
                input=input_path,
                d=_as_int(raw, "d", minimum=0),
                n_max=_as_int(raw, "n_max", minimum=0),
                drop_ratio=drop_ratio,
                **common,
            )

        kappa = _as_int(raw, "kappa", minimum=0)
        d = _as_int(raw, "d", minimum=0)
        if command == "mom":
            return cls(input=input_path, kappa=kappa, d=d, **common)

        if command == "curves":
            return cls(
                input=input_path,
                kappa=kappa,
                d=d,
                fitted=_amplitude_model(raw["fitted"], "fitted"),
                true=(
                    _amplitude_model(raw["true"], "true")
                    if "true" in raw
                    else None
                ),
                **common,
            )

        # fit
        options = raw.get("fit", {})
        allowed = {"family", "shape", "tol", "max_iter", "starts"}
        unknown = set(options) - allowed
        if unknown:
            raise ConfigError(f"unknown fit keys: {sorted(unknown)}")
        starts = None
        if options.get("starts") is not None:
            starts = []
            for pair in options["starts"]:
                if len(pair) != 2:
                    raise ConfigError(
                        f"each start must be [alpha, beta], got {pair!r}"
                    )
                a, b = float(pair[0]), float(pair[1])
                if not 0.0 < a < 1.0 or b <= 0.0:
                    raise ConfigError(f"start ({a}, {b}) out of range")
                starts.append((a, b))
            starts = tuple(starts)
        return cls(
            input=input_path,
            kappa=kappa,
            d=d,
            template=_reference_model(
                {k: options[k] for k in ("family", "shape") if k in options},
                "fit",
            ),
            tol=float(options.get("tol", 1e-8)),
            max_iter=int(options.get("max_iter", 200)),
            starts=starts,
            true=_amplitude_model(raw["true"], "true") if "true" in raw else None,
            **common,
        )


# ---------------------------------------------------------------------------
# Output writers (all deterministic)
# ---------------------------------------------------------------------------


def _write_json(payload, path):
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text + "\n")


def _curve_values(model, bins, kappa, amplitude):
    centers = np.asarray(bins.psi_centers)[:, None]
    lags = np.asarray(bins.lags, dtype=float)[None, :]
    return icf_value(model, centers, lags, kappa, amplitude)


def _write_curves(path, bins, table, fitted, theoretical=None):
    """Long-format plotting table: one row per (distance bin, lag)."""
    header = "psi,h,mom,fitted" + (",theoretical" if theoretical is not None else "")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(header + "\n")
        for i, psi in enumerate(bins.psi_centers):
            for j, lag in enumerate(bins.lags):
                row = [
                    _FLOAT_FMT % psi,
                    str(lag),
                    _FLOAT_FMT % table.estimates[i, j],
                    _FLOAT_FMT % fitted[i, j],
                ]
                if theoretical is not None:
                    row.append(_FLOAT_FMT % theoretical[i, j])
                handle.write(",".join(row) + "\n")


def _processed_table(config) -> MoMTable:
    """Shared front of the analysis commands: read, regress, difference, bin."""
    field = read_field_csv(config.input)
    residual = truncate_harmonics(field, config.kappa)
    return mom_estimate(difference_time(residual, config.d), config.bins)


def run_simulate(config: RunConfig) -> None:
    locations = (
        load_locations_csv(config.locations_csv) if config.locations_csv else None
    )
    field = simulate_irf(config.model, config.intrinsic, config.grid, locations)
    write_field_csv(field, config.out + ".csv")
    meta = {
        "spec": config.model.to_dict(),
        "intrinsic": config.intrinsic.to_dict(),
        "grid": config.grid.to_dict(),
        "seed": config.grid.seed,
        "jitter_used": field.meta["jitter_used"],
        "config": config.raw,
    }
    _write_json(meta, config.out + ".meta.json")


def run_fit(config: RunConfig) -> None:
    table = _processed_table(config)
    result = fit(
        table,
        config.kappa,
        template=config.template,
        starts=config.starts,
        tol=config.tol,
        max_iter=config.max_iter,
    )
    payload = {
        **result.to_dict(),
        "bins": config.bins.to_dict(),
        "counts": table.counts.tolist(),
        "config": config.raw,
    }
    _write_json(payload, config.out + ".json")
    fitted_model = replace(
        config.template, alpha=result.alpha_hat, beta=result.beta_hat
    )
    fitted = _curve_values(fitted_model, config.bins, config.kappa, result.gamma0_hat)
    theoretical = None
    if config.true is not None:
        true_model, gamma0 = config.true
        # The residual moments scale with the square of the generating
        # amplitude, so the reference curve does too.
        theoretical = _curve_values(
            true_model, config.bins, config.kappa, gamma0**2
        )
    _write_curves(config.out + ".curves.csv", config.bins, table, fitted, theoretical)


def run_mom(config: RunConfig) -> None:
    table = _processed_table(config)
    payload = {
        "bins": config.bins.to_dict(),
        "counts": table.counts.tolist(),
        "n_informative": table.n_informative,
        "config": config.raw,
    }
    _write_json(payload, config.out + ".json")
    with open(config.out + ".table.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("psi,h,mom,count\n")
        for i, psi in enumerate(config.bins.psi_centers):
            for j, lag in enumerate(config.bins.lags):
                fh.write(
                    f"{_FLOAT_FMT % psi},{lag},"
                    f"{_FLOAT_FMT % table.estimates[i, j]},{table.counts[i, j]}\n"
                )


def run_select_order(config: RunConfig) -> None:
    field = read_field_csv(config.input)
    report = m_criterion(
        field, config.d, config.n_max, config.bins, config.drop_ratio
    )
    payload = {**report.to_dict(), "config": config.raw}
    _write_json(payload, config.out + ".json")
    with open(config.out + ".csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n,logM\n")
        for n, log_m in zip(report.n_values, report.logM):
            fh.write(f"{n},{_FLOAT_FMT % log_m}\n")


def run_curves(config: RunConfig) -> None:
    table = _processed_table(config)
    fitted_model, amplitude = config.fitted
    fitted = _curve_values(fitted_model, config.bins, config.kappa, amplitude)
    theoretical = None
    if config.true is not None:
        true_model, gamma0 = config.true
        theoretical = _curve_values(true_model, config.bins, config.kappa, gamma0**2)
    _write_curves(config.out + ".curves.csv", config.bins, table, fitted, theoretical)
    payload = {
        "bins": config.bins.to_dict(),
        "columns": ["psi", "h", "mom", "fitted"]
        + (["theoretical"] if theoretical is not None else []),
        "config": config.raw,
    }
    _write_json(payload, config.out + ".json")


_RUNNERS = {
    "simulate": run_simulate,
    "fit": run_fit,
    "mom": run_mom,
    "select-order": run_select_order,
    "curves": run_curves,
}


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------


def _load_config_file(path):
    try:
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config document must be a JSON object")
    return raw


def _apply_overrides(command, raw, args):
    paths = _OVERRIDE_PATHS[command]
    for flag in ("seed", "kappa", "d", "out"):
        value = getattr(args, flag)
        if value is None:
            continue
        if flag not in paths:
            raise ConfigError(f"--{flag} does not apply to {command!r}")
        target = raw
        for key in paths[flag][:-1]:
            node = target.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            target = node
        target[paths[flag][-1]] = value
    return raw


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="sphereirf",
        description=(
            "Simulate, bin, fit, and order-select intrinsic random fields "
            "on the sphere across time."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "draw a field exactly from its joint covariance",
        "fit": "bin residual moments and fit kernel parameters",
        "mom": "bin residual moments and write the table",
        "select-order": "profile the truncation-order criterion M(n)",
        "curves": "export plot-ready moment/model curves at given parameters",
    }
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=helps[name])
        cmd.add_argument("config", help="path to the JSON run configuration")
        cmd.add_argument("--seed", type=int, help="override grid.seed")
        cmd.add_argument("--kappa", type=int, help="override the truncation order")
        cmd.add_argument("--d", type=int, help="override the differencing order")
        cmd.add_argument("--out", help="override the output path prefix")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        raw = _load_config_file(args.config)
        raw = _apply_overrides(args.command, raw, args)
        config = RunConfig.parse(args.command, raw)
        _RUNNERS[args.command](config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
