"""Command-line entry point, config parsing, and result persistence.

Configs are flat YAML documents with a `schema_version` field; every
numeric export is CSV so outputs diff bit-exactly.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .economy import EconomyParams, Regime
from .exposures import (
    CdsBook,
    CdsContract,
    ExposureLedger,
    Loan,
    effective_exposures,
    net_loans,
    write_matrix_csv,
)
from .scenarios import (
    ComparisonReport,
    RunResult,
    ScenarioAggregate,
    ScenarioConfig,
    compare_scenarios,
    monte_carlo,
    run_scenario,
)

__all__ = ["parse_config", "write_results", "emit_plot_data", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

OUTPUT_DIR_ENV = "CDSNET_OUT"

_TOP_KEYS = {"schema_version", "regime", "n_banks", "n_firms", "n_households", "steps", "seed"}
_PARAM_KEYS = {f.name for f in fields(EconomyParams)}
_INT_KEYS = {"schema_version", "n_banks", "n_firms", "n_households", "steps", "seed",
             "goods_search", "bank_search"}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value):
    if key == "regime":
        try:
            return Regime(str(value))
        except ValueError as exc:
            raise ConfigError(f"key 'regime': unknown regime {value!r}") from exc
    if key in _INT_KEYS:
        try:
            return int(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"key {key!r}: expected integer, got {value!r}") from exc
    if key == "base_spread" and value in (None, "null", "none"):
        return None
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key {key!r}: expected number, got {value!r}") from exc


def parse_config(path=None, overrides: list[str] | None = None) -> ScenarioConfig:
    """Load a scenario config from YAML and apply `key=value` overrides.

    Missing keys fall back to the paper-scale defaults; unknown keys are
    rejected with the offending key named.
    """
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config parse error in {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping, got {type(loaded).__name__}")
        data.update(loaded)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        data[key.strip()] = yaml.safe_load(value)
    unknown = set(data) - _TOP_KEYS - _PARAM_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    version = data.get("schema_version", 1)
    if int(version) != 1:
        raise ConfigError(f"unsupported schema_version {version}")
    top = {k: _coerce(k, v) for k, v in data.items() if k in _TOP_KEYS and k != "schema_version"}
    param_kwargs = {k: _coerce(k, v) for k, v in data.items() if k in _PARAM_KEYS}
    return ScenarioConfig(params=EconomyParams(**param_kwargs), **top)


def config_tag(cfg: ScenarioConfig) -> str:
    """Deterministic short hash naming all files derived from a config."""
    blob = yaml.safe_dump(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_results(result, output_dir) -> list[Path]:
    """Persist a RunResult, ScenarioAggregate, or ComparisonReport.

    Returns the manifest of files written; reruns with the same config and
    seed produce byte-identical files.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if isinstance(result, RunResult):
        tag = config_tag(result.config)
        steps_path = out / f"run_{tag}_{result.run_index}_steps.csv"
        _write_csv(
            steps_path,
            list(result.reports[0].CSV_FIELDS) if result.reports else
            ["step", "defaults", "cascade_loss", "interbank_volume", "cds_volume",
             "fund_balance", "mean_debtrank"],
            (r.csv_row() for r in result.reports),
        )
        written.append(steps_path)
        summary = {
            "config": result.config.to_dict(),
            "run_index": result.run_index,
            "steps_run": result.steps_run,
            "total_loss": float(result.total_loss),
            "total_defaults": int(result.total_defaults),
            "mean_debtrank": float(np.mean(result.debtrank_profile)),
        }
        summary_path = out / f"run_{tag}_{result.run_index}_summary.yaml"
        summary_path.write_text(yaml.safe_dump(summary, sort_keys=True))
        written.append(summary_path)
    elif isinstance(result, ScenarioAggregate):
        tag = config_tag(result.config)
        edges, counts = result.loss_histogram
        hist_path = out / f"agg_{tag}_loss_hist.csv"
        _write_csv(
            hist_path,
            ["bin_lo", "bin_hi", "count"],
            (
                [repr(float(lo)), repr(float(hi)), int(c)]
                for lo, hi, c in zip(edges[:-1], edges[1:], counts)
            ),
        )
        written.append(hist_path)
        edges, counts = result.cascade_histogram
        casc_path = out / f"agg_{tag}_cascade_hist.csv"
        _write_csv(
            casc_path,
            ["bin_lo", "bin_hi", "count"],
            (
                [repr(float(lo)), repr(float(hi)), int(c)]
                for lo, hi, c in zip(edges[:-1], edges[1:], counts)
            ),
        )
        written.append(casc_path)
        summary = {
            "config": result.config.to_dict(),
            "n_runs": result.n_runs,
            "moments": result.moments(),
            "seeds": f"SeedSequence(({result.config.seed}, run_index)) for run_index < {result.n_runs}",
        }
        summary_path = out / f"agg_{tag}_summary.yaml"
        summary_path.write_text(yaml.safe_dump(summary, sort_keys=True))
        written.append(summary_path)
    elif isinstance(result, ComparisonReport):
        cmp_path = out / "comparison_summary.yaml"
        summary = {
            "regimes": list(result.regimes),
            "moments": result.moments,
            "ordering_pvalues": {
                f"{a}<{b}:{metric}": float(p) for (a, b, metric), p in sorted(result.pvalues.items())
            },
            "dip": {name: {"statistic": float(d), "pvalue": float(p)}
                    for name, (d, p) in result.dip.items()},
        }
        cmp_path.write_text(yaml.safe_dump(summary, sort_keys=True))
        written.append(cmp_path)
        for name, (edges, counts) in result.loss_histograms.items():
            p = out / f"compare_{name}_loss_hist.csv"
            _write_csv(
                p,
                ["bin_lo", "bin_hi", "count"],
                (
                    [repr(float(lo)), repr(float(hi)), int(c)]
                    for lo, hi, c in zip(edges[:-1], edges[1:], counts)
                ),
            )
            written.append(p)
    else:
        raise TypeError(f"cannot persist {type(result).__name__}")
    return written


def emit_plot_data(aggregates: dict[str, ScenarioAggregate], output_dir) -> list[Path]:
    """One CSV per figure panel, series keyed by regime name."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = sorted(aggregates)
    written = []

    def dump(path, header, rows):
        _write_csv(path, header, rows)
        written.append(path)

    rows = []
    for name in names:
        edges, counts = aggregates[name].loss_histogram
        rows += [
            [name, repr(float(lo)), repr(float(hi)), int(c)]
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)
        ]
    dump(out / "panel_loss_hist.csv", ["regime", "bin_lo", "bin_hi", "count"], rows)

    rows = []
    for name in names:
        edges, counts = aggregates[name].cascade_histogram
        rows += [
            [name, int(lo + 0.5), int(c)]
            for lo, c in zip(edges[:-1], counts)
        ]
    dump(out / "panel_cascade_hist.csv", ["regime", "cascade_size", "count"], rows)

    rows = []
    for name in names:
        means = aggregates[name].debtrank.mean(axis=0)
        rows += [[name, b, repr(float(v))] for b, v in enumerate(means)]
    dump(out / "panel_debtrank.csv", ["regime", "bank", "mean_debtrank"], rows)

    rows = []
    for name in names:
        vals = np.sort(aggregates[name].in_degree.ravel())
        rows += [[name, repr(float(v))] for v in vals]
    dump(out / "panel_in_degree.csv", ["regime", "weighted_in_degree"], rows)

    rows = []
    for name in names:
        vals = np.sort(aggregates[name].clustering.ravel())
        rows += [[name, repr(float(v))] for v in vals]
    dump(out / "panel_clustering.csv", ["regime", "clustering"], rows)
    return written


# ---- demo subcommands ------------------------------------------------


def _net_demo(out: Path) -> None:
    """Write the covered- and naked-CDS rewiring examples as CSV matrices."""
    out.mkdir(parents=True, exist_ok=True)
    ledger = ExposureLedger(4, (Loan(0, borrower=1, lender=0, face_value=10.0, rate=0.01, outstanding=10.0),))
    book = CdsBook(4, (CdsContract(0, buyer=0, seller=2, reference_entity=1,
                                   reference_loan=0, notional=10.0, spread=0.01, covered=True),))
    net = effective_exposures(net_loans(ledger), book)
    write_matrix_csv(net.l_eff, out / "demo_covered_rewiring.csv")
    ledger = ExposureLedger(4, (Loan(0, borrower=2, lender=3, face_value=10.0, rate=0.01, outstanding=10.0),))
    book = CdsBook(4, (CdsContract(0, buyer=0, seller=1, reference_entity=2,
                                   reference_loan=0, notional=10.0, spread=0.01, covered=False),))
    net = effective_exposures(net_loans(ledger), book)
    write_matrix_csv(net.l_eff, out / "demo_naked_new_edge.csv")
    print(f"wrote demo matrices under {out}")


def _quote_demo(out: Path, seed: int) -> None:
    """Run a short regulated economy and print the surcharge quotes of the
    first insured loan as CSV."""
    from . import economy as econ

    cfg = ScenarioConfig(regime=Regime.REGULATED_COVERED, n_banks=8, n_firms=30,
                         n_households=200, steps=30, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0)))
    state = econ.init_economy(cfg.n_banks, cfg.n_firms, cfg.n_households,
                              cfg.params, cfg.regime, rng)
    rows = []
    for _ in range(cfg.steps):
        state, _report = econ.step(state)
        if state.ib_loans:
            lid = sorted(state.ib_loans)[0]
            loan = state.ib_loans[lid]
            for q in econ.quote_sellers(state, loan.lender, loan):
                rows.append([state.step_index, q.buyer, q.seller, loan.borrower,
                             repr(q.delta_el), repr(q.tau), repr(q.effective_spread)])
            break
    out.mkdir(parents=True, exist_ok=True)
    path = out / "quotes.csv"
    _write_csv(path, ["step", "buyer", "seller", "reference", "delta_el", "tau", "s_eff"], rows)
    writer = csv.writer(sys.stdout)
    writer.writerow(["step", "buyer", "seller", "reference", "delta_el", "tau", "s_eff"])
    writer.writerows(rows)
    print(f"wrote {path}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdsnet",
        description="Interbank CDS-market simulator with systemic-risk surcharges",
    )
    parser.add_argument("--config", help="YAML scenario config")
    parser.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./out)")
    parser.add_argument("--seed", type=int, help="override the base seed")
    parser.add_argument("--runs", type=int, default=1, help="Monte Carlo runs")
    parser.add_argument("--regime", choices=[r.value for r in Regime], help="override the regime")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="config override (repeatable)")
    quiet = parser.add_mutually_exclusive_group()
    quiet.add_argument("--quiet", action="store_true")
    quiet.add_argument("--verbose", action="store_true")
    parser.add_argument(
        "subcommand",
        choices=["run", "compare", "quote-demo", "net-demo"],
        help="what to do",
    )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out = Path(args.out or os.environ.get(OUTPUT_DIR_ENV, "out"))

    def log(msg):
        if not args.quiet:
            print(msg)

    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.regime is not None:
            overrides.append(f"regime={args.regime}")
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.subcommand == "run":
            if args.runs <= 1:
                result = run_scenario(cfg)
                files = write_results(result, out)
                log(f"run complete: loss={result.total_loss:.3f} defaults={result.total_defaults}")
            else:
                agg = monte_carlo(cfg, args.runs)
                files = write_results(agg, out)
                log(f"{args.runs} runs: mean loss={agg.losses.mean():.3f}")
            for f in files:
                log(f"  wrote {f}")
        elif args.subcommand == "compare":
            aggs = {}
            for regime in Regime:
                rc = ScenarioConfig(
                    regime=regime, n_banks=cfg.n_banks, n_firms=cfg.n_firms,
                    n_households=cfg.n_households, steps=cfg.steps, seed=cfg.seed,
                    params=cfg.params,
                )
                log(f"running {regime.value} x {args.runs} ...")
                aggs[regime.value] = monte_carlo(rc, args.runs)
            report = compare_scenarios(aggs)
            files = write_results(report, out)
            files += emit_plot_data(aggs, out)
            for f in files:
                log(f"  wrote {f}")
        elif args.subcommand == "net-demo":
            _net_demo(out)
        elif args.subcommand == "quote-demo":
            _quote_demo(out, cfg.seed)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 3
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
