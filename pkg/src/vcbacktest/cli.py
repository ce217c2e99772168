"""Command-line entry point.

Every command resolves a :class:`RunConfig` from built-in defaults, an
optional INI file (``--config``) and explicit flags (highest precedence),
then writes its outputs, the resolved ``run_config.ini`` and a
``manifest.json`` into the output directory.  Re-running a command with
``--config <out>/run_config.ini`` reproduces its outputs byte for byte.

Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .store import DataError, EntityStore, export_stats, load_export

logger = logging.getLogger("vcbacktest")

OUT_ENV = "VCBACKTEST_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"out": "", "seed": "0", "threads": "1", "data": "", "snapshot": "2022-06-14", "as_of": "2022-01-01"},
    "universe": {"founded_after": "2000-01-01", "dead_after": "2016-01-01", "jobs_after": "2017-01-01",
                 "exit_mode": "first"},
    "synth": {"n_companies": "5000", "signal_strength": "1.0", "positive_rate": "0.06",
              "signal_scale": "6.0"},
    "model": {"embedding_dim": "8", "hidden_sizes": "128,64", "dropout_rate": "0.2",
              "learning_rate": "0.001", "epochs": "30", "batch_size": "128", "positive_class_weight": "auto"},
    "backtest": {"start": "2016-01-01", "end": "2022-01-01", "retrain_interval_months": "3",
                 "entry_mode": "earlybird", "nmf_k": "30", "nmf_max_iters": "200"},
    "portfolio": {"capacity": "30", "monthly_top_k": "3", "threshold_base": "0.5", "threshold_slope": "0.05",
                  "reference_size": "", "longtime_days": "730", "exit_mode": "last", "compounding": "false",
                  "predictions": ""},
    "cv": {"years": "2016-2021", "threshold": "0.5"},
    "ranking": {"latent_dim": "8", "ae_epochs": "200", "ae_learning_rate": "0.001", "expert_size": "10",
                "founder_weights": "1,3,0.5,0.5", "top_n": "30", "years": "2016-2021",
                "max_entry_round": "series_e"},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


@dataclass
class RunConfig:
    """Merged key-value view of every module config, one INI section per module."""

    values: dict[str, dict[str, str]]
    command: str = ""

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def int(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def float(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def bool(self, section: str, key: str) -> bool:
        v = self.get(section, key).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"[{section}] {key}: not a boolean: {v!r}")

    def date(self, section: str, key: str) -> dt.date:
        try:
            return dt.date.fromisoformat(self.get(section, key))
        except ValueError:
            raise UsageError(f"[{section}] {key}: not an ISO date: {self.get(section, key)!r}") from None

    def years(self, section: str, key: str) -> list[int]:
        text = self.get(section, key)
        if "-" in text:
            lo, hi = (int(x) for x in text.split("-"))
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",") if x.strip()]

    def write(self, path: Path) -> Path:
        cp = configparser.ConfigParser(interpolation=None)
        for section in sorted(self.values):
            cp[section] = dict(sorted(self.values[section].items()))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            cp.write(fh)
        return path


def load_run_config(path: Optional[str], overrides: dict[tuple[str, str], Optional[str]]) -> RunConfig:
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path:
        cp = configparser.ConfigParser(interpolation=None)
        if not cp.read(path, encoding="utf-8"):
            raise UsageError(f"cannot read config file {path}")
        for section in cp.sections():
            if section not in values:
                raise UsageError(f"config {path}: unknown section [{section}]")
            for key, val in cp[section].items():
                if key not in values[section]:
                    raise UsageError(f"config {path}: unknown key {key!r} in [{section}]")
                values[section][key] = val
    for (section, key), val in overrides.items():
        if val is not None:
            values[section][key] = str(val)
    return RunConfig(values)


# -- config -> module configs ---------------------------------------------------


def universe_config(rc: RunConfig):
    from .universe import UniverseConfig
    return UniverseConfig(founded_after=rc.date("universe", "founded_after"),
                          dead_after=rc.date("universe", "dead_after"),
                          jobs_after=rc.date("universe", "jobs_after"))


def classifier_config(rc: RunConfig):
    from .model import ClassifierConfig
    pcw = rc.get("model", "positive_class_weight")
    return ClassifierConfig(
        embedding_dim_per_categorical=rc.int("model", "embedding_dim"),
        hidden_sizes=tuple(int(h) for h in rc.get("model", "hidden_sizes").split(",") if h.strip()),
        dropout_rate=rc.float("model", "dropout_rate"), learning_rate=rc.float("model", "learning_rate"),
        epochs=rc.int("model", "epochs"), batch_size=rc.int("model", "batch_size"),
        positive_class_weight=pcw if pcw == "auto" else float(pcw), seed=rc.int("run", "seed"),
    )


def backtest_config(rc: RunConfig):
    from .backtest import BacktestConfig
    return BacktestConfig(
        start=rc.date("backtest", "start"), end=rc.date("backtest", "end"),
        retrain_interval_months=rc.int("backtest", "retrain_interval_months"),
        entry_mode=rc.get("backtest", "entry_mode"),
        threshold_base=rc.float("portfolio", "threshold_base"),
        threshold_slope=rc.float("portfolio", "threshold_slope"), seed=rc.int("run", "seed"),
        nmf_k=rc.int("backtest", "nmf_k"), nmf_max_iters=rc.int("backtest", "nmf_max_iters"),
    )


def portfolio_config(rc: RunConfig):
    from .portfolio import PortfolioConfig
    ref = rc.get("portfolio", "reference_size")
    return PortfolioConfig(
        start=rc.date("backtest", "start"), end=rc.date("backtest", "end"),
        capacity=rc.int("portfolio", "capacity"), monthly_top_k=rc.int("portfolio", "monthly_top_k"),
        threshold_base=rc.float("portfolio", "threshold_base"),
        threshold_slope=rc.float("portfolio", "threshold_slope"),
        reference_size=int(ref) if ref else None, longtime_days=rc.int("portfolio", "longtime_days"),
        exit_mode=rc.get("portfolio", "exit_mode"), compounding=rc.bool("portfolio", "compounding"),
    )


# -- helpers --------------------------------------------------------------------


def _out_dir(rc: RunConfig) -> Path:
    out = Path(rc.get("run", "out") or os.environ.get(OUT_ENV) or "vcbacktest_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_dir(rc: RunConfig, out: Path) -> Path:
    return Path(rc.get("run", "data") or out / "export")


def _load(rc: RunConfig, out: Path) -> EntityStore:
    return load_export(_data_dir(rc, out), rc.date("run", "snapshot"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _finish(rc: RunConfig, out: Path, outputs: Sequence[Path]) -> None:
    cfg_path = rc.write(out / "run_config.ini")
    files = {}
    for p in list(outputs) + [cfg_path]:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.iterdir()):
                files[str(f.relative_to(out)) if f.is_relative_to(out) else str(f)] = _sha256(f)
        else:
            files[str(p.relative_to(out)) if p.is_relative_to(out) else str(p)] = _sha256(p)
    manifest = {"command": rc.command, "version": __version__, "files": files}
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name in files:
        logger.info("wrote %s", name)


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


# -- commands -------------------------------------------------------------------


def cmd_synth(rc: RunConfig, out: Path) -> list[Path]:
    from .synth import SynthConfig, generate_synthetic
    cfg = SynthConfig(n_companies=rc.int("synth", "n_companies"), seed=rc.int("run", "seed"),
                      signal_strength=rc.float("synth", "signal_strength"),
                      positive_rate=rc.float("synth", "positive_rate"),
                      signal_scale=rc.float("synth", "signal_scale"),
                      snapshot_date=rc.date("run", "snapshot"))
    target = _data_dir(rc, out)
    generate_synthetic(cfg, target)
    return [target]


def cmd_ingest(rc: RunConfig, out: Path) -> list[Path]:
    store = _load(rc, out)
    stats = export_stats(store)
    p1 = _write_rows(out / "ingest_stats.csv", ["table", "rows"], sorted(stats.items()))
    p2 = _write_rows(out / "quarantine.csv", ["table", "rejected"], sorted(store.quarantine.items()))
    return [p1, p2]


def cmd_label(rc: RunConfig, out: Path) -> list[Path]:
    from .universe import build_dataset_asof, label_snapshot, write_labels
    ucfg = universe_config(rc)
    mode = rc.get("universe", "exit_mode")
    as_of = None if rc.get("run", "as_of") == "snapshot" else rc.date("run", "as_of")
    store = _load(rc, out)
    if as_of is None:
        ds = label_snapshot(store, ucfg, mode=mode)
    else:
        ds = build_dataset_asof(store, ucfg, as_of, mode=mode)
    return [write_labels(ds, out / "labels.csv")]


def cmd_train(rc: RunConfig, out: Path) -> list[Path]:
    from .features import write_feature_matrix
    from .model import write_loss_curve
    from .pipeline import fit_on_dataset, training_rows
    from .universe import build_dataset_asof
    store = _load(rc, out)
    as_of = rc.date("run", "as_of")
    ds = build_dataset_asof(store, universe_config(rc), as_of)
    if ds.n_pos == 0 or ds.n_neg == 0:
        raise DataError(f"training set at {as_of} is single-class ({ds.n_pos} pos, {ds.n_neg} neg)")
    model = fit_on_dataset(store, ds, clf_config=classifier_config(rc), nmf_k=rc.int("backtest", "nmf_k"),
                           nmf_max_iters=rc.int("backtest", "nmf_max_iters"), seed=rc.int("run", "seed"))
    model_path = out / "model.npz"
    model.save(model_path)
    rows, dates = training_rows(store, ds)
    vectors = model.vectors(rows, dates, ds.uuids)
    return [model_path, write_loss_curve(model.classifier, out / "loss_curve.csv"),
            write_feature_matrix(model.schema, vectors, out / "features.csv")]


def cmd_backtest(rc: RunConfig, out: Path) -> list[Path]:
    from .backtest import run_walkforward, write_predictions
    store = _load(rc, out)
    table = run_walkforward(store, universe_config(rc), backtest_config(rc), classifier_config(rc),
                            threads=rc.int("run", "threads"))
    return [write_predictions(table, out / "predictions.csv")]


def cmd_simulate(rc: RunConfig, out: Path) -> list[Path]:
    from .backtest import read_predictions
    from .portfolio import compute_pnl, simulate_fund, write_ledger, write_pnl
    pred_path = Path(rc.get("portfolio", "predictions") or out / "predictions.csv")
    if not pred_path.is_file():
        raise DataError(f"prediction table not found: {pred_path}")
    table = read_predictions(pred_path)
    store = _load(rc, out)
    pcfg = portfolio_config(rc)
    ledger = simulate_fund(table.records, store, pcfg, universe_config(rc))
    pnl = compute_pnl(ledger, store, pcfg)
    logger.info("ledger: %d positions, final growth multiple %s", len(ledger), pnl.final_growth_multiple)
    return [write_ledger(ledger, out / "ledger.csv"), write_pnl(pnl, out / "pnl.csv")]


def cmd_cv(rc: RunConfig, out: Path) -> list[Path]:
    from .metrics import time_series_cv, write_cv_report
    store = _load(rc, out)
    reports, mean = time_series_cv(
        store, universe_config(rc), rc.years("cv", "years"), threshold=rc.float("cv", "threshold"),
        clf_config=classifier_config(rc), nmf_k=rc.int("backtest", "nmf_k"),
        nmf_max_iters=rc.int("backtest", "nmf_max_iters"), seed=rc.int("run", "seed"),
        entry_mode=rc.get("backtest", "entry_mode"))
    return [write_cv_report(reports, mean, out / "cv_report.csv")]


def cmd_rank_investors(rc: RunConfig, out: Path) -> list[Path]:
    from .ranking import AutoencoderConfig, default_expert_set, rank_investors, write_investor_scores
    store = _load(rc, out)
    latent = rc.int("ranking", "latent_dim")
    cfg = AutoencoderConfig(latent_dim=latent, epochs=rc.int("ranking", "ae_epochs"),
                            learning_rate=rc.float("ranking", "ae_learning_rate"), seed=rc.int("run", "seed"))
    as_of = rc.date("run", "as_of")
    ucfg = universe_config(rc)
    experts = default_expert_set(store, as_of, ucfg, rc.int("ranking", "expert_size"))
    scores = rank_investors(store, as_of, latent_dim=latent, cfg=cfg, experts=experts, ucfg=ucfg)
    return [write_investor_scores(scores, out / "investor_scores.csv")]


def cmd_rank_founders(rc: RunConfig, out: Path) -> list[Path]:
    from .ranking import score_founders, write_founder_scores
    store = _load(rc, out)
    weights = tuple(float(w) for w in rc.get("ranking", "founder_weights").split(","))
    if len(weights) != 4:
        raise UsageError("founder_weights needs four comma-separated numbers")
    scores = score_founders(store, rc.date("run", "as_of"), weights, universe_config(rc))
    return [write_founder_scores(scores, out / "founder_scores.csv")]


def cmd_recommend_unicorns(rc: RunConfig, out: Path) -> list[Path]:
    from .ranking import (
        UnicornPortfolioConfig, recommend_unicorns, simulate_unicorn_portfolio, write_recommendations,
        write_unicorn_ledger,
    )
    store = _load(rc, out)
    ucfg = universe_config(rc)
    years = rc.years("ranking", "years")
    top_n = rc.int("ranking", "top_n")
    recs = {y: recommend_unicorns(store, dt.date(y, 1, 1), ucfg, top_n) for y in years}
    pcfg = UnicornPortfolioConfig(start=dt.date(years[0], 1, 1), end=dt.date(years[-1] + 1, 1, 1),
                                  max_entry_round=rc.get("ranking", "max_entry_round"))
    ledger = simulate_unicorn_portfolio(store, recs, pcfg)
    return [write_recommendations(recs, out / "unicorn_recommendations.csv"),
            write_unicorn_ledger(ledger, out / "unicorn_ledger.csv")]


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic export"),
    "ingest": (cmd_ingest, "load and validate an export, write row counts"),
    "label": (cmd_label, "emit the labeled dataset at --as-of (or 'snapshot')"),
    "train": (cmd_train, "fit one model on data known at --as-of"),
    "backtest": (cmd_backtest, "walk-forward prediction table"),
    "simulate": (cmd_simulate, "fund ledger and PnL from a prediction table"),
    "cv": (cmd_cv, "yearly time-series cross-validation"),
    "rank-investors": (cmd_rank_investors, "autoencoder investor ranking"),
    "rank-founders": (cmd_rank_founders, "heuristic founder ranking"),
    "recommend-unicorns": (cmd_recommend_unicorns, "yearly unicorn recommendations and their portfolio"),
}

# flag dest -> (section, key)
FLAG_KEYS = {
    "out": ("run", "out"), "seed": ("run", "seed"), "threads": ("run", "threads"), "data": ("run", "data"),
    "snapshot": ("run", "snapshot"), "as_of": ("run", "as_of"),
    "n": ("synth", "n_companies"), "signal": ("synth", "signal_strength"),
    "positive_rate": ("synth", "positive_rate"),
    "start": ("backtest", "start"), "end": ("backtest", "end"), "entry_mode": ("backtest", "entry_mode"),
    "epochs": ("model", "epochs"),
    "exit_mode": ("portfolio", "exit_mode"), "predictions": ("portfolio", "predictions"),
    "compounding": ("portfolio", "compounding"),
    "years": ("cv", "years"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with run settings (flags override it)")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./vcbacktest_out)")
    common.add_argument("--data", help="export directory (default <out>/export)")
    common.add_argument("--seed", type=int, help="run seed; all randomness derives from it")
    common.add_argument("--threads", type=int, help="worker processes for the backtest (default 1)")
    common.add_argument("--snapshot", help="export snapshot date")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config value")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="vcbacktest", description="Venture backtesting pipeline.")
    parser.add_argument("--version", action="version", version=f"vcbacktest {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "synth":
            p.add_argument("--n", type=int, help="number of companies")
            p.add_argument("--signal", type=float, help="planted signal strength in [0, 1]")
            p.add_argument("--positive-rate", type=float)
        if name in ("label", "train", "rank-investors", "rank-founders"):
            p.add_argument("--as-of", help="cutoff date (label also accepts 'snapshot')")
        if name in ("backtest", "simulate", "cv"):
            p.add_argument("--entry-mode", choices=["earlybird", "any"])
        if name in ("backtest", "simulate"):
            p.add_argument("--start")
            p.add_argument("--end")
        if name in ("backtest", "train", "cv"):
            p.add_argument("--epochs", type=int)
        if name in ("simulate", "label"):
            p.add_argument("--exit-mode", choices=["first", "last"])
        if name == "simulate":
            p.add_argument("--predictions", help="prediction table (default <out>/predictions.csv)")
            p.add_argument("--compounding", choices=["true", "false"])
        if name in ("cv", "recommend-unicorns"):
            p.add_argument("--years", help="year span like 2016-2021")
    return parser


def _overrides(args) -> dict[tuple[str, str], Optional[str]]:
    out = {}
    for dest, key in FLAG_KEYS.items():
        if hasattr(args, dest):
            val = getattr(args, dest)
            if dest == "exit_mode" and val is not None and args.command == "label":
                key = ("universe", "exit_mode")
            if dest == "years" and val is not None and args.command == "recommend-unicorns":
                key = ("ranking", "years")
            out[key] = None if val is None else str(val)
    for item in args.set:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        lhs, val = item.split("=", 1)
        section, key = lhs.split(".", 1)
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise UsageError(f"--set: unknown setting {lhs!r}")
        out[(section, key)] = val
    return out


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        rc = load_run_config(args.config, _overrides(args))
        rc.command = args.command
        out = _out_dir(rc)
        rc.values["run"]["out"] = str(out)
        func = COMMANDS[args.command][0]
        outputs = func(rc, out)
        _finish(rc, out, outputs)
        return EXIT_OK
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # bad config values surface as usage errors
        print(f"invalid setting: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
