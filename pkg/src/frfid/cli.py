"""Command line entry point: ``frfid {simulate,estimate,fit,report,all}``.

Output tree under ``--out``::

    config.json                       resolved campaign config
    data/configurations.json          arm-side configurations q_a
    data/cfgNN/expMM.csv (+ .json)    time records
    data/cfgNN/truth.json             linearized (ZOH) truth FRF
    estimates/cfgNN/<cell>.json       FRF estimates per estimator cell
    fits/<cell>.json                  gray-box fits
    report/...                        bias tables, bias.json, FRF curves
    summary.json                      per-stage failures
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .campaign import bias_weights, estimate_all, fit_cell, pmap, simulate_configuration, spectral, \
    truth_estimate
from .config import CLASSICAL_METHODS, LOCAL_METHODS, CampaignConfig, ConfigError, default_config
from .graybox import FitError
from .metrics import bias_report, format_bias_table, parameter_bias
from .plant import PlantError

logger = logging.getLogger("frfid")

METHOD_ORDER = CLASSICAL_METHODS + LOCAL_METHODS


def _cfg_dir(root: Path, kind: str, ci: int) -> Path:
    return root / kind / f"cfg{ci:02d}"


def _load_config(args) -> CampaignConfig:
    out = Path(args.out)
    if args.config:
        cfg = CampaignConfig.load(args.config)
    elif (out / "config.json").exists():
        cfg = CampaignConfig.load(out / "config.json")
    else:
        cfg = default_config()
    if args.seed is not None:
        cfg.seed = int(args.seed)
        cfg.validate()
    return cfg


def _read_summary(out: Path) -> dict:
    p = out / "summary.json"
    return io.load_json(p) if p.exists() else {}


def _write_summary(out: Path, stage: str, failures: list) -> None:
    s = _read_summary(out)
    s[stage] = {"failures": failures, "ok": not failures}
    io.dump_json(out / "summary.json", s)


def _configs(out: Path) -> list:
    return [np.asarray(q, dtype=float) for q in io.load_json(out / "data" / "configurations.json")["q_a"]]


def _simulate_job(job):
    cfg, ci, q, out = job
    t0 = time.perf_counter()
    try:
        ms, recs = simulate_configuration(cfg, ci, q)[0]
    except (PlantError, ValueError) as exc:
        return ci, f"{type(exc).__name__}: {exc}"
    d = _cfg_dir(out, "data", ci)
    for e, rec in enumerate(recs):
        io.write_time_record(d / f"exp{e:02d}.csv", rec, ms.bins)
    io.write_frf(d / "truth.json", truth_estimate(cfg, q, ms.freqs))
    logger.info("configuration %d simulated in %.1f s", ci, time.perf_counter() - t0)
    return ci, None


def run_simulate(cfg: CampaignConfig, out: Path, jobs: int = 1) -> list:
    out.mkdir(parents=True, exist_ok=True)
    io.atomic_write_text(out / "config.json", cfg.dumps())
    configs = cfg.configurations.draw()
    io.dump_json(out / "data" / "configurations.json", {"q_a": [q.tolist() for q in configs]})
    res = pmap(_simulate_job, [(cfg, ci, q, out) for ci, q in enumerate(configs)], jobs)
    failures = [{"configuration": ci, "error": err} for ci, err in res if err]
    for f in failures:
        logger.error("configuration %d failed: %s", f["configuration"], f["error"])
    _write_summary(out, "simulate", failures)
    return failures


def _load_records(d: Path):
    recs, bins = [], None
    for p in sorted(d.glob("exp*.csv")):
        rec, b = io.read_time_record(p)
        recs.append(rec)
        bins = b if bins is None else bins
    return recs, bins


def _estimate_job(job):
    cfg, ci, out = job
    d = _cfg_dir(out, "data", ci)
    if not (d / "truth.json").exists():
        return [{"configuration": ci, "cell": "*", "error": "no simulation data"}]
    recs, bins = _load_records(d)
    if bins is None:
        return [{"configuration": ci, "cell": "*", "error": "excited bins missing from sidecars"}]
    sp = spectral(recs, bins)
    failures = []
    for entry in cfg.estimators:
        try:
            est = estimate_all(cfg, sp, [entry])[entry.label]
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            failures.append({"configuration": ci, "cell": entry.label, "error": str(exc)})
            continue
        io.write_frf(_cfg_dir(out, "estimates", ci) / f"{entry.label}.json", est)
    return failures


def run_estimate(cfg: CampaignConfig, out: Path, jobs: int = 1) -> list:
    n = len(_configs(out))
    res = pmap(_estimate_job, [(cfg, ci, out) for ci in range(n)], jobs)
    failures = [f for r in res for f in r]
    _write_summary(out, "estimate", failures)
    return failures


def run_fit(cfg: CampaignConfig, out: Path, jobs: int = 1) -> list:
    configs = _configs(out)
    cells = [(k, e) for k, e in enumerate(cfg.estimators) if e.fit]
    failures = []
    for k, entry in cells:
        t0 = time.perf_counter()
        try:
            ests = [io.read_frf(_cfg_dir(out, "estimates", ci) / f"{entry.label}.json")
                    for ci in range(len(configs))]
            fit = fit_cell(cfg, ests, configs, k)
        except (OSError, FitError, PlantError, ValueError) as exc:
            failures.append({"cell": entry.label, "error": str(exc)})
            logger.error("fit %s failed: %s", entry.label, exc)
            continue
        theta_true = cfg.plant.build().theta
        b, per = parameter_bias(theta_true, fit.theta_hat, fit.names)
        io.write_fit(out / "fits" / f"{entry.label}.json", fit, cfg.graybox.theta0.build(),
                     {"cell": entry.label, "n_e": entry.n_e, "method": entry.method, "param_bias": b,
                      "param_bias_per": dict(zip(fit.names, per.tolist()))})
        logger.info("fit %s: cost %.4g, mean parameter bias %.2f%% (%.1f s)", entry.label, fit.cost, 100 * b,
                    time.perf_counter() - t0)
    _write_summary(out, "fit", failures)
    return failures


def _curves(out: Path, ci: int, truth, ests: dict) -> None:
    labels = list(ests)
    for i in range(truth.n_y):
        for j in range(truth.n_u):
            head = ["freq_hz", "abs_truth"] + [f"abs_{l}" for l in labels] + ["arg_truth"] + \
                   [f"arg_{l}" for l in labels]
            cols = [truth.freqs_hz, np.abs(truth.G[:, i, j])]
            cols += [np.where(ests[l].valid, np.abs(ests[l].G[:, i, j]), np.nan) for l in labels]
            cols += [np.angle(truth.G[:, i, j])]
            cols += [np.where(ests[l].valid, np.angle(ests[l].G[:, i, j]), np.nan) for l in labels]
            rows = np.column_stack(cols)
            text = ",".join(head) + "\n" + "".join(",".join(repr(float(v)) for v in r) + "\n" for r in rows)
            io.atomic_write_text(out / "report" / "curves" / f"cfg{ci:02d}_G{i + 1}{j + 1}.csv", text)


def run_report(cfg: CampaignConfig, out: Path, jobs: int = 1) -> list:
    configs = _configs(out)
    failures, truths, cols = [], [], {}
    ok_cfg = [ci for ci in range(len(configs)) if (_cfg_dir(out, "data", ci) / "truth.json").exists()]
    for ci in ok_cfg:
        truths.append(io.read_frf(_cfg_dir(out, "data", ci) / "truth.json"))
    W = bias_weights(cfg, truths, [configs[ci] for ci in ok_cfg]) if truths else []
    bias = {}
    for entry in cfg.estimators:
        paths = [_cfg_dir(out, "estimates", ci) / f"{entry.label}.json" for ci in ok_cfg]
        if not paths or not all(p.exists() for p in paths):
            failures.append({"cell": entry.label, "error": "estimates missing"})
            continue
        ests = [io.read_frf(p) for p in paths]
        cols[entry.label] = ests
        rep = bias_report(truths, ests, W)
        bias[entry.label] = {"method": entry.method, "n_e": entry.n_e, "bias": rep.value,
                             "per_config": rep.per_config.tolist(), "lines_used": rep.lines_used.tolist()}
    methods = [m for m in METHOD_ORDER if any(v["method"] == m for v in bias.values())]
    ne_vals = sorted({v["n_e"] for v in bias.values()}, reverse=True)
    rows = []
    for n in ne_vals:
        vals = {v["method"]: v["bias"] for v in bias.values() if v["n_e"] == n}
        M = n // cfg.n_u if n % cfg.n_u == 0 else None
        rows.append((f"{n} (M={M})" if M else str(n), vals))
    table1 = "Weighted FRF amplitude bias, mean over configurations\n" + format_bias_table(rows, methods)
    io.atomic_write_text(out / "report" / "table_frf_bias.txt", table1)

    fit_rows = {}
    for entry in cfg.estimators:
        p = out / "fits" / f"{entry.label}.json"
        if entry.fit:
            if p.exists():
                fit_rows[entry.label] = io.load_json(p)["param_bias"]
            else:
                failures.append({"cell": entry.label, "error": "fit missing"})
    if fit_rows:
        head = "Mean relative parameter bias (%)\n"
        width = max(len(k) for k in fit_rows)
        table2 = head + "".join(f"{k.ljust(width)}  {100 * v:8.3f}\n" for k, v in fit_rows.items())
        io.atomic_write_text(out / "report" / "table_param_bias.txt", table2)
    io.dump_json(out / "report" / "bias.json", {"frf_bias": bias, "param_bias": fit_rows})
    for k, ci in enumerate(ok_cfg):
        _curves(out, ci, truths[k], {l: e[k] for l, e in cols.items()})
    _write_summary(out, "report", failures)
    return failures


STAGES = {"simulate": run_simulate, "estimate": run_estimate, "fit": run_fit, "report": run_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frfid", description="Closed-loop MIMO FRF estimation and gray-box "
                                                          "stiffness identification on a simulated arm.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["all"]:
        s = sub.add_parser(name)
        s.add_argument("--config", help="campaign config (JSON); default: <out>/config.json or built-in")
        s.add_argument("--out", default="frfid_out", help="output directory")
        s.add_argument("--jobs", type=int, default=1, help="worker processes across configurations")
        s.add_argument("--seed", type=int, help="override the global seed")
        s.add_argument("-v", "--verbose", action="store_true")
    d = sub.add_parser("default-config", help="print the built-in campaign config")
    d.add_argument("--seed", type=int, default=0)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(default_config(args.seed).dumps())
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
    except (ConfigError, OSError) as exc:
        print(f"frfid: config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    stages = list(STAGES) if args.command == "all" else [args.command]
    failed = False
    for stage in stages:
        t0 = time.perf_counter()
        try:
            failures = STAGES[stage](cfg, out, max(1, args.jobs))
        except (OSError, ValueError) as exc:
            print(f"frfid: {stage} failed: {exc}", file=sys.stderr)
            return 1
        logger.info("%s finished in %.1f s with %d failure(s)", stage, time.perf_counter() - t0, len(failures))
        failed |= bool(failures)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
