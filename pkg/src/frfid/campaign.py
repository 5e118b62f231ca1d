"""Simulate -> estimate -> fit -> evaluate, in memory.

Seeds: every random stream is drawn from
``SeedSequence([global_seed, config_index, experiment_index, crc32(role)])``
(see :func:`derive_seed`), so results do not depend on execution order or
on the number of worker processes.
"""
from __future__ import annotations

import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .classical import ExperimentBlocks, FrfEstimate, ari_estimate, h1_estimate, jio_classical, log_estimate
from .config import CLASSICAL_METHODS, CampaignConfig, EstimatorEntry
from .graybox import FitError, FitResult, build_weights, fit_parameters
from .local import local_estimate
from .metrics import bias_report, parameter_bias
from .plant import linearize, simulate_closed_loop
from .sigproc import Multisine, SpectralRecord, TimeRecord, design_multisine, stack_spectral, to_spectral

logger = logging.getLogger(__name__)

MAX_INVALID_FRACTION = 0.5


def derive_seed(global_seed: int, config_index: int, experiment_index: int, role: str) -> int:
    ss = np.random.SeedSequence([int(global_seed), int(config_index), int(experiment_index),
                                 zlib.crc32(role.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


def pmap(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def multisine_for(cfg: CampaignConfig, config_index: int, seed: Optional[int] = None) -> Multisine:
    seed = cfg.seed if seed is None else seed
    spec = cfg.multisine.build(cfg.n_u, derive_seed(seed, config_index, 0, "phase"))
    return design_multisine(spec, cfg.simulation.n_experiments)


def simulate_configuration(cfg: CampaignConfig, config_index: int, q_a,
                           seeds: Optional[Sequence[int]] = None) -> list[tuple[Multisine, list[TimeRecord]]]:
    """Simulate all experiments of one configuration for one or more global seeds.

    Seeds are batched into a single integration run; the result for each
    seed is identical to simulating it alone.
    """
    seeds = [cfg.seed] if seeds is None else list(seeds)
    n_exp = cfg.simulation.n_experiments
    sims = [multisine_for(cfg, config_index, s) for s in seeds]
    noise_seeds = [derive_seed(s, config_index, e, "noise") for s in seeds for e in range(n_exp)]
    sim = cfg.simulation
    recs = simulate_closed_loop(
        cfg.plant.build(), cfg.controller.build(), cfg.disturbances.build(),
        np.concatenate([m.signals for m in sims]), q_a, cfg.multisine.sample_rate,
        cfg.multisine.period_samples, n_periods=sim.n_periods, settle_periods=sim.settle_periods,
        substeps=sim.substeps, noise_seeds=noise_seeds)
    out = []
    for i, (s, ms) in enumerate(zip(seeds, sims)):
        chunk = recs[i * n_exp:(i + 1) * n_exp]
        for e, r in enumerate(chunk):
            r.meta.update({"seed": int(s), "config_index": config_index, "experiment_index": e})
        out.append((ms, chunk))
    return out


def spectral(records: Sequence[TimeRecord], bins) -> SpectralRecord:
    return stack_spectral([to_spectral(r, bins) for r in records])


def truth_estimate(cfg: CampaignConfig, q_a, freqs: np.ndarray) -> FrfEstimate:
    lin = linearize(cfg.plant.build(), q_a)
    return FrfEstimate(freqs, lin.frf(freqs, sample_rate=cfg.multisine.sample_rate), "truth", 0)


def run_estimator(entry: EstimatorEntry, sp: SpectralRecord) -> FrfEstimate:
    n_u = sp.n_u
    exps = list(range(entry.n_e))
    if entry.method in CLASSICAL_METHODS:
        sub = sp.select(exps)
        blocks = ExperimentBlocks.contiguous(entry.n_e, n_u)
        fn = {"H1": h1_estimate, "ARI": ari_estimate, "LOG": log_estimate, "JIO": jio_classical}[entry.method]
        est = fn(sub, blocks)
    else:
        est = local_estimate(sp, entry.method, entry.local_config(), experiments=exps)
    est.notes.append(f"estimator: {est.method_tag}")
    return est.with_tag(entry.label)


def estimate_all(cfg: CampaignConfig, sp: SpectralRecord,
                 entries: Optional[Sequence[EstimatorEntry]] = None) -> dict[str, FrfEstimate]:
    out = {}
    for entry in cfg.estimators if entries is None else entries:
        t0 = time.perf_counter()
        out[entry.label] = run_estimator(entry, sp)
        logger.info("%s: %.2f s", entry.label, time.perf_counter() - t0)
    return out


def bias_weights(cfg: CampaignConfig, estimates: Sequence[FrfEstimate], configs) -> list:
    th0 = cfg.graybox.theta0.build()
    skeleton = cfg.plant.build().with_theta(th0)
    # emphasis rules only: the bias metric must not depend on an estimate's variance
    scheme = replace(cfg.graybox.scheme(), inverse_variance=False)
    return list(build_weights(estimates, skeleton, th0, configs, scheme).weights)


def fit_cell(cfg: CampaignConfig, estimates: Sequence[FrfEstimate], configs, cell_index: int = 0,
             seed: Optional[int] = None) -> FitResult:
    for i, est in enumerate(estimates):
        bad = 1.0 - est.valid.mean()
        if bad > MAX_INVALID_FRACTION:
            raise FitError(f"{est.method_tag}, configuration {i}: {bad:.0%} of lines invalid; fit refused")
    th0 = cfg.graybox.theta0.build()
    skeleton = cfg.plant.build().with_theta(th0)
    weights = build_weights(estimates, skeleton, th0, configs, cfg.graybox.scheme())
    seed = cfg.seed if seed is None else seed
    opts = cfg.graybox.options(derive_seed(seed, 0, cell_index, "fit"), cfg.multisine.sample_rate)
    return fit_parameters(estimates, skeleton, configs, weights, opts, theta0=th0)


@dataclass
class SeedResult:
    """In-memory outcome of one campaign seed."""

    seed: int
    truths: list
    estimates: dict            # label -> list over configurations
    frf_bias: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    param_bias: dict = field(default_factory=dict)


def run_seeds(cfg: CampaignConfig, seeds: Sequence[int], fit_labels: Optional[Sequence[str]] = None,
              entries: Optional[Sequence[EstimatorEntry]] = None) -> list[SeedResult]:
    """Monte-Carlo helper: full pipeline for several seeds without file I/O.

    Simulation of one configuration is batched across all seeds.
    """
    configs = cfg.configurations.draw()
    entries = list(cfg.estimators if entries is None else entries)
    results = [SeedResult(s, [], {e.label: [] for e in entries}) for s in seeds]
    for ci, q in enumerate(configs):
        t0 = time.perf_counter()
        sims = simulate_configuration(cfg, ci, q, seeds)
        logger.info("configuration %d simulated for %d seeds in %.1f s", ci, len(seeds), time.perf_counter() - t0)
        for res, (ms, recs) in zip(results, sims):
            sp = spectral(recs, ms.bins)
            res.truths.append(truth_estimate(cfg, q, sp.freqs))
            for label, est in estimate_all(cfg, sp, entries).items():
                res.estimates[label].append(est)
    theta_true = cfg.plant.build().theta
    names = cfg.graybox.names or theta_true.names()
    for res in results:
        W = bias_weights(cfg, res.truths, configs)
        for label, ests in res.estimates.items():
            res.frf_bias[label] = bias_report(res.truths, ests, W).value
        for k, label in enumerate(fit_labels or []):
            fit = fit_cell(cfg, res.estimates[label], configs, k, res.seed)
            res.fits[label] = fit
            res.param_bias[label] = parameter_bias(theta_true, fit.theta_hat, names)[0]
    return results
