"""Benchmark and hyperparameter-sweep drivers shared by the CLI and the tests."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from scmunmix.core import HsiCube, ScmConfig, ScmError
from scmunmix.metrics import aligned_errors, best_permutation, endmember_error
from scmunmix.solver import unmix
from scmunmix.synth import SynthSpec, make_scene
from scmunmix.uncertainty import summarize_uncertainty

ALGORITHMS = ("scm", "ncm")


def worker_count(tasks: int) -> int:
    """Pool size: CPU count, capped by ``SCM_THREADS`` and by the number of tasks."""
    n = os.cpu_count() or 1
    env = os.environ.get("SCM_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            raise ScmError(f"SCM_THREADS must be a positive integer, got {env!r}") from None
        if cap < 1:
            raise ScmError(f"SCM_THREADS must be a positive integer, got {env!r}")
        n = min(n, cap)
    return max(1, min(n, tasks))


def parallel_map(fn, items: list) -> list:
    workers = worker_count(len(items))
    if workers == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# benchmark

@dataclass(frozen=True)
class TrialResult:
    snr_db: float
    trial: int
    algorithm: str
    endmember_error: float
    abundance_error: float
    phase1_iterations: int


@dataclass(frozen=True)
class BenchRow:
    snr_db: float
    algorithm: str
    trials: int
    mean_endmember_error: float
    mean_abundance_error: float
    std_endmember_error: float
    std_abundance_error: float


def _bench_task(args) -> list[TrialResult]:
    spectra, snr, trial, seed, size, blur, algs, overrides = args
    h, w = size
    scene = make_scene(SynthSpec(spectra, h, w, blur, snr, seed))
    out = []
    for alg in algs:
        cfg = ScmConfig.preset(alg, num_endmembers=spectra.shape[0], rng_seed=seed, **overrides)
        # abundances and endmembers come from the first phase alone
        res = unmix(scene.cube, cfg, estimate_covariance=False)
        err = aligned_errors(res.endmembers.means, res.abundances.values,
                             scene.spectra, scene.abundances.values)
        out.append(TrialResult(snr, trial, alg, err.endmember_error, err.abundance_error,
                               res.diagnostics["phase1_iterations"]))
    return out


def bench_trials(spectra, snrs, trials: int, algs=ALGORITHMS, seed: int = 0,
                 size=(40, 40), blur_sigma: float = 2.0, **overrides) -> list[TrialResult]:
    """Every (snr, trial) cube is unmixed by each algorithm; trial t uses seed + t.

    Results are sorted by (snr, algorithm order, trial).
    """
    algs = tuple(algs)
    for a in algs:
        if a not in ALGORITHMS:
            raise ScmError(f"unknown algorithm {a!r}; expected one of {', '.join(ALGORITHMS)}")
    if trials < 1:
        raise ScmError("trials must be >= 1")
    spectra = np.asarray(spectra, dtype=float)
    tasks = [(spectra, float(s), t, seed + t, tuple(size), blur_sigma, algs, overrides)
             for s in snrs for t in range(trials)]
    results = [r for batch in parallel_map(_bench_task, tasks) for r in batch]
    order = {a: i for i, a in enumerate(algs)}
    return sorted(results, key=lambda r: (r.snr_db, order[r.algorithm], r.trial))


def summarize_bench(results: list[TrialResult]) -> list[BenchRow]:
    groups: dict = {}
    for r in results:
        groups.setdefault((r.snr_db, r.algorithm), []).append(r)
    rows = []
    for (snr, alg), rs in groups.items():
        e = np.array([r.endmember_error for r in rs])
        a = np.array([r.abundance_error for r in rs])
        rows.append(BenchRow(snr, alg, len(rs), float(e.mean()), float(a.mean()),
                             float(e.std()), float(a.std())))
    return rows


# --------------------------------------------------------------------------
# rho1 sweep

@dataclass(frozen=True)
class SweepRow:
    rho1_prime: float
    amounts: np.ndarray          # uncertainty amount per truth endmember
    endmember_error: float


def _sweep_task(args) -> SweepRow:
    cube, config, truth, rho = args
    res = unmix(cube, config.with_(rho1_prime=rho))
    perm = best_permutation(res.endmembers.means, truth)
    amount = summarize_uncertainty(res.endmembers).amount
    by_truth = np.empty_like(amount)
    by_truth[perm] = amount
    return SweepRow(rho, by_truth, endmember_error(res.endmembers.means, truth, perm))


def sweep_rho1(cube: HsiCube, config: ScmConfig, truth, rho_values) -> list[SweepRow]:
    """Full unmix per rho1' value; rows follow the input order."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != (config.num_endmembers, cube.bands):
        raise ScmError(f"truth endmembers have shape {truth.shape}, "
                       f"expected {(config.num_endmembers, cube.bands)}")
    rhos = [float(r) for r in rho_values]
    if not rhos:
        raise ScmError("empty rho1 list")
    return parallel_map(_sweep_task, [(cube, config, truth, r) for r in rhos])
