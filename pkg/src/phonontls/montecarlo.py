"""Monte Carlo propagation of measurement uncertainty into derived quantities."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .readout import FitError, FitResult, PhononDistribution

log = logging.getLogger(__name__)

NOISE_MODELS = ("gaussian-from-sigmas",)
FAILURE_FLAG_FRACTION = 0.10


@dataclass(frozen=True)
class ResampleConfig:
    n_iterations: int = 2000
    seed: int = 0
    noise_model: str = "gaussian-from-sigmas"
    threads: int = 1
    bins: int = 40

    def __post_init__(self):
        if self.n_iterations < 2:
            raise ValueError("n_iterations must be >= 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.noise_model not in NOISE_MODELS:
            raise ValueError(f"unknown noise model {self.noise_model!r}; expected one of {NOISE_MODELS}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class UncertaintyReport:
    name: str
    estimate: float
    std: float
    edges: np.ndarray
    counts: np.ndarray
    n_iterations: int
    n_failed: int = 0
    flagged: bool = False
    samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_valid(self) -> int:
        return self.n_iterations - self.n_failed

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": float(self.estimate),
            "std": float(self.std),
            "n_iterations": int(self.n_iterations),
            "n_failed": int(self.n_failed),
            "flagged": bool(self.flagged),
            "histogram": {"edges": [float(e) for e in self.edges], "counts": [int(c) for c in self.counts]},
        }


def reports_to_json(reports, path=None, extra: dict | None = None) -> str:
    if isinstance(reports, UncertaintyReport):
        reports = [reports]
    doc = dict(extra or {})
    doc["reports"] = [r.to_dict() for r in reports]
    text = json.dumps(doc, indent=2)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def iteration_rng(seed: int, i: int) -> np.random.Generator:
    """Generator for iteration ``i``; independent of how iterations are scheduled."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(i,)))


def _histogram(samples: np.ndarray, bins: int):
    lo, hi = float(samples.min()), float(samples.max())
    if lo == hi:
        pad = 1e-12 * max(abs(lo), 1.0)
        return np.histogram(samples, bins=1, range=(lo - pad, hi + pad))[::-1]
    counts, edges = np.histogram(samples, bins=bins)
    return edges, counts


def _report(name, estimate, samples, n_iterations, n_failed, bins) -> UncertaintyReport:
    samples = np.asarray(samples, dtype=float)
    flagged = n_failed > FAILURE_FLAG_FRACTION * n_iterations
    if samples.size == 0:
        return UncertaintyReport(name, estimate, float("nan"), np.array([]), np.array([], dtype=int),
                                 n_iterations, n_failed, True, samples)
    edges, counts = _histogram(samples, bins)
    constant = samples.size < 2 or bool(np.all(samples == samples[0]))
    std = 0.0 if constant else float(samples.std(ddof=1))
    return UncertaintyReport(name, float(estimate), std, edges, counts, n_iterations, n_failed, flagged, samples)


def _map(fn, n, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, range(n)))
    return [fn(i) for i in range(n)]


def perturb_pn(probs, sigmas, rng) -> np.ndarray:
    """One replica: Gaussian noise per level, negatives clamped to 0, renormalised."""
    p = probs + rng.standard_normal(probs.size) * sigmas
    p = np.clip(p, 0.0, None)
    s = p.sum()
    if s <= 0:
        # every level clamped; fall back to the unperturbed distribution
        return probs.copy()
    return p / s


def resample_pn(pn: PhononDistribution, cfg: ResampleConfig | None = None) -> UncertaintyReport:
    cfg = cfg or ResampleConfig()
    probs, sig = pn.probs, pn.sigmas
    if sig is None:
        raise ValueError("distribution has no sigmas")
    levels = np.arange(probs.size)
    estimate = float(levels @ probs)
    if not np.any(sig > 0):
        samples = np.full(cfg.n_iterations, estimate)
    else:
        samples = np.array(
            _map(lambda i: float(levels @ perturb_pn(probs, sig, iteration_rng(cfg.seed, i))),
                 cfg.n_iterations, cfg.threads)
        )
    return _report("nbar", estimate, samples, cfg.n_iterations, 0, cfg.bins)


@dataclass
class FitDataset:
    """Independent variable, measured values and their 1-sigma uncertainties."""

    x: np.ndarray
    y: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.sigmas = np.broadcast_to(np.asarray(self.sigmas, dtype=float), self.y.shape).copy()
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have the same shape")
        if np.any(self.sigmas < 0):
            raise ValueError("sigmas must be >= 0")


def resample_fit(
    dataset: FitDataset,
    fit_fn: Callable[[np.ndarray, np.ndarray], FitResult],
    cfg: ResampleConfig | None = None,
    params: list[str] | None = None,
) -> dict[str, UncertaintyReport]:
    """Refit noisy replicas of ``dataset``; one report per fitted parameter.

    Replicas whose fit raises :class:`FitError` (or returns non-finite values)
    are dropped and counted.
    """
    cfg = cfg or ResampleConfig()
    base = fit_fn(dataset.x, dataset.y)
    names = params or base.names
    noiseless = not np.any(dataset.sigmas > 0)

    def one(i):
        if noiseless:
            return base
        rng = iteration_rng(cfg.seed, i)
        y = dataset.y + rng.standard_normal(dataset.y.size) * dataset.sigmas
        try:
            r = fit_fn(dataset.x, y)
        except (FitError, ValueError, np.linalg.LinAlgError):
            return None
        if not all(np.isfinite(r.params[k]) for k in names):
            return None
        return r

    results = _map(one, cfg.n_iterations, cfg.threads)
    ok = [r for r in results if r is not None]
    n_failed = len(results) - len(ok)
    if n_failed:
        log.warning("%d of %d resampled fits failed", n_failed, cfg.n_iterations)
    return {
        k: _report(k, base.params[k], [r.params[k] for r in ok], cfg.n_iterations, n_failed, cfg.bins)
        for k in names
    }
