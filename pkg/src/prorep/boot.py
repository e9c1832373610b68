"""Nonparametric subject-level bootstrap of the full estimation pipeline.

A resample of subjects with replacement is evaluated as a vector of subject
frequency weights (the number of times each subject was drawn).  Every
estimator in the pipeline is weighted, so this is identical to refitting on
the physically resampled panel, including re-deriving the constraint
resolution of every regime from the replicate's own marginals.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import pandas as pd

from .data import PanelDataset
from .glm import GlmError
from .pipeline import Estimate, PipelineConfig, Prepared, estimate, prepare
from .regime import ConstraintInfeasible
from .weights import PositivityViolation

DEFAULT_REPLICATES = 500
MAX_FAILURE_SHARE = 0.10
BAND_LEVELS = (0.025, 0.975)

# replicate failures that are counted rather than propagated
REPLICATE_ERRORS = (GlmError, PositivityViolation, ConstraintInfeasible, np.linalg.LinAlgError)


class TooManyFailures(RuntimeError):
    def __init__(self, failures: int, B: int):
        self.failures = failures
        self.B = B
        super().__init__(f"{failures} of {B} bootstrap replicates failed (limit {MAX_FAILURE_SHARE:.0%})")


def replicate_counts(n: int, seed: int, replicate: int) -> np.ndarray:
    """Draw counts of ``n`` subjects resampled with replacement.

    The stream depends only on ``(seed, replicate)``, so any replicate can be
    regenerated on its own and the result does not depend on scheduling.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replicate),)))
    return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)


def percentile(draws: np.ndarray, p, axis: int = 0) -> np.ndarray:
    """Order-statistic percentile, linear between ranks, at rank ``(B + 1) p``.

    Ranks outside ``[1, B]`` are clamped to the extreme draws.
    """
    return np.quantile(np.asarray(draws, float), p, axis=axis, method="weibull")


@dataclass
class BootstrapResult:
    """Replicate risk curves and percentile bands.

    ``risk`` has shape ``(B, regimes, K)``; failed replicates are ``NaN``
    rows and are excluded from the bands.
    """

    labels: list[str]
    point: np.ndarray
    risk: np.ndarray
    ok: np.ndarray
    seed: int
    errors: dict = field(default_factory=dict)

    @property
    def B(self) -> int:
        return len(self.ok)

    @property
    def failures(self) -> int:
        return int((~self.ok).sum())

    @property
    def K(self) -> int:
        return self.risk.shape[2]

    def contrasts(self) -> list[tuple[str, int, int]]:
        """Ordered pairs ``(name, i, j)`` for the difference ``risk_j - risk_i``."""
        return [(f"{self.labels[j]}-{self.labels[i]}", i, j) for i, j in combinations(range(len(self.labels)), 2)]

    def bands(self) -> pd.DataFrame:
        """Percentile band per regime and interval: ``regime,k,lo,hi``."""
        good = self.risk[self.ok]
        lo, hi = percentile(good, BAND_LEVELS[0]), percentile(good, BAND_LEVELS[1])
        R, K = len(self.labels), self.K
        return pd.DataFrame(
            {
                "regime": np.repeat(self.labels, K),
                "k": np.tile(np.arange(1, K + 1), R),
                "risk": self.point.reshape(-1),
                "lo": lo.reshape(-1),
                "hi": hi.reshape(-1),
            }
        )

    def contrast_bands(self) -> pd.DataFrame:
        """Percentile bands for all pairwise risk differences."""
        good = self.risk[self.ok]
        K = self.K
        frames = []
        for name, i, j in self.contrasts():
            diff = good[:, j] - good[:, i]
            frames.append(
                pd.DataFrame(
                    {
                        "contrast": name,
                        "k": np.arange(1, K + 1),
                        "difference": self.point[j] - self.point[i],
                        "lo": percentile(diff, BAND_LEVELS[0]),
                        "hi": percentile(diff, BAND_LEVELS[1]),
                    }
                )
            )
        if not frames:
            return pd.DataFrame(columns=["contrast", "k", "difference", "lo", "hi"])
        return pd.concat(frames, ignore_index=True)


_WORKER: dict = {}


def _init_worker(prep: Prepared, seed: int):
    _WORKER["prep"] = prep
    _WORKER["seed"] = seed


def _run_replicate(replicate: int):
    prep, seed = _WORKER["prep"], _WORKER["seed"]
    w = replicate_counts(prep.panel.n, seed, replicate)
    try:
        return replicate, estimate(prep, w).risk, None
    except REPLICATE_ERRORS as exc:
        return replicate, None, f"{type(exc).__name__}: {exc}"


def bootstrap(
    panel: PanelDataset | Prepared,
    config: PipelineConfig | None = None,
    B: int = DEFAULT_REPLICATES,
    seed: int = 0,
    *,
    threads: int = 1,
    point: Estimate | None = None,
) -> BootstrapResult:
    """Resample subjects ``B`` times and re-run the full pipeline on each.

    Parameters
    ----------
    panel : PanelDataset or Prepared
        The analysis panel, or an already prepared pipeline (then ``config``
        is ignored).
    config : PipelineConfig
    B : int
        Number of replicates, at least 1.
    seed : int
        Fixing ``(seed, B)`` reproduces the bands bit-exactly.
    threads : int
        Worker processes; results are reduced in replicate order.
    point : Estimate, optional
        Full-sample estimate, computed when not given.

    Raises
    ------
    TooManyFailures
        More than 10% of replicates failed to fit.
    """
    if int(B) < 1:
        raise ValueError("B must be at least 1")
    B = int(B)
    prep = panel if isinstance(panel, Prepared) else prepare(panel, config)
    point = point or estimate(prep)
    R, K = point.risk.shape
    risk = np.full((B, R, K), np.nan)
    ok = np.zeros(B, dtype=bool)
    errors = {}

    if threads > 1 and B > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker, initargs=(prep, seed)) as pool:
            results = list(pool.map(_run_replicate, range(B), chunksize=max(1, B // (4 * threads))))
    else:
        _init_worker(prep, seed)
        try:
            results = [_run_replicate(r) for r in range(B)]
        finally:
            _WORKER.clear()

    for r, curve, err in sorted(results, key=lambda t: t[0]):
        if err is None:
            risk[r], ok[r] = curve, True
        else:
            errors[r] = err
    out = BootstrapResult(list(point.labels), point.risk, risk, ok, int(seed), errors)
    if out.failures > MAX_FAILURE_SHARE * B or out.failures == B:
        raise TooManyFailures(out.failures, B)
    return out
