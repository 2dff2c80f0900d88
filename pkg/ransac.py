"""
Outlier rejection for the reflective fundamental matrix: seeded minimal
samples of six pairs, scored by the symmetric epipolar distance g(F).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from eight_point import CorrespondenceSet, solve_constrained_fundamental
from errors import (
    DegenerateCloud,
    DegenerateConfiguration,
    DegenerateEpipolarLine,
    InsufficientInliers,
    NoModelFound,
    TooFewPairs,
)
from geometry import ReflectiveFundamental
from schemas import RansacConfig

logger = logging.getLogger(__name__)

LINE_EPS = 1e-300


# ============================================
# EPIPOLAR DISTANCE
# ============================================
def _as_matrix(F) -> np.ndarray:
    return F.matrix if isinstance(F, ReflectiveFundamental) else np.asarray(F, dtype=float)


def epipolar_distances(F, real, mirror) -> np.ndarray:
    """
    Vectorised g per pair: dist(mirror, F real) + dist(real, F^T mirror).
    Pairs whose epipolar line has no direction get +inf.
    """
    F = _as_matrix(F)
    real = np.asarray(real, dtype=float).reshape(-1, 2)
    mirror = np.asarray(mirror, dtype=float).reshape(-1, 2)
    x = np.hstack([real, np.ones((len(real), 1))])
    xp = np.hstack([mirror, np.ones((len(mirror), 1))])

    line_mirror = x @ F.T
    line_real = xp @ F
    norm_mirror = np.hypot(line_mirror[:, 0], line_mirror[:, 1])
    norm_real = np.hypot(line_real[:, 0], line_real[:, 1])
    degenerate = (norm_mirror <= LINE_EPS) | (norm_real <= LINE_EPS)

    with np.errstate(divide="ignore", invalid="ignore"):
        g = (
            np.abs(np.sum(xp * line_mirror, axis=1)) / norm_mirror
            + np.abs(np.sum(x * line_real, axis=1)) / norm_real
        )
    return np.where(degenerate, np.inf, g)


def epipolar_distance_g(F, x, x_mirror) -> float:
    """g(F) for a single pair, in pixels."""
    g = epipolar_distances(F, x, x_mirror)
    if not np.isfinite(g[0]):
        raise DegenerateEpipolarLine("epipolar line has zero direction for this pair")
    return float(g[0])


# ============================================
# RANSAC
# ============================================
@dataclass(frozen=True)
class Hypothesis:
    iteration: int
    fundamental: ReflectiveFundamental
    inliers: np.ndarray
    mean_distance: float

    @property
    def count(self) -> int:
        return int(self.inliers.size)


@dataclass(frozen=True)
class RansacResult:
    fundamental: ReflectiveFundamental
    minimal_fundamental: ReflectiveFundamental
    inliers: np.ndarray
    distances: np.ndarray
    best_iteration: int
    threshold: float
    refit_accepted: bool
    minimal_mean_distance: float = 0.0

    @property
    def mean_inlier_distance(self) -> float:
        """Mean final-model g over the inliers, skipping pairs with a degenerate line."""
        g = self.distances[self.inliers]
        g = g[np.isfinite(g)]
        return float(np.mean(g)) if g.size else self.minimal_mean_distance


def sample_indices(pair_count: int, cfg: RansacConfig, iteration: int) -> np.ndarray:
    """Per-iteration stream seeded from (rng_seed, iteration)."""
    rng = np.random.default_rng([cfg.rng_seed, iteration])
    return rng.choice(pair_count, size=cfg.sample_size, replace=False)


def _hypothesis(corr: CorrespondenceSet, cfg: RansacConfig, iteration: int) -> Optional[Hypothesis]:
    sample = corr.subset(sample_indices(len(corr), cfg, iteration))
    try:
        F = solve_constrained_fundamental(sample)
    except (DegenerateCloud, DegenerateConfiguration, ValueError):
        return None
    g = epipolar_distances(F, corr.real, corr.mirror)
    inliers = np.flatnonzero(g <= cfg.threshold)
    mean = float(np.mean(g[inliers])) if inliers.size else np.inf
    return Hypothesis(iteration, F, inliers, mean)


def _better(candidate: Hypothesis, best: Optional[Hypothesis]) -> bool:
    if best is None:
        return True
    if candidate.count != best.count:
        return candidate.count > best.count
    return candidate.mean_distance < best.mean_distance


def ransac_fundamental(corr: CorrespondenceSet, cfg: RansacConfig = RansacConfig()) -> RansacResult:
    """
    Keep the minimal-sample model with the most inliers (ties: smaller mean
    inlier g, then earlier iteration), then refit on its inliers.
    """
    if len(corr) < cfg.sample_size:
        raise TooFewPairs(f"need at least {cfg.sample_size} pairs, got {len(corr)}")

    iterations = range(cfg.iterations)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            hypotheses: List[Optional[Hypothesis]] = list(pool.map(lambda i: _hypothesis(corr, cfg, i), iterations))
    else:
        hypotheses = [_hypothesis(corr, cfg, i) for i in iterations]

    best: Optional[Hypothesis] = None
    for hypothesis in hypotheses:
        if hypothesis is not None and _better(hypothesis, best):
            best = hypothesis
            logger.debug(f"RANSAC iteration {hypothesis.iteration}: {hypothesis.count} inliers")

    if best is None:
        raise NoModelFound(f"all {cfg.iterations} minimal samples were degenerate")
    if best.count < cfg.sample_size:
        raise InsufficientInliers(f"best model has {best.count} inliers, need {cfg.sample_size}")

    final, refit_accepted = best.fundamental, True
    try:
        refit = solve_constrained_fundamental(corr.subset(best.inliers))
        slack_threshold = cfg.threshold * (1.0 + cfg.refit_slack)
        refit_count = int(np.count_nonzero(epipolar_distances(refit, corr.real, corr.mirror) <= slack_threshold))
        if refit_count < best.count:
            logger.warning(
                f"Refit on inliers keeps {refit_count} < {best.count} pairs; keeping the minimal-sample model"
            )
            refit_accepted = False
        else:
            final = refit
    except (DegenerateCloud, DegenerateConfiguration) as e:
        logger.warning(f"Refit on inliers failed ({e}); keeping the minimal-sample model")
        refit_accepted = False

    distances = epipolar_distances(final, corr.real, corr.mirror)
    logger.info(
        f"✅ RANSAC: {best.count}/{len(corr)} inliers at {cfg.threshold}px (iteration {best.iteration})"
    )
    return RansacResult(
        fundamental=final,
        minimal_fundamental=best.fundamental,
        inliers=best.inliers,
        distances=distances,
        best_iteration=best.iteration,
        threshold=cfg.threshold,
        refit_accepted=refit_accepted,
        minimal_mean_distance=best.mean_distance,
    )
