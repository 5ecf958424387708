"""
Monte Carlo estimates of portfolio losses with standard errors.

Samples are drawn in fixed size partitions, each with its own child stream
of one SeedSequence, and merged in partition order; the same configuration
therefore reproduces every number bit for bit whatever the worker count.
"""

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import DomainError, UndefinedCorrelationError
from ..grid import DensityGrid, cell_centers
from ..market_params import DEFAULT_MC_PARTITION, DEFAULT_MC_SAMPLES, DEFAULT_SEED
from ..model import MarketParams, MultiMarketParams, OverlapSpec, SubordinationSpec
from .samplers import SamplerKind, sample

logger = logging.getLogger(__name__)

BATCH_SIZE = 5_000
BOUNDARY_WIDTH = 0.02
MIN_ACCEPTANCE_SAMPLES = 10_000
UNDEFINED_VARIANCE = 1e-14

LossStructure = Union[SubordinationSpec, OverlapSpec, np.ndarray]


@dataclass(frozen=True)
class McConfig:
    n_samples: int = DEFAULT_MC_SAMPLES
    seed: int = DEFAULT_SEED
    sampler: SamplerKind = SamplerKind.COMPOUND
    antithetic: bool = False
    bins: int = 50
    partition_size: int = DEFAULT_MC_PARTITION
    workers: int = 1
    keep_samples: bool = False
    tail_thresholds: Tuple[float, ...] = (0.1, 0.3, 0.5)

    def __post_init__(self):
        if not isinstance(self.sampler, SamplerKind):
            object.__setattr__(self, "sampler", SamplerKind(self.sampler))
        if self.n_samples < 2:
            raise DomainError(f"at least two samples required, got {self.n_samples}")
        if self.bins < 1 or self.partition_size < 2:
            raise DomainError("bins and partition_size must be positive")
        if self.antithetic and self.partition_size % 2:
            raise DomainError("antithetic sampling needs an even partition size")

    @property
    def acceptance_grade(self) -> bool:
        return self.n_samples >= MIN_ACCEPTANCE_SAMPLES

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sampler"] = self.sampler.value
        d["tail_thresholds"] = list(self.tail_thresholds)
        return d


def face_matrix(structure: LossStructure, k_obligors: int) -> np.ndarray:
    if isinstance(structure, OverlapSpec):
        return structure.face_matrix(k_obligors)
    faces = np.asarray(structure, dtype=float)
    if faces.ndim != 2 or faces.shape[0] != k_obligors:
        raise DomainError(f"face matrix must be K x B with K = {k_obligors}")
    return faces


def obligor_losses_subordinated(values: np.ndarray, spec: SubordinationSpec):
    """Per obligor senior and junior losses (L_S, L_J)."""
    senior = np.where(values < spec.f_senior, 1 - values / max(spec.f_senior, 1e-300), 0.0)
    band = (values >= spec.f_senior) & (values < spec.total)
    junior = np.where(
        values < spec.f_senior,
        1.0,
        np.where(band, 1 - (values - spec.f_senior) / spec.f_junior, 0.0),
    )
    return senior, junior


def evaluate_losses(
    values: np.ndarray, structure: LossStructure, k_obligors: Optional[int] = None
) -> np.ndarray:
    """
    Portfolio losses per creditor, shape (n, B) with B = 2 for subordinated
    debt (senior, junior). Obligor losses are weighted with fractional face
    values; in a no-subordination structure each obligor's loss is shared
    among its creditors in proportion to their face values.
    """
    values = np.atleast_2d(values)
    k = values.shape[1] if k_obligors is None else k_obligors
    if isinstance(structure, SubordinationSpec):
        senior, junior = obligor_losses_subordinated(values, structure)
        return np.stack([senior.mean(axis=1), junior.mean(axis=1)], axis=1)
    faces = face_matrix(structure, k)
    if np.any(faces < 0) or np.any(faces.sum(axis=1) <= 0):
        raise DomainError("every obligor needs a positive total face value")
    total = faces.sum(axis=1)
    obligor = np.where(values < total, 1 - values / total, 0.0)
    fractions = faces / faces.sum(axis=0)
    return obligor @ fractions


@dataclass
class _Partial:
    """Sufficient statistics of one partition."""

    n: int
    total: np.ndarray
    cross: np.ndarray
    unit_total: np.ndarray
    unit_square: np.ndarray
    n_units: int
    batches: List[Tuple[int, np.ndarray, np.ndarray]]
    counts: Dict[str, int]
    atoms: np.ndarray
    histogram: np.ndarray
    tails: np.ndarray
    samples: Optional[np.ndarray] = None


def _line_masses(losses, values, structure, k):
    """Classify samples into the origin, delta lines and the continuous part."""
    positive = losses > 0
    origin = ~positive.any(axis=1)
    counts = {"origin": int(origin.sum())}
    atoms = np.zeros(k + 1, dtype=np.int64)
    if isinstance(structure, SubordinationSpec):
        in_band = ((values >= structure.f_senior) & (values < structure.total)).sum(axis=1)
        senior_defaults = (values < structure.f_senior).sum(axis=1)
        atom = in_band == 0
        atoms += np.bincount(senior_defaults[atom], minlength=k + 1)[: k + 1]
        counts["senior_zero"] = int(((senior_defaults == 0) & (in_band > 0)).sum())
        continuous = (senior_defaults > 0) & (in_band > 0)
        counts["ordering_violations"] = int((losses[:, 0] > losses[:, 1] + 1e-15).sum())
    else:
        for b in range(losses.shape[1] if losses.shape[1] > 1 else 0):
            others = np.delete(positive, b, axis=1).any(axis=1)
            counts[f"zero_creditor_{b}"] = int((~positive[:, b] & others).sum())
        continuous = positive.all(axis=1)
    return counts, atoms, continuous


def _histogram(losses, continuous, bins):
    edges = [np.linspace(0, 1, bins + 1)] * losses.shape[1]
    hist, _ = np.histogramdd(losses[continuous], bins=edges)
    return hist.astype(np.int64)


def pair_order(losses: np.ndarray) -> np.ndarray:
    """Interleave draws with their antithetic partners so batches hold whole pairs."""
    half = len(losses) // 2
    paired = np.stack([losses[:half], losses[half : 2 * half]], axis=1)
    return paired.reshape((2 * half,) + losses.shape[1:])


def _run_partition(args) -> _Partial:
    params, structure, k, config, seed_seq, n = args
    rng = np.random.default_rng(seed_seq)
    values = sample(config.sampler, params, n, rng, k, config.antithetic)
    losses = evaluate_losses(values, structure, k)
    if config.antithetic:
        half = n // 2
        units = 0.5 * (losses[:half] + losses[half : 2 * half])
    else:
        units = losses
    counts, atoms, continuous = _line_masses(losses, values, structure, k)
    batches = []
    ordered = pair_order(losses) if config.antithetic else losses
    for start in range(0, n, BATCH_SIZE):
        chunk = ordered[start : start + BATCH_SIZE]
        batches.append((len(chunk), chunk.sum(axis=0), chunk.T @ chunk))
    thresholds = np.asarray(config.tail_thresholds, dtype=float)
    return _Partial(
        n=n,
        total=losses.sum(axis=0),
        cross=losses.T @ losses,
        unit_total=units.sum(axis=0),
        unit_square=(units**2).sum(axis=0),
        n_units=len(units),
        batches=batches,
        counts=counts,
        atoms=atoms,
        histogram=_histogram(losses, continuous, config.bins),
        tails=(losses[:, :, None] > thresholds[None, None, :]).sum(axis=0),
        samples=losses if config.keep_samples else None,
    )


def _moments(n, total, cross):
    mean = total / n
    cov = cross / n - np.outer(mean, mean)
    return cov, mean


@dataclass
class McRun:
    config: McConfig
    n: int
    mean: np.ndarray
    mean_se: np.ndarray
    covariance: np.ndarray
    batch_correlations: np.ndarray
    counts: Dict[str, int]
    atoms: np.ndarray
    histogram: np.ndarray
    tails: np.ndarray
    samples: Optional[np.ndarray] = None
    flags: List[str] = field(default_factory=list)

    @property
    def n_creditors(self) -> int:
        return len(self.mean)

    def _proportion(self, count: int) -> Tuple[float, float]:
        p = count / self.n
        return p, math.sqrt(max(p * (1 - p), 0.0) / self.n)

    @property
    def no_default(self) -> Tuple[float, float]:
        """Mass of the origin peak with its standard error."""
        return self._proportion(self.counts["origin"])

    def line_masses(self) -> Dict[str, Tuple[float, float]]:
        masses = {
            name: self._proportion(count)
            for name, count in self.counts.items()
            if name != "ordering_violations"
        }
        k = len(self.atoms) - 1
        for k1 in np.flatnonzero(self.atoms[1:]) + 1:
            masses[f"junior_atom_{k1}/{k}"] = self._proportion(int(self.atoms[k1]))
        return masses

    def correlation(self, i: int = 0, j: int = 1) -> float:
        variance = np.diag(self.covariance)
        if min(variance[i], variance[j]) < UNDEFINED_VARIANCE:
            raise UndefinedCorrelationError(
                f"loss variances {variance[i]:.3g}, {variance[j]:.3g} vanish; "
                "losses are (almost) never positive"
            )
        return float(self.covariance[i, j] / math.sqrt(variance[i] * variance[j]))

    def correlation_se(self) -> float:
        """Batch means standard error of the loss correlation."""
        finite = self.batch_correlations[np.isfinite(self.batch_correlations)]
        if len(finite) < 2:
            return float("nan")
        return float(finite.std(ddof=1) / math.sqrt(len(finite)))

    def tail_probability(self, creditor: int, threshold: float) -> Tuple[float, float]:
        index = list(self.config.tail_thresholds).index(threshold)
        return self._proportion(int(self.tails[creditor, index]))

    def density_grid(self) -> Tuple[DensityGrid, np.ndarray]:
        """Histogram density of the continuous part and its standard errors."""
        bins = self.config.bins
        area = (1 / bins) ** self.histogram.ndim
        p = self.histogram / self.n
        axes = [cell_centers(bins)] * self.histogram.ndim
        grid = DensityGrid(
            axes=axes,
            values=p / area,
            metadata={"source": "monte_carlo", "config": self.config.as_dict()},
        )
        return grid, np.sqrt(p * (1 - p) / self.n) / area

    def summary(self) -> dict:
        summary = {
            "n_samples": self.n,
            "seed": self.config.seed,
            "sampler": self.config.sampler.value,
            "mean": self.mean.tolist(),
            "mean_se": self.mean_se.tolist(),
            "covariance": self.covariance.tolist(),
            "line_masses": {k: list(v) for k, v in self.line_masses().items()},
            "tail_probabilities": {
                f"creditor_{b}>{x}": list(self.tail_probability(b, x))
                for b in range(self.n_creditors)
                for x in self.config.tail_thresholds
            },
            "flags": list(self.flags),
        }
        if self.n_creditors > 1:
            try:
                summary["correlation"] = [self.correlation(), self.correlation_se()]
            except UndefinedCorrelationError:
                summary["correlation"] = None
        return summary


def _partitions(config: McConfig) -> List[int]:
    sizes = [config.partition_size] * (config.n_samples // config.partition_size)
    rest = config.n_samples % config.partition_size
    if rest:
        sizes.append(rest + rest % 2 if config.antithetic else rest)
    return sizes


def estimate(
    params: Union[MarketParams, MultiMarketParams],
    structure: LossStructure,
    k_obligors: int,
    config: McConfig = McConfig(),
) -> McRun:
    """
    Sample portfolio losses and reduce them to estimates with standard
    errors, delta line masses and a histogram of the continuous part.
    """
    sizes = _partitions(config)
    seeds = np.random.SeedSequence(config.seed).spawn(len(sizes))
    tasks = [(params, structure, k_obligors, config, s, n) for s, n in zip(seeds, sizes)]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            partials = list(executor.map(_run_partition, tasks))
    else:
        partials = []
        for i, task in enumerate(tasks):
            partials.append(_run_partition(task))
            logger.debug("partition %d/%d done", i + 1, len(tasks))
    n = sum(p.n for p in partials)
    total = sum(p.total for p in partials)
    cross = sum(p.cross for p in partials)
    covariance, mean = _moments(n, total, cross)
    n_units = sum(p.n_units for p in partials)
    unit_mean = sum(p.unit_total for p in partials) / n_units
    unit_var = sum(p.unit_square for p in partials) / n_units - unit_mean**2
    mean_se = np.sqrt(np.maximum(unit_var, 0.0) * n_units / max(n_units - 1, 1) / n_units)
    batch_correlations = []
    for p in partials:
        for m, t, c in p.batches:
            cov, _ = _moments(m, t, c)
            if cov.shape[0] > 1 and cov[0, 0] > 0 and cov[1, 1] > 0:
                batch_correlations.append(cov[0, 1] / math.sqrt(cov[0, 0] * cov[1, 1]))
            else:
                batch_correlations.append(np.nan)
    counts = {key: sum(p.counts[key] for p in partials) for key in partials[0].counts}
    run = McRun(
        config=config,
        n=n,
        mean=mean,
        mean_se=mean_se,
        covariance=covariance,
        batch_correlations=np.asarray(batch_correlations),
        counts=counts,
        atoms=sum(p.atoms for p in partials),
        histogram=sum(p.histogram for p in partials),
        tails=sum(p.tails for p in partials),
        samples=np.concatenate([p.samples for p in partials]) if config.keep_samples else None,
    )
    if not config.acceptance_grade:
        run.flags.append("below_acceptance_sample_size")
    logger.info("Monte Carlo run of %d samples finished", n)
    return run


@dataclass
class AgreementReport:
    """
    Cell by cell comparison. Cells within boundary_width of a zero loss sit
    next to the delta lines, where the second order density is least
    accurate; they are reported apart from the interior.
    """

    max_z: float
    compared_cells: int
    boundary_max_z: float
    boundary_cells: int
    threshold: float
    boundary_width: float
    cells: pd.DataFrame

    def passed(self, bound: float = 3.0) -> bool:
        return self.compared_cells > 0 and self.max_z <= bound

    def summary(self) -> dict:
        return {
            "max_z": self.max_z,
            "compared_cells": self.compared_cells,
            "boundary_max_z": self.boundary_max_z,
            "boundary_cells": self.boundary_cells,
            "density_threshold": self.threshold,
            "boundary_width": self.boundary_width,
        }


def _max_z(z: np.ndarray, mask: np.ndarray) -> float:
    return float(np.nanmax(z[mask])) if mask.any() else float("nan")


def agreement(
    analytic: DensityGrid,
    run: McRun,
    threshold: float = 1e-3,
    boundary_width: float = BOUNDARY_WIDTH,
) -> AgreementReport:
    """
    Compare an analytic grid with the Monte Carlo histogram cell by cell
    wherever the analytic density exceeds threshold.
    """
    mc, _ = run.density_grid()
    if analytic.values.shape != mc.values.shape:
        raise DomainError(
            f"analytic grid {analytic.values.shape} and histogram {mc.values.shape} differ"
        )
    mask = analytic.values > threshold
    boundary = np.logical_or.reduce([m < boundary_width for m in analytic.mesh()])
    # standard errors of the cell frequencies under the analytic density
    area = analytic.cell_area
    p = np.clip(analytic.values * area, 0.0, 1.0)
    se = np.sqrt(p * (1 - p) / run.n) / area
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(mask, np.abs(analytic.values - mc.values) / se, np.nan)
    frame = analytic.to_frame().rename(columns={"density": "analytic"})
    frame["monte_carlo"] = mc.values.ravel()
    frame["standard_error"] = se.ravel()
    frame["z_score"] = z.ravel()
    frame["boundary"] = boundary.ravel()
    interior = mask & ~boundary
    return AgreementReport(
        max_z=_max_z(z, interior),
        compared_cells=int(interior.sum()),
        boundary_max_z=_max_z(z, mask & boundary),
        boundary_cells=int((mask & boundary).sum()),
        threshold=threshold,
        boundary_width=boundary_width,
        cells=frame,
    )
