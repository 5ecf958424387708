"""
Execution of resolved scenarios: every mode maps onto engine calls whose
results are written as CSV tables with a JSON envelope next to them.
"""

import datetime
import logging
import math
import pathlib
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from ..asymptotics import (
    density_limit_equal_infinite,
    density_limit_finite_vs_infinite,
    density_limit_two_markets,
    limit_subordinated_point,
)
from ..calibration import DEFAULT_N_GRID, ReturnSample, effective_correlation, fit_n
from ..errors import (
    BudgetExceededError,
    DomainError,
    NearSingularWarning,
    RootAnomalyWarning,
    ScenarioError,
    UndefinedCorrelationError,
    UnsupportedDimensionError,
)
from ..grid import SCHEMA_VERSION, DensityGrid, cell_centers, write_envelope, write_table
from ..losses import (
    CorrelationMethod,
    NoSubScenario,
    SubordinatedScenario,
    density_grid,
    loss_correlation,
    marginal_density,
    no_default_probability,
    tail_probability,
)
from ..market_params import WISHART_OBLIGOR_BUDGET
from ..model import MarketParams, Tranche
from ..oracle import agreement, estimate
from ..oracle.samplers import SamplerKind, sample_compound_returns
from ..quadrature import MAX_TENSOR_DIMENSION, MAX_TENSOR_NODES
from ..tool import fingerprint
from .models import ANALYTIC_TARGETS, Mode, ScenarioFile

logger = logging.getLogger(__name__)

DIAGONAL_BAND = 0.05
QUALITY_OK, QUALITY_NEAR_SINGULAR, QUALITY_MULTIPLE_ROOTS = 0, 1, 2
LIMIT_MODES = (
    Mode.LIMIT_SUBORDINATED,
    Mode.LIMIT_EQUAL,
    Mode.LIMIT_FINITE_VS_INFINITE,
    Mode.LIMIT_TWO_MARKETS,
)


@dataclass
class Artifact:
    path: pathlib.Path
    statistic: str
    flags: List[str] = field(default_factory=list)

    def summary_line(self) -> str:
        flags = f" [{', '.join(self.flags)}]" if self.flags else ""
        return f"{self.path}  {self.statistic}{flags}"


def _nosub_scenario(scenario: ScenarioFile, k: int, params=None) -> NoSubScenario:
    params = scenario.market_params() if params is None else params
    if scenario.faces is not None:
        return NoSubScenario(k, params, faces=scenario.faces)
    return NoSubScenario(k, params, overlap=scenario.overlap_spec())


def _single_portfolio(k: int, face: float) -> tuple:
    return tuple((face,) for _ in range(k))


def _obligor_counts(scenario: ScenarioFile) -> List[int]:
    if scenario.mode is Mode.NOSUB_MULTIMARKET or (
        scenario.mode is Mode.MC_VALIDATE
        and scenario.validate_against.target is Mode.NOSUB_MULTIMARKET
    ):
        return [scenario.multimarket().k_obligors]
    return list(scenario.k_obligors)


def _beta(scenario: ScenarioFile) -> int:
    return len(scenario.blocks) if scenario.blocks else 1


def feasibility(scenario: ScenarioFile, workers: int = 1) -> Dict:
    """
    Check every invariant the run would hit before it starts computing and
    estimate its cost. Raises the error the run would raise.
    """
    params = scenario.market_params()
    scenario.subordination_spec()
    overlap = scenario.overlap_spec()
    quad = scenario.quadrature_spec()
    mc = scenario.mc_config(workers)
    if scenario.blocks:
        scenario.multimarket()
    beta = _beta(scenario)
    mode = scenario.mode
    analytic = mode in ANALYTIC_TARGETS or mode in LIMIT_MODES or (
        mode is Mode.MC_VALIDATE and scenario.validate_against.target in ANALYTIC_TARGETS
    )
    if mode in ANALYTIC_TARGETS and beta > MAX_TENSOR_DIMENSION:
        raise UnsupportedDimensionError(
            f"{beta} market blocks exceed the tensor quadrature limit of "
            f"{MAX_TENSOR_DIMENSION}; use mode mc-validate for Monte Carlo only"
        )
    if mode is Mode.LIMIT_TWO_MARKETS and beta != 2:
        raise ScenarioError(f"mode {mode.value} needs exactly two market blocks", ["/blocks"])
    if mode is Mode.MC_VALIDATE and scenario.validate_against.target not in ANALYTIC_TARGETS:
        raise ScenarioError(
            "validation target must be one of "
            + ", ".join(t.value for t in ANALYTIC_TARGETS),
            ["/validate_against/target"],
        )
    counts = _obligor_counts(scenario)
    if any(k < 1 for k in counts):
        raise DomainError(f"obligor counts must be positive, got {counts}")
    uses_overlap = scenario.faces is None and (
        mode in (Mode.NOSUB, Mode.CORRELATION_SWEEP)
        or (mode is Mode.MC_VALIDATE and scenario.validate_against.target is Mode.NOSUB)
    )
    if uses_overlap:
        for k in counts:
            overlap.counts(k)
    if scenario.faces is not None and mode in (Mode.NOSUB, Mode.CORRELATION_SWEEP):
        for k in counts:
            _nosub_scenario(scenario, k, params)
    sampling = mode in (Mode.MC_VALIDATE, Mode.CORRELATION_SWEEP)
    if sampling and mode is Mode.CORRELATION_SWEEP:
        sampling = CorrelationMethod(scenario.sweep.method) is CorrelationMethod.MC
    if sampling and mc.sampler is SamplerKind.WISHART:
        if max(counts) > WISHART_OBLIGOR_BUDGET:
            raise BudgetExceededError(
                f"Wishart sampling of {max(counts)} obligors exceeds the budget of "
                f"{WISHART_OBLIGOR_BUDGET}; use the compound sampler instead"
            )
        if abs(params.n_fluct - round(params.n_fluct)) > 1e-12:
            raise DomainError("the Wishart ensemble needs an integer N")

    points = scenario.grid.points
    runs = len(counts) * (len(scenario.sweep.c_values) if mode is Mode.CORRELATION_SWEEP else 1)
    tensor = min(beta, MAX_TENSOR_DIMENSION)
    node_count = max(quad.resolved_for(k, tensor).node_count(tensor) for k in counts)
    on_tensor_rule = (analytic and mode not in LIMIT_MODES) or (
        mode is Mode.CORRELATION_SWEEP and not sampling
    )
    if on_tensor_rule and tensor > 1 and node_count > MAX_TENSOR_NODES:
        raise BudgetExceededError(
            f"{node_count} quadrature nodes for {beta} market blocks exceed the budget of "
            f"{MAX_TENSOR_NODES}; use fewer obligors or mode mc-validate"
        )
    cost = {
        "runs": runs,
        "grid_points": points ** (2 if mode is not Mode.LIMIT_EQUAL else 1),
        "quadrature_nodes": node_count if analytic else 0,
        "mc_samples": mc.n_samples * runs if sampling else 0,
        "workers": workers,
    }
    cost["kernel_evaluations"] = cost["grid_points"] * cost["quadrature_nodes"] * runs
    return {"mode": mode.value, "beta": beta, "obligor_counts": counts, "cost": cost}


class Runner:
    """Runs one resolved scenario and records the artifacts it writes."""

    def __init__(
        self,
        scenario: ScenarioFile,
        output: Optional[pathlib.Path] = None,
        workers: int = 1,
    ):
        self.scenario = scenario
        self.workers = workers
        self.directory = pathlib.Path(output or scenario.output.directory)
        self.prefix = scenario.output.prefix or scenario.name or scenario.mode.value
        self.resolved = scenario.model_dump(mode="json")
        self.fingerprint = fingerprint(self.resolved)
        self.quad = scenario.quadrature_spec()
        self.artifacts: List[Artifact] = []

    @property
    def handlers(self) -> Dict[Mode, Callable[[], None]]:
        return {
            Mode.SUBORDINATED: self.subordinated,
            Mode.NOSUB: self.nosub,
            Mode.NOSUB_MULTIMARKET: self.nosub_multimarket,
            Mode.LIMIT_SUBORDINATED: self.limit_subordinated,
            Mode.LIMIT_EQUAL: self.limit_equal,
            Mode.LIMIT_FINITE_VS_INFINITE: self.limit_finite_vs_infinite,
            Mode.LIMIT_TWO_MARKETS: self.limit_two_markets,
            Mode.NO_DEFAULT: self.no_default,
            Mode.CORRELATION_SWEEP: self.correlation_sweep,
            Mode.CALIBRATE: self.calibrate,
            Mode.MC_VALIDATE: self.mc_validate,
        }

    def run(self) -> List[Artifact]:
        report = feasibility(self.scenario, self.workers)
        logger.info(
            "running %s (%s), fingerprint %s, cost %s",
            self.prefix,
            self.scenario.mode.value,
            self.fingerprint[:12],
            report["cost"],
        )
        self.handlers[self.scenario.mode]()
        return self.artifacts

    # output

    def _envelope(self, kind: str, **content) -> dict:
        envelope = {
            "schema_version": SCHEMA_VERSION,
            "kind": kind,
            "scenario_fingerprint": self.fingerprint,
            "scenario": self.resolved,
        }
        if self.scenario.output.stamp_time:
            envelope["created"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        envelope.update(content)
        return envelope

    def _path(self, stem: str, suffix: str) -> pathlib.Path:
        return self.directory / f"{self.prefix}_{stem}{suffix}"

    def _record(self, path, statistic: str, flags=()) -> Artifact:
        artifact = Artifact(pathlib.Path(path), statistic, sorted(set(flags)))
        self.artifacts.append(artifact)
        logger.info("wrote %s", artifact.path)
        return artifact

    def emit_grid(self, stem: str, grid: DensityGrid, statistic: str):
        grid.to_csv(self._path(stem, ".csv"))
        content = grid.envelope()
        content.pop("schema_version")
        envelope = self._envelope(**content, data=self._path(stem, ".csv").name)
        write_envelope(self._path(stem, ".json"), envelope)
        self._record(self._path(stem, ".csv"), statistic, grid.flags)

    def emit_table(self, stem: str, frame: pd.DataFrame, statistic: str, flags=(), **metadata):
        write_table(self._path(stem, ".csv"), frame)
        envelope = self._envelope(
            "table",
            columns=list(frame.columns),
            data=self._path(stem, ".csv").name,
            flags=sorted(set(flags)),
            metadata=metadata,
        )
        write_envelope(self._path(stem, ".json"), envelope)
        self._record(self._path(stem, ".csv"), statistic, flags)

    def emit_report(self, stem: str, report: dict, statistic: str, flags=()):
        path = write_envelope(
            self._path(stem, ".json"),
            self._envelope("report", report=report, flags=sorted(set(flags))),
        )
        self._record(path, statistic, flags)

    # analytic finite portfolios

    def subordinated(self):
        spec = self.scenario.subordination_spec()
        params = self.scenario.market_params()
        grid_settings = self.scenario.grid
        for k in self.scenario.k_obligors:
            scenario = SubordinatedScenario(k, spec, params)
            grid = density_grid(scenario, self.quad, grid_settings.points, self.workers)
            p_nd = no_default_probability(k, spec.total, params, self.quad)
            grid.metadata.update(k_obligors=k, p_no_default=p_nd)
            self.emit_grid(
                f"k{k}_density", grid, f"mass={grid.mass():.6f} P_ND={p_nd:.6g}"
            )
            if grid_settings.marginals:
                for tranche in Tranche:
                    curve = marginal_density(
                        tranche,
                        scenario,
                        self.quad,
                        grid_settings.points,
                        grid_settings.integration_points,
                        workers=self.workers,
                    )
                    curve.metadata["tranche"] = tranche.value
                    self.emit_grid(
                        f"k{k}_marginal_{tranche.value}", curve, f"mass={curve.mass():.6f}"
                    )

    def nosub(self):
        params = self.scenario.market_params()
        for k in self.scenario.k_obligors:
            scenario = _nosub_scenario(self.scenario, k, params)
            grid = density_grid(scenario, self.quad, self.scenario.grid.points, self.workers)
            grid.metadata["k_obligors"] = k
            statistic = f"mass={grid.mass():.6f}"
            if len(grid.axes) == 2:
                l1, l2 = grid.mesh()
                near = np.abs(l1 - l2) < DIAGONAL_BAND
                concentration = grid.mass(near) / max(grid.mass(), 1e-300)
                grid.metadata["diagonal_concentration"] = concentration
                statistic += f" diagonal_concentration={concentration:.6f}"
            self.emit_grid(f"k{k}_density", grid, statistic)

    def nosub_multimarket(self):
        market = self.scenario.multimarket()
        k = market.k_obligors
        if self.scenario.faces is not None:
            faces = self.scenario.faces
        else:
            faces = _single_portfolio(k, self.scenario.overlap.f0)
        split = NoSubScenario(k, market, faces=faces)
        single = NoSubScenario(k, self.scenario.market_params(), faces=faces)
        if split.n_creditors <= 2:
            grid = density_grid(split, self.quad, self.scenario.grid.points, self.workers)
            grid.metadata.update(k_obligors=k, beta=market.beta)
            self.emit_grid(f"k{k}_density", grid, f"mass={grid.mass():.6f}")
        rows = []
        for creditor in range(split.n_creditors):
            for x in self.scenario.mc.tail_thresholds:
                rows.append(
                    {
                        "creditor": creditor,
                        "threshold": x,
                        "p_split_markets": tail_probability(split, creditor, x, self.quad),
                        "p_single_market": tail_probability(single, creditor, x, self.quad),
                    }
                )
        frame = pd.DataFrame(rows)
        reduced = bool((frame["p_split_markets"] < frame["p_single_market"]).all())
        self.emit_table(
            f"k{k}_tail_probabilities",
            frame,
            f"diversification_reduces_tails={reduced}",
            k_obligors=k,
            beta=market.beta,
        )

    # infinite portfolios

    def limit_subordinated(self):
        spec = self.scenario.subordination_spec()
        params = self.scenario.market_params()
        axis = cell_centers(self.scenario.grid.points)
        values = np.zeros((len(axis), len(axis)))
        quality = np.full(values.shape, QUALITY_OK)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NearSingularWarning)
            warnings.simplefilter("ignore", RootAnomalyWarning)
            for i, l_senior in enumerate(axis):
                # junior losses never fall below senior losses
                for j in np.flatnonzero(axis >= l_senior):
                    point = limit_subordinated_point(l_senior, axis[j], spec, params)
                    values[i, j] = point.density
                    if point.anomalous:
                        quality[i, j] = QUALITY_MULTIPLE_ROOTS
                    elif point.near_singular:
                        quality[i, j] = QUALITY_NEAR_SINGULAR
        flags = []
        if np.any(quality == QUALITY_NEAR_SINGULAR):
            flags.append("near_singular_jacobian")
        if np.any(quality == QUALITY_MULTIPLE_ROOTS):
            flags.append("multiple_roots")
            logger.warning("%d grid points with several roots z0", (quality == 2).sum())
        grid = DensityGrid(
            axes=[axis, axis],
            values=values,
            axis_names=("l_senior", "l_junior"),
            metadata={"quality_codes": {"ok": 0, "near_singular": 1, "multiple_roots": 2}},
            flags=flags,
            quality=quality,
        )
        self.emit_grid("limit_density", grid, f"mass={grid.mass():.6f}")

    def limit_equal(self):
        params = self.scenario.market_params()
        face = self.scenario.overlap.f0
        axis = np.asarray(self.scenario.limit.l_values or cell_centers(self.scenario.grid.points))
        values = [density_limit_equal_infinite(l, face, params, self.quad) for l in axis]
        grid = DensityGrid(
            axes=[axis],
            values=values,
            axis_names=("l",),
            metadata={"support": "l1 == l2", "face_value": face},
        )
        self.emit_grid("limit_equal_density", grid, f"mass={grid.mass():.6f}")

    def _limit_surface(self, stem: str, names, density: Callable, **metadata):
        axis = cell_centers(self.scenario.grid.points)
        values = np.array([[density(a, b) for b in axis] for a in axis])
        grid = DensityGrid(axes=[axis, axis], values=values, axis_names=names, metadata=metadata)
        self.emit_grid(stem, grid, f"mass={grid.mass():.6f}")

    def limit_finite_vs_infinite(self):
        params = self.scenario.market_params()
        face, r1 = self.scenario.overlap.f0, self.scenario.limit.r1
        self._limit_surface(
            f"limit_r{r1}_density",
            ("l_finite", "l_infinite"),
            lambda a, b: density_limit_finite_vs_infinite(a, b, r1, face, params, self.quad),
            r1=r1,
            face_value=face,
        )

    def limit_two_markets(self):
        first, second = (block.params for block in self.scenario.multimarket().blocks)
        face = self.scenario.overlap.f0
        self._limit_surface(
            "limit_two_markets_density",
            ("l1", "l2"),
            lambda a, b: density_limit_two_markets(a, b, first, second, face, quad=self.quad),
            face_value=face,
        )

    # sweeps

    def no_default(self):
        params = self.scenario.market_params()
        face = self.scenario.overlap.f0
        mus = self.scenario.sweep.mu_values or [params.mu]
        rows = [
            {
                "mu": mu,
                "k": k,
                "p_no_default": no_default_probability(
                    k, face, params.replace(mu=mu), self.quad
                ),
            }
            for mu in mus
            for k in sorted(self.scenario.k_obligors)
        ]
        frame = pd.DataFrame(rows)
        decreasing = all(
            bool(np.all(np.diff(group["p_no_default"].to_numpy()) < 0))
            for _, group in frame.groupby("mu")
        )
        self.emit_table(
            "no_default", frame, f"decreasing_in_k={decreasing}", face_value=face
        )

    def correlation_sweep(self):
        base = self.scenario.market_params()
        method = CorrelationMethod(self.scenario.sweep.method)
        mc = self.scenario.mc_config(self.workers)
        rows, flags = [], []
        for k in self.scenario.k_obligors:
            for c in self.scenario.sweep.c_values:
                scenario = _nosub_scenario(self.scenario, k, base.replace(c=c))
                flags += scenario.flags
                se = math.nan
                try:
                    if method is CorrelationMethod.MC:
                        run = estimate(scenario.params, scenario.structure, k, mc)
                        correlation, se = run.correlation(), run.correlation_se()
                    else:
                        correlation = loss_correlation(scenario, method, self.quad)
                except UndefinedCorrelationError as e:
                    logger.warning("c = %g, K = %d: %s", c, k, e)
                    correlation = math.nan
                    flags.append("undefined_correlation")
                rows.append(
                    {"c": c, "k": k, "correlation": correlation, "standard_error": se}
                )
        frame = pd.DataFrame(rows)
        self.emit_table(
            "correlation_sweep",
            frame,
            f"correlation_range=[{frame['correlation'].min():.4f}, "
            f"{frame['correlation'].max():.4f}]",
            flags,
            method=method.value,
        )

    # calibration

    def _return_sample(self):
        calibration = self.scenario.calibration
        if calibration.returns_csv:
            return ReturnSample.from_csv(calibration.returns_csv), None
        synthetic = calibration.synthetic
        market = self.scenario.market
        params = MarketParams(
            mu=market.mu,
            rho=synthetic.rho,
            c=synthetic.c,
            n_fluct=synthetic.n_fluct,
            t_mat=market.t_mat,
            v0=market.v0,
        )
        rng = np.random.default_rng(self.scenario.mc.seed)
        returns = sample_compound_returns(
            params, synthetic.m_observations, rng, k_obligors=synthetic.k_dim
        )
        return ReturnSample(returns), synthetic.model_dump()

    def calibrate(self):
        sample, truth = self._return_sample()
        fit = fit_n(sample, self.scenario.calibration.n_grid or DEFAULT_N_GRID)
        report = fit.report()
        report.pop("profile")
        report["k_dim"] = sample.k_dim
        report["m_observations"] = sample.m_observations
        report["c_hat"] = (
            effective_correlation(sample.sample_covariance) if sample.k_dim > 1 else None
        )
        if truth is not None:
            report["synthetic"] = truth
        self.emit_table("likelihood_profile", fit.profile, f"n_hat={fit.n_hat:.4f}", fit.flags)
        c_hat = "n/a" if report["c_hat"] is None else f"{report['c_hat']:.4f}"
        self.emit_report("fit", report, f"n_hat={fit.n_hat:.4f} c_hat={c_hat}", fit.flags)

    # validation against the oracle

    def _target(self, k: int):
        target = self.scenario.validate_against.target
        if target is Mode.SUBORDINATED:
            return SubordinatedScenario(
                k, self.scenario.subordination_spec(), self.scenario.market_params()
            )
        if target is Mode.NOSUB_MULTIMARKET:
            faces = self.scenario.faces or _single_portfolio(k, self.scenario.overlap.f0)
            return NoSubScenario(k, self.scenario.multimarket(), faces=faces)
        return _nosub_scenario(self.scenario, k)

    def _no_default_pair(self, scenario, run) -> Optional[dict]:
        if isinstance(scenario, SubordinatedScenario):
            face, params = scenario.spec.total, scenario.params
        else:
            totals = scenario.face_matrix().sum(axis=1)
            if scenario.market.beta != 1 or not np.allclose(totals, totals[0]):
                return None
            face, params = float(totals[0]), scenario.market.blocks[0].params
        analytic = no_default_probability(scenario.k_obligors, face, params, self.quad)
        p, se = run.no_default
        return {
            "analytic": analytic,
            "monte_carlo": p,
            "standard_error": se,
            "z_score": abs(analytic - p) / se if se > 0 else None,
        }

    def mc_validate(self):
        settings = self.scenario.validate_against
        mc = self.scenario.mc_config(self.workers)
        for k in _obligor_counts(self.scenario):
            scenario = self._target(k)
            run = estimate(scenario.params, scenario.structure, k, mc)
            histogram, _ = run.density_grid()
            histogram.metadata["k_obligors"] = k
            self.emit_report(
                f"k{k}_monte_carlo", run.summary(), f"n={run.n}", run.flags
            )
            flags = list(run.flags) + scenario.flags
            beta = scenario.market.beta if isinstance(scenario, NoSubScenario) else 1
            if beta > MAX_TENSOR_DIMENSION or scenario.n_creditors > 2:
                flags.append("analytic_unavailable")
                histogram.flags = flags
                self.emit_grid(f"k{k}_histogram", histogram, "analytic_unavailable")
                continue
            analytic = density_grid(scenario, self.quad, mc.bins, self.workers)
            result = agreement(
                analytic, run, settings.density_threshold, settings.boundary_width
            )
            passed = result.passed(settings.z_bound)
            self.emit_table(
                f"k{k}_agreement_cells",
                result.cells,
                f"max_z={result.max_z:.3f}",
                flags,
            )
            report = result.summary() | {
                "passed": passed,
                "z_bound": settings.z_bound,
                "no_default": self._no_default_pair(scenario, run),
            }
            self.emit_report(
                f"k{k}_agreement",
                report,
                f"max_z={result.max_z:.3f} cells={result.compared_cells} "
                f"boundary_max_z={result.boundary_max_z:.3f} passed={passed}",
                flags,
            )
