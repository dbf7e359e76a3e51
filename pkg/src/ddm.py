from __future__ import annotations

import logging
import math
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.coarse import (
    CoarseSpace,
    FaceKey,
    JumpSystem,
    apply_correction,
    assemble_jump_system,
    build_coarse_space,
    jump_residual,
    optimality_residual,
    solve_rjmin,
    weighted_norm_sq,
)
from src.config import Initialization, Method, ProblemSpec, RunConfig
from src.fvcore import (
    BoundaryCondition,
    CellField,
    FaceData,
    Side,
    SubdomainOperator,
    assemble_operator,
    extract_face_data,
    is_diverged,
    restrict,
    robin_combine,
    solve_monodomain,
    solve_subdomain,
    source_values,
)
from src.mesh import EDGE_ORDER, Decomposition, Edge, build_decomposition

logger = logging.getLogger(__name__)

MONOTONICITY_SLACK = 1e-10
OPTIMALITY_TOLERANCE = 1e-8


@dataclass
class IterationState:
    """Cell values of every subdomain and (trace, outward flux) data on every interface edge."""

    fields: List[CellField]
    face_data: Dict[FaceKey, FaceData]
    iteration: int = 0

    def copy(self) -> "IterationState":
        return IterationState(
            fields=[f.copy() for f in self.fields],
            face_data={key: fd.copy() for key, fd in self.face_data.items()},
            iteration=self.iteration,
        )

    def diverged(self) -> bool:
        return any(is_diverged(f) for f in self.fields)


@dataclass
class IterationMetrics:
    iteration: int
    jump_p: float
    jump_q: float
    err_inf: float
    err_l2: float
    increment_l2: float = 0.0
    increment_energy: float = 0.0
    jump_p_half: float = 0.0
    jump_q_half: float = 0.0
    optimality_residual: float = 0.0


@dataclass
class MetricsRecord:
    history: List[IterationMetrics] = field(default_factory=list)
    diverged: bool = False
    converged_at: Optional[int] = None

    def append(self, metrics: IterationMetrics) -> None:
        self.history.append(metrics)

    @property
    def final(self) -> IterationMetrics:
        return self.history[-1]

    @property
    def iterations(self) -> int:
        return self.history[-1].iteration if self.history else 0

    @property
    def log_ratio(self) -> float:
        """``log10(|e_last|_inf / |e_0|_inf)``."""
        if not self.history:
            return 0.0
        initial, last = self.history[0].err_inf, self.history[-1].err_inf
        if initial == 0.0:
            return 0.0 if last == 0.0 else math.inf
        if last == 0.0:
            return -math.inf
        if not math.isfinite(last):
            return math.inf
        return math.log10(last / initial)


@dataclass
class SchwarzContext:
    """Everything a run needs that does not change between iterations.

    Subdomain operators are factorized once per edge pattern for a given ``p``.
    """

    decomposition: Decomposition
    problem: ProblemSpec
    p: float
    operators: Dict[Tuple[bool, ...], SubdomainOperator]
    sources: List[np.ndarray]
    reference: Optional[List[CellField]]
    workers: int = 1

    @classmethod
    def build(
        cls,
        decomposition: Decomposition,
        problem: ProblemSpec,
        p: float,
        workers: int = 1,
    ) -> "SchwarzContext":
        operators: Dict[Tuple[bool, ...], SubdomainOperator] = {}
        for topology in decomposition.subdomains:
            pattern = topology.pattern()
            if pattern not in operators:
                conditions = {
                    edge: BoundaryCondition.robin(p) if topology.is_interface(edge) else BoundaryCondition.dirichlet()
                    for edge in EDGE_ORDER
                }
                operators[pattern] = assemble_operator(problem, topology, conditions)

        sources = [source_values(problem, topology) for topology in decomposition.subdomains]
        reference = None
        if not problem.is_homogeneous:
            mono = solve_monodomain(problem, decomposition.spec)
            reference = [restrict(mono, topology) for topology in decomposition.subdomains]

        logger.debug("context p=%g: %d distinct subdomain operators", p, len(operators))
        return cls(decomposition, problem, p, operators, sources, reference, workers)

    @classmethod
    def from_config(cls, config: RunConfig) -> "SchwarzContext":
        return cls.build(build_decomposition(config.decomposition), config.problem, config.p, config.workers)

    @property
    def h(self) -> float:
        return self.decomposition.h

    def operator(self, index: int) -> SubdomainOperator:
        return self.operators[self.decomposition.subdomains[index].pattern()]

    def map_subdomains(self, task, indices) -> list:
        """Apply ``task`` to every subdomain index; results keep index order for any worker count."""
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(task, indices))
        return [task(index) for index in indices]


def _local_solve(
    context: SchwarzContext,
    index: int,
    data: Mapping[Edge, np.ndarray],
) -> Tuple[CellField, Dict[FaceKey, FaceData]]:
    topology = context.decomposition.subdomains[index]
    operator = context.operator(index)
    solution = solve_subdomain(operator, context.sources[index], data)
    face_data = {
        (index, edge): extract_face_data(solution, edge, operator.conditions[edge], data.get(edge), context.h)
        for edge in topology.interface_edges()
    }
    return solution, face_data


def _assemble_state(results, iteration: int) -> IterationState:
    fields, face_data = [], {}
    for solution, faces in results:
        fields.append(solution)
        face_data.update(faces)
    return IterationState(fields=fields, face_data=face_data, iteration=iteration)


def init_state(config: RunConfig, context: SchwarzContext) -> IterationState:
    """Initial iterate.

    ``zero``: zero cells and zero interface data. ``random-robin``: incoming
    Robin data on every interface face is drawn uniformly from [-1, 1]
    (independently per side, seeded), and ``u^0`` is the set of local solutions
    with that data, so its interface data satisfy the Robin identity.
    """
    decomposition = context.decomposition
    if config.initialization is Initialization.ZERO:
        fields = [np.zeros(topology.shape) for topology in decomposition.subdomains]
        face_data = {
            (topology.index, edge): FaceData.zeros(topology.face_count(edge))
            for topology in decomposition.subdomains
            for edge in topology.interface_edges()
        }
        return IterationState(fields=fields, face_data=face_data)

    rng = np.random.default_rng(config.seed)
    incoming = [
        {edge: rng.uniform(-1.0, 1.0, topology.face_count(edge)) for edge in topology.interface_edges()}
        for topology in decomposition.subdomains
    ]
    results = context.map_subdomains(
        lambda index: _local_solve(context, index, incoming[index]),
        range(len(decomposition.subdomains)),
    )
    return _assemble_state(results, iteration=0)


def incoming_robin_data(state: IterationState, context: SchwarzContext, index: int) -> Dict[Edge, np.ndarray]:
    """Transmission data ``d u_j/d nu_i + p u_j`` for every interface edge of subdomain ``index``."""
    topology = context.decomposition.subdomains[index]
    data = {}
    for edge in topology.interface_edges():
        neighbor = context.decomposition.subdomain(topology.links[edge].neighbor).index
        data[edge] = robin_combine(state.face_data[(neighbor, edge.opposite)], context.p, Side.OPPOSITE)
    return data


def osm_step(state: IterationState, context: SchwarzContext) -> IterationState:
    """Local Robin solves in every subdomain: the half-step ``u^{n+1/2}``."""

    def task(index: int):
        return _local_solve(context, index, incoming_robin_data(state, context, index))

    results = context.map_subdomains(task, range(len(context.decomposition.subdomains)))
    return _assemble_state(results, iteration=state.iteration + 1)


@dataclass
class StepResult:
    half: IterationState
    state: IterationState
    jump_q_half: float
    coefficients: Optional[np.ndarray] = None
    optimality_residual: float = 0.0


def dcs_rjmin_step(
    state: IterationState,
    context: SchwarzContext,
    coarse_space: CoarseSpace,
    jump_system: JumpSystem,
) -> StepResult:
    """Local solves followed by the coarse correction minimizing the q-Robin jumps."""
    half = osm_step(state, context)
    residual = jump_residual(context.decomposition, half.face_data, jump_system.q)
    coefficients = solve_rjmin(jump_system, residual)
    fields, face_data = apply_correction(half.fields, half.face_data, coarse_space, coefficients)
    return StepResult(
        half=half,
        state=IterationState(fields=fields, face_data=face_data, iteration=half.iteration),
        jump_q_half=weighted_norm_sq(residual, jump_system.weight),
        coefficients=coefficients,
        optimality_residual=optimality_residual(jump_system, residual, coefficients),
    )


def jump_functional(decomposition: Decomposition, face_data: Mapping[FaceKey, FaceData], coefficient: float) -> float:
    """Sum over ordered interface pairs of ``h * jump^2`` for the Robin combination with ``coefficient``."""
    return weighted_norm_sq(jump_residual(decomposition, face_data, coefficient), decomposition.h)


def error_norms(
    fields: List[CellField],
    reference: Optional[List[CellField]],
    h: float,
) -> Tuple[float, float]:
    """Infinity and L2 norms of ``fields - reference`` over all cells (``None`` is the zero reference)."""
    if reference is not None and len(reference) != len(fields):
        raise ValueError(f"reference has {len(reference)} subdomains, state has {len(fields)}")
    err_inf, sum_sq = 0.0, 0.0
    for index, values in enumerate(fields):
        error = values if reference is None else values - reference[index]
        if reference is not None and error.shape != values.shape:
            raise ValueError(f"subdomain {index}: reference shape {reference[index].shape} != {values.shape}")
        if error.size:
            err_inf = max(err_inf, float(np.abs(error).max()))
            sum_sq += float(np.sum(error * error))
    return err_inf, math.sqrt(h * h * sum_sq)


def increment_norms(before: IterationState, after: IterationState, h: float) -> Tuple[float, float]:
    """L2 norm of the cell increment and its discrete energy ``sum h * d(phi) * d(u_f)`` over interface faces."""
    sum_sq = sum(float(np.sum((a - b) ** 2)) for a, b in zip(after.fields, before.fields))
    energy = 0.0
    for key, new in after.face_data.items():
        old = before.face_data[key]
        energy += h * float(np.dot(new.flux - old.flux, new.trace - old.trace))
    return math.sqrt(h * h * sum_sq), energy


class IterationMethod(ABC):
    """One outer iteration of a Schwarz method."""

    method: Method

    def __init__(self, context: SchwarzContext):
        self.context = context

    @abstractmethod
    def step(self, state: IterationState) -> StepResult:
        pass

    @abstractmethod
    def jump_coefficient(self) -> float:
        pass


class OSMIteration(IterationMethod):
    """Coarseless optimized Schwarz: the half-step is the full step."""

    method = Method.OSM

    def step(self, state: IterationState) -> StepResult:
        half = osm_step(state, self.context)
        return StepResult(
            half=half,
            state=half,
            jump_q_half=jump_functional(self.context.decomposition, half.face_data, self.context.p),
        )

    def jump_coefficient(self) -> float:
        return self.context.p


class DCSRJMinIteration(IterationMethod):
    method = Method.DCS_RJMIN

    def __init__(self, context: SchwarzContext, coarse_space: CoarseSpace, jump_system: JumpSystem):
        super().__init__(context)
        self.coarse_space = coarse_space
        self.jump_system = jump_system

    def step(self, state: IterationState) -> StepResult:
        return dcs_rjmin_step(state, self.context, self.coarse_space, self.jump_system)

    def jump_coefficient(self) -> float:
        return self.jump_system.q


class MethodFactory:
    """Creates iteration methods, building coarse objects that were not supplied."""

    _methods = {
        Method.OSM: OSMIteration,
        Method.DCS_RJMIN: DCSRJMinIteration,
    }

    @classmethod
    def create(
        cls,
        config: RunConfig,
        context: SchwarzContext,
        coarse_space: Optional[CoarseSpace] = None,
        jump_system: Optional[JumpSystem] = None,
    ) -> IterationMethod:
        method_cls = cls._methods.get(config.method)
        if method_cls is None:
            raise ValueError(f"Unsupported method: {config.method}")
        if method_cls is OSMIteration:
            return OSMIteration(context)

        q = config.jump_coefficient
        if coarse_space is None:
            coarse_space = build_coarse_space(config.problem, context.decomposition, workers=context.workers)
        if jump_system is None or jump_system.q != q:
            jump_system = assemble_jump_system(coarse_space, q)
        return DCSRJMinIteration(context, coarse_space, jump_system)


@dataclass
class RunResult:
    config: RunConfig
    metrics: MetricsRecord
    state: IterationState
    wall_time: float

    @property
    def summary(self) -> float:
        return self.metrics.log_ratio

    @property
    def diverged(self) -> bool:
        return self.metrics.diverged


def run(
    config: RunConfig,
    context: Optional[SchwarzContext] = None,
    coarse_space: Optional[CoarseSpace] = None,
    jump_system: Optional[JumpSystem] = None,
    logger: logging.Logger | None = None,
) -> RunResult:
    """Iterate the configured method and record metrics after every step.

    Stops after ``config.iterations`` steps, on divergence (flagged, not
    raised) or once ``err_inf <= tolerance * err_inf_0`` when a tolerance is set.
    """
    log = logger or logging.getLogger(__name__)
    started = time.perf_counter()
    context = context or SchwarzContext.from_config(config)
    if context.p != config.p:
        raise ValueError(f"context was built for p={context.p}, config has p={config.p}")
    method = MethodFactory.create(config, context, coarse_space, jump_system)
    decomposition, h = context.decomposition, context.h
    p, q = config.p, method.jump_coefficient()

    state = init_state(config, context)
    metrics = MetricsRecord()
    err_inf, err_l2 = error_norms(state.fields, context.reference, h)
    jump_q = jump_functional(decomposition, state.face_data, q)
    jump_p = jump_functional(decomposition, state.face_data, p)
    metrics.append(IterationMetrics(
        iteration=0,
        jump_p=jump_p,
        jump_q=jump_q,
        err_inf=err_inf,
        err_l2=err_l2,
        jump_p_half=jump_p,
        jump_q_half=jump_q,
    ))
    initial_error = err_inf

    for _ in range(config.iterations):
        result = method.step(state)
        increment_l2, increment_energy = increment_norms(state, result.half, h)
        next_state = result.state
        err_inf, err_l2 = error_norms(next_state.fields, context.reference, h)
        record = IterationMetrics(
            iteration=next_state.iteration,
            jump_p=jump_functional(decomposition, next_state.face_data, p),
            jump_q=jump_functional(decomposition, next_state.face_data, q),
            err_inf=err_inf,
            err_l2=err_l2,
            increment_l2=increment_l2,
            increment_energy=increment_energy,
            jump_p_half=jump_functional(decomposition, result.half.face_data, p),
            jump_q_half=result.jump_q_half,
            optimality_residual=result.optimality_residual,
        )
        metrics.append(record)
        log.debug(
            "iteration %d: J_p=%.6e J_q=%.6e err_inf=%.6e",
            record.iteration, record.jump_p, record.jump_q, record.err_inf,
        )
        state = next_state

        if state.diverged():
            metrics.diverged = True
            log.warning("%s diverged at iteration %d (p=%g, q=%g)", config.method.value, state.iteration, p, q)
            break
        _check_coarse_step(record, config, log)
        if config.tolerance is not None and err_inf <= config.tolerance * initial_error:
            metrics.converged_at = state.iteration
            break

    wall_time = time.perf_counter() - started
    log.debug(
        "%s %dx%d p=%g q=%g: %d iterations, log10 ratio %.4f%s (%.2fs)",
        config.method.value,
        config.decomposition.subdomains_x,
        config.decomposition.subdomains_y,
        p, q, metrics.iterations, metrics.log_ratio,
        " [diverged]" if metrics.diverged else "",
        wall_time,
    )
    return RunResult(config=config, metrics=metrics, state=state, wall_time=wall_time)


def _check_coarse_step(record: IterationMetrics, config: RunConfig, log: logging.Logger) -> None:
    """Warn when the coarse minimizer did not lower the q-jump or missed normal-equation optimality."""
    if config.method is not Method.DCS_RJMIN:
        return
    if record.jump_q > record.jump_q_half * (1.0 + MONOTONICITY_SLACK) + 1e-300:
        log.warning(
            "iteration %d: coarse step raised J_q from %.6e to %.6e",
            record.iteration, record.jump_q_half, record.jump_q,
        )
    if record.optimality_residual > OPTIMALITY_TOLERANCE:
        log.warning(
            "iteration %d: coarse optimality residual %.3e above %.0e",
            record.iteration, record.optimality_residual, OPTIMALITY_TOLERANCE,
        )
