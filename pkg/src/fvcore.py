"""Cell-centered finite volumes for ``eta u - lap u = f`` on one box.

Unknowns sit at cell centers, boundary data at face centers. The two-point
flux uses the full cell width between centers and half a cell between a
center and a boundary face:

    interior face   phi = (u_nb - u_c) / h
    Dirichlet face  phi = 2 (u_f - u_c) / h
    Robin face      phi = (2/h) (g - c u_c) / (c + 2/h)

and each cell balances ``eta h^2 u_c - h sum(phi) = h^2 f_c``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Mapping, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm
from scipy.sparse.linalg import splu

from src.config import DecompositionSpec, ProblemSpec
from src.mesh import EDGE_ORDER, Edge, SubdomainTopology, edge_cells

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e12
RESIDUAL_TOLERANCE = 1e-12

CellField = np.ndarray


class SolverError(RuntimeError):
    """A subdomain or global linear solve failed to factorize or to meet its residual tolerance."""


class BCKind(str, Enum):
    DIRICHLET = "dirichlet"
    ROBIN = "robin"


@dataclass(frozen=True)
class BoundaryCondition:
    """Kind of condition on one edge. Data values are passed separately at solve time."""

    kind: BCKind
    coefficient: float = 0.0

    def __post_init__(self):
        if self.kind is BCKind.ROBIN and not self.coefficient > 0:
            raise ValueError(f"Robin coefficient must be > 0, got {self.coefficient}")

    @classmethod
    def dirichlet(cls) -> "BoundaryCondition":
        return cls(BCKind.DIRICHLET)

    @classmethod
    def robin(cls, coefficient: float) -> "BoundaryCondition":
        return cls(BCKind.ROBIN, float(coefficient))

    def matrix_weight(self, h: float) -> float:
        """Diagonal contribution of one boundary face to the scaled cell balance."""
        if self.kind is BCKind.DIRICHLET:
            return 2.0
        c = self.coefficient
        return 2.0 * c * h / (c * h + 2.0)

    def data_weight(self, h: float) -> float:
        """Right-hand-side weight of one face datum (``u_f`` or ``g``)."""
        if self.kind is BCKind.DIRICHLET:
            return 2.0
        return 2.0 * h / (self.coefficient * h + 2.0)


@dataclass
class FaceData:
    """Face traces ``u_f`` and outward fluxes ``phi`` along one subdomain edge."""

    trace: np.ndarray
    flux: np.ndarray

    @classmethod
    def zeros(cls, faces: int) -> "FaceData":
        return cls(np.zeros(faces), np.zeros(faces))

    def copy(self) -> "FaceData":
        return FaceData(self.trace.copy(), self.flux.copy())

    def __add__(self, other: "FaceData") -> "FaceData":
        return FaceData(self.trace + other.trace, self.flux + other.flux)

    def __sub__(self, other: "FaceData") -> "FaceData":
        return FaceData(self.trace - other.trace, self.flux - other.flux)


class Side(str, Enum):
    OWNER = "owner"
    OPPOSITE = "opposite"


@dataclass(frozen=True)
class SubdomainOperator:
    matrix: sp.csc_matrix
    factor: object
    shape: tuple
    h: float
    eta: float
    conditions: Dict[Edge, BoundaryCondition]
    matrix_norm: float

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]


def source_values(problem: ProblemSpec, topology: SubdomainTopology) -> np.ndarray:
    """Source evaluated at the cell centers of ``topology``."""
    if callable(problem.source):
        x, y = topology.cell_centers()
        return np.broadcast_to(np.asarray(problem.source(x, y), dtype=float), topology.shape).copy()
    return np.full(topology.shape, float(problem.source))


def assemble_operator(
    problem: ProblemSpec,
    topology: SubdomainTopology,
    conditions: Mapping[Edge, BoundaryCondition],
) -> SubdomainOperator:
    """Assemble and factorize the scaled cell-balance matrix of one subdomain.

    Boundary data only enter the right-hand side, so the factorization is reused
    for every solve with the same condition kinds and Robin coefficients.

    Raises:
        ValueError: eta < 0 or a missing edge condition
        SolverError: factorization failure
    """
    if problem.eta < 0:
        raise ValueError(f"eta must be >= 0, got {problem.eta}")
    missing = [edge.value for edge in EDGE_ORDER if edge not in conditions]
    if missing:
        raise ValueError(f"missing boundary conditions for edges {missing}")

    nx, ny = topology.shape
    h = topology.h

    boundary = np.zeros((nx, ny))
    for edge in EDGE_ORDER:
        edge_cells(boundary, edge)[...] += conditions[edge].matrix_weight(h)

    laplacian = sp.kron(_path_laplacian(nx), sp.identity(ny)) + sp.kron(sp.identity(nx), _path_laplacian(ny))
    matrix = (laplacian + sp.diags(boundary.ravel() + problem.eta * h * h)).tocsc()

    try:
        factor = splu(matrix)
    except RuntimeError as e:
        raise SolverError(f"factorization of the {nx}x{ny} subdomain operator failed: {e}") from e

    return SubdomainOperator(
        matrix=matrix,
        factor=factor,
        shape=(nx, ny),
        h=h,
        eta=problem.eta,
        conditions=dict(conditions),
        matrix_norm=float(sparse_norm(matrix, np.inf)),
    )


def _path_laplacian(n: int) -> sp.spmatrix:
    """Interior-face coupling of a row of ``n`` cells (diagonal 1 at the ends)."""
    if n == 1:
        return sp.csr_matrix((1, 1))
    diagonal = np.full(n, 2.0)
    diagonal[[0, -1]] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, diagonal, off], [-1, 0, 1])


def right_hand_side(
    operator: SubdomainOperator,
    f_values: np.ndarray,
    data: Mapping[Edge, np.ndarray],
) -> np.ndarray:
    h = operator.h
    rhs = h * h * np.broadcast_to(np.asarray(f_values, dtype=float), operator.shape).copy()
    for edge, values in data.items():
        if values is None:
            continue
        values = np.asarray(values, dtype=float)
        cells = edge_cells(rhs, edge)
        if values.shape != cells.shape:
            raise ValueError(f"edge {edge.value} expects {cells.size} face values, got {values.size}")
        cells += operator.conditions[edge].data_weight(h) * values
    return rhs


def solve_subdomain(
    operator: SubdomainOperator,
    f_values: np.ndarray,
    data: Mapping[Edge, np.ndarray],
    residual_tolerance: float = RESIDUAL_TOLERANCE,
) -> CellField:
    """Solve one subdomain problem with Dirichlet values / Robin data ``data`` per edge.

    Edges absent from ``data`` get zero data. The normwise backward error
    ``|Au - b| / (|A| |u| + |b|)`` (infinity norms) must not exceed
    ``residual_tolerance``; one refinement step is taken before giving up.

    Raises:
        SolverError: residual tolerance not met
    """
    rhs = right_hand_side(operator, f_values, data).ravel()
    solution = operator.factor.solve(rhs)

    error = _backward_error(operator, solution, rhs)
    if error > residual_tolerance:
        solution = solution + operator.factor.solve(rhs - operator.matrix @ solution)
        error = _backward_error(operator, solution, rhs)
        if error > residual_tolerance:
            raise SolverError(f"subdomain solve residual {error:.3e} exceeds {residual_tolerance:.1e}")

    return solution.reshape(operator.shape)


def _backward_error(operator: SubdomainOperator, solution: np.ndarray, rhs: np.ndarray) -> float:
    residual = np.abs(operator.matrix @ solution - rhs).max(initial=0.0)
    if residual == 0.0:
        return 0.0
    scale = operator.matrix_norm * np.abs(solution).max() + np.abs(rhs).max()
    return residual / scale


def extract_face_data(
    field: CellField,
    edge: Edge,
    condition: BoundaryCondition,
    values: Optional[np.ndarray],
    h: float,
) -> FaceData:
    """Reconstruct face traces and outward fluxes of a solved field on one edge.

    ``values`` are the Dirichlet face values or the Robin data ``g`` the field
    was solved with (``None`` means zero).
    """
    cells = edge_cells(field, edge)
    values = np.zeros(cells.shape) if values is None else np.asarray(values, dtype=float)
    if values.shape != cells.shape:
        raise ValueError(f"edge {edge.value} has {cells.size} faces, got {values.size} boundary values")

    if condition.kind is BCKind.ROBIN:
        c = condition.coefficient
        trace = (values + (2.0 / h) * cells) / (c + 2.0 / h)
    else:
        trace = values.copy()
    flux = 2.0 * (trace - cells) / h
    return FaceData(trace=trace, flux=flux)


def robin_combine(face_data: FaceData, coefficient: float, side: Side) -> np.ndarray:
    """Robin combination ``d/dnu + c`` of stored outward data, seen from ``side``.

    The opposite side's outward normal is reversed, hence ``-phi + c u_f``.
    """
    if side is Side.OWNER:
        return face_data.flux + coefficient * face_data.trace
    return -face_data.flux + coefficient * face_data.trace


def global_topology(spec: DecompositionSpec) -> SubdomainTopology:
    """The whole domain as a single box, every edge exterior."""
    return SubdomainTopology(
        sid=(0, 0),
        index=0,
        origin=(0.0, 0.0),
        cells_x=spec.global_cells_x,
        cells_y=spec.global_cells_y,
        h=spec.h,
        links={edge: None for edge in EDGE_ORDER},
    )


def solve_monodomain(problem: ProblemSpec, spec: DecompositionSpec) -> CellField:
    """Global finite-volume solution with ``u = 0`` on the outer boundary, on the decomposition's grid."""
    topology = global_topology(spec)
    if problem.is_homogeneous:
        return np.zeros(topology.shape)
    operator = assemble_operator(problem, topology, {edge: BoundaryCondition.dirichlet() for edge in EDGE_ORDER})
    return solve_subdomain(operator, source_values(problem, topology), {})


def restrict(global_field: CellField, topology: SubdomainTopology) -> CellField:
    """Cells of ``global_field`` lying in ``topology`` (uniform layouts only)."""
    ix, iy = topology.sid
    nx, ny = topology.shape
    block = global_field[ix * nx:(ix + 1) * nx, iy * ny:(iy + 1) * ny]
    if block.shape != (nx, ny):
        raise ValueError(f"global field of shape {global_field.shape} does not cover subdomain {topology.sid}")
    return block.copy()


def is_diverged(field: CellField, threshold: float = DIVERGENCE_THRESHOLD) -> bool:
    return not np.all(np.isfinite(field)) or np.abs(field).max(initial=0.0) > threshold
