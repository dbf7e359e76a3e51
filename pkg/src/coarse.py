"""Discontinuous coarse space and the Robin-jump minimizing coarse correction.

Each basis function lives in a single subdomain: it solves the homogeneous
equation there with a linear Dirichlet profile on one interface edge and zero
on every other edge. Both sides of an interface carry their own profiles, so
coarse functions jump across interfaces.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.config import ProblemSpec
from src.fvcore import (
    BoundaryCondition,
    CellField,
    FaceData,
    Side,
    SolverError,
    SubdomainOperator,
    assemble_operator,
    extract_face_data,
    robin_combine,
    solve_subdomain,
)
from src.mesh import EDGE_ORDER, Decomposition, Edge, SubdomainTopology, face_centers

logger = logging.getLogger(__name__)

REGULARIZATION = 1e-12
PROFILES = 2

FaceKey = Tuple[int, Edge]


@dataclass(frozen=True)
class CoarseBasisFunction:
    owner: int
    edge: Edge
    profile: int
    field: CellField
    face_data: Dict[Edge, FaceData]


@dataclass(frozen=True)
class CoarseSpace:
    decomposition: Decomposition
    basis: List[CoarseBasisFunction]
    owned: List[slice]
    stacked_fields: List[np.ndarray]
    stacked_faces: List[Dict[Edge, Tuple[np.ndarray, np.ndarray]]]

    @property
    def dimension(self) -> int:
        return len(self.basis)


@dataclass(frozen=True)
class JumpSystem:
    """Weighted least-squares system ``min_c |r0 + M c|_W^2`` for one jump coefficient ``q``."""

    q: float
    matrix: sp.csr_matrix
    weight: float
    normal: np.ndarray
    factor: tuple
    row_offsets: List[int]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]


def hat_profiles(topology: SubdomainTopology, edge: Edge) -> List[np.ndarray]:
    """Endpoint hats ``1 - s/L`` and ``s/L`` sampled at the face centers."""
    s = face_centers(topology, edge)[:, 2]
    length = topology.edge_length(edge)
    return [1.0 - s / length, s / length]


def build_coarse_space(
    problem: ProblemSpec,
    decomposition: Decomposition,
    workers: int = 1,
) -> CoarseSpace:
    """Solve for every coarse basis function and record its interface data.

    Ordering is subdomain-major, then edge (W, E, S, N), then profile.
    """
    homogeneous = problem.model_copy(update={"source": 0.0})
    operators: Dict[Tuple[int, int], SubdomainOperator] = {}
    tasks = []
    for topology in decomposition.subdomains:
        if topology.shape not in operators:
            operators[topology.shape] = assemble_operator(
                homogeneous, topology, {edge: BoundaryCondition.dirichlet() for edge in EDGE_ORDER}
            )
        for edge in topology.interface_edges():
            for profile, values in enumerate(hat_profiles(topology, edge)):
                tasks.append((topology, edge, profile, values))

    def solve_basis(task) -> CoarseBasisFunction:
        topology, edge, profile, values = task
        operator = operators[topology.shape]
        field = solve_subdomain(operator, np.zeros(topology.shape), {edge: values})
        face_data = {
            other: extract_face_data(
                field,
                other,
                operator.conditions[other],
                values if other is edge else None,
                topology.h,
            )
            for other in topology.interface_edges()
        }
        return CoarseBasisFunction(topology.index, edge, profile, field, face_data)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            basis = list(pool.map(solve_basis, tasks))
    else:
        basis = [solve_basis(task) for task in tasks]

    owned, stacked_fields, stacked_faces = [], [], []
    start = 0
    for topology in decomposition.subdomains:
        count = PROFILES * len(topology.interface_edges())
        members = basis[start:start + count]
        owned.append(slice(start, start + count))
        stacked_fields.append(
            np.stack([b.field for b in members]) if members else np.zeros((0,) + topology.shape)
        )
        stacked_faces.append({
            edge: (
                np.stack([b.face_data[edge].trace for b in members]),
                np.stack([b.face_data[edge].flux for b in members]),
            )
            for edge in topology.interface_edges()
        })
        start += count

    logger.info("coarse space: %d basis functions on %d subdomains", len(basis), len(decomposition.subdomains))
    return CoarseSpace(decomposition, basis, owned, stacked_fields, stacked_faces)


def row_offsets(decomposition: Decomposition) -> List[int]:
    """First row of each interface's block; the block holds ``low->high`` then ``high->low`` rows."""
    offsets, start = [], 0
    for interface in decomposition.interfaces:
        offsets.append(start)
        start += 2 * interface.faces
    offsets.append(start)
    return offsets


def assemble_jump_system(coarse_space: CoarseSpace, q: float) -> JumpSystem:
    """Assemble the jump matrix of the coarse basis and factorize its regularized normal matrix.

    Raises:
        ValueError: q <= 0
        SolverError: Cholesky failure after regularization
    """
    if not q > 0:
        raise ValueError(f"q must be > 0, got {q}")

    decomposition = coarse_space.decomposition
    offsets = row_offsets(decomposition)
    rows, cols, vals = [], [], []

    for column, basis in enumerate(coarse_space.basis):
        topology = decomposition.subdomains[basis.owner]
        for edge, face_data in basis.face_data.items():
            link = topology.links[edge]
            faces = face_data.trace.size
            start = offsets[link.interface_id]
            own_block, other_block = (start, start + faces) if link.orientation > 0 else (start + faces, start)
            indices = np.arange(faces)
            rows.append(own_block + indices)
            vals.append(robin_combine(face_data, q, Side.OWNER))
            rows.append(other_block + indices)
            vals.append(-robin_combine(face_data, q, Side.OPPOSITE))
            cols.extend([np.full(faces, column)] * 2)

    shape = (offsets[-1], coarse_space.dimension)
    if rows:
        matrix = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)
    else:
        matrix = sp.csr_matrix(shape)

    weight = decomposition.h
    normal = weight * (matrix.T @ matrix).toarray()
    regularized = normal.copy()
    if regularized.size:
        regularized[np.diag_indices_from(regularized)] += REGULARIZATION * normal.diagonal().max()
    try:
        factor = cho_factor(regularized) if regularized.size else None
    except LinAlgError as e:
        raise SolverError(f"jump normal matrix factorization failed for q={q}: {e}") from e

    logger.debug("jump system q=%g: %d rows, %d columns", q, shape[0], shape[1])
    return JumpSystem(q=q, matrix=matrix, weight=weight, normal=normal, factor=factor, row_offsets=offsets)


def jump_residual(
    decomposition: Decomposition,
    face_data: Mapping[FaceKey, FaceData],
    q: float,
) -> np.ndarray:
    """Oriented Robin jumps of a state, in jump-system row order.

    Row ``(i, j)`` at a face is ``(phi_i + q u_i) - (-phi_j + q u_j)`` with
    fluxes outward from their own side.
    """
    blocks = []
    for interface in decomposition.interfaces:
        low = face_data[(decomposition.subdomain(interface.low).index, interface.low_edge)]
        high = face_data[(decomposition.subdomain(interface.high).index, interface.high_edge)]
        blocks.append(robin_combine(low, q, Side.OWNER) - robin_combine(high, q, Side.OPPOSITE))
        blocks.append(robin_combine(high, q, Side.OWNER) - robin_combine(low, q, Side.OPPOSITE))
    return np.concatenate(blocks) if blocks else np.zeros(0)


def weighted_norm_sq(residual: np.ndarray, weight: float) -> float:
    """Midpoint-rule L2(interfaces) norm squared: ``sum(h r^2)``."""
    return float(weight * np.dot(residual, residual))


def solve_rjmin(jump_system: JumpSystem, residual: np.ndarray) -> np.ndarray:
    """Coefficients minimizing ``|r0 + M c|_W^2``."""
    if jump_system.factor is None:
        return np.zeros(jump_system.dimension)
    rhs = jump_system.weight * (jump_system.matrix.T @ residual)
    return -cho_solve(jump_system.factor, rhs)


def optimality_residual(jump_system: JumpSystem, residual: np.ndarray, coefficients: np.ndarray) -> float:
    """Relative normal-equation residual ``|M^T W (r0 + M c)| / (1 + |M^T W r0|)``."""
    matrix, weight = jump_system.matrix, jump_system.weight
    gradient = weight * (matrix.T @ (residual + matrix @ coefficients))
    return float(np.linalg.norm(gradient) / (1.0 + np.linalg.norm(weight * (matrix.T @ residual))))


def apply_correction(
    fields: List[CellField],
    face_data: Mapping[FaceKey, FaceData],
    coarse_space: CoarseSpace,
    coefficients: np.ndarray,
) -> Tuple[List[CellField], Dict[FaceKey, FaceData]]:
    """Add the coarse function with ``coefficients`` to cell values and interface data alike."""
    new_fields = []
    new_faces: Dict[FaceKey, FaceData] = {}
    for index, field in enumerate(fields):
        local = coefficients[coarse_space.owned[index]]
        if local.size:
            new_fields.append(field + np.tensordot(local, coarse_space.stacked_fields[index], axes=1))
        else:
            new_fields.append(field.copy())
        for edge, (traces, fluxes) in coarse_space.stacked_faces[index].items():
            current = face_data[(index, edge)]
            new_faces[(index, edge)] = FaceData(current.trace + local @ traces, current.flux + local @ fluxes)
    return new_fields, new_faces
