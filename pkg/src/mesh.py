"""Cartesian box decomposition of the square domain and its interface topology."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import DecompositionSpec

logger = logging.getLogger(__name__)

SubdomainId = Tuple[int, int]


class Edge(str, Enum):
    WEST = "W"
    EAST = "E"
    SOUTH = "S"
    NORTH = "N"

    @property
    def opposite(self) -> "Edge":
        return _OPPOSITE[self]

    @property
    def is_vertical(self) -> bool:
        """West and east edges are vertical lines; their faces are ordered by y."""
        return self in (Edge.WEST, Edge.EAST)


_OPPOSITE = {
    Edge.WEST: Edge.EAST,
    Edge.EAST: Edge.WEST,
    Edge.SOUTH: Edge.NORTH,
    Edge.NORTH: Edge.SOUTH,
}

EDGE_ORDER = (Edge.WEST, Edge.EAST, Edge.SOUTH, Edge.NORTH)


@dataclass(frozen=True)
class InterfaceLink:
    """One subdomain's oriented view of an interface.

    ``orientation`` is +1 on the lower-index side (the canonical normal points
    out of it) and -1 on the higher-index side.
    """

    neighbor: SubdomainId
    interface_id: int
    orientation: int


@dataclass(frozen=True)
class Interface:
    interface_id: int
    low: SubdomainId
    low_edge: Edge
    high: SubdomainId
    high_edge: Edge
    faces: int
    length: float

    def side(self, sid: SubdomainId) -> Tuple[Edge, int]:
        """Edge and orientation sign of ``sid`` on this interface."""
        if sid == self.low:
            return self.low_edge, 1
        if sid == self.high:
            return self.high_edge, -1
        raise ValueError(f"subdomain {sid} does not touch interface {self.interface_id}")

    def other(self, sid: SubdomainId) -> SubdomainId:
        if sid == self.low:
            return self.high
        if sid == self.high:
            return self.low
        raise ValueError(f"subdomain {sid} does not touch interface {self.interface_id}")


@dataclass(frozen=True)
class SubdomainTopology:
    sid: SubdomainId
    index: int
    origin: Tuple[float, float]
    cells_x: int
    cells_y: int
    h: float
    links: Dict[Edge, Optional[InterfaceLink]] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.cells_x, self.cells_y)

    def is_interface(self, edge: Edge) -> bool:
        return self.links.get(edge) is not None

    def interface_edges(self) -> List[Edge]:
        return [edge for edge in EDGE_ORDER if self.is_interface(edge)]

    def exterior_edges(self) -> List[Edge]:
        return [edge for edge in EDGE_ORDER if not self.is_interface(edge)]

    def face_count(self, edge: Edge) -> int:
        return self.cells_y if edge.is_vertical else self.cells_x

    def edge_length(self, edge: Edge) -> float:
        return self.face_count(edge) * self.h

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates as two ``(cells_x, cells_y)`` arrays."""
        x = self.origin[0] + (np.arange(self.cells_x) + 0.5) * self.h
        y = self.origin[1] + (np.arange(self.cells_y) + 0.5) * self.h
        return np.meshgrid(x, y, indexing="ij")

    def pattern(self) -> Tuple[bool, ...]:
        """Which edges are interfaces, in ``EDGE_ORDER``; operators are shared per pattern."""
        return tuple(self.is_interface(edge) for edge in EDGE_ORDER)


@dataclass(frozen=True)
class Decomposition:
    spec: DecompositionSpec
    subdomains: List[SubdomainTopology]
    interfaces: List[Interface]

    @property
    def h(self) -> float:
        return self.spec.h

    def subdomain(self, sid: SubdomainId) -> SubdomainTopology:
        return self.subdomains[subdomain_index(self.spec, sid)]

    def neighbors(self, sid: SubdomainId) -> List[SubdomainId]:
        topology = self.subdomain(sid)
        return [topology.links[edge].neighbor for edge in topology.interface_edges()]

    @property
    def interface_face_count(self) -> int:
        return sum(interface.faces for interface in self.interfaces)


def subdomain_index(spec: DecompositionSpec, sid: SubdomainId) -> int:
    ix, iy = sid
    if not (0 <= ix < spec.subdomains_x and 0 <= iy < spec.subdomains_y):
        raise ValueError(f"subdomain {sid} outside the {spec.subdomains_x}x{spec.subdomains_y} layout")
    return iy * spec.subdomains_x + ix


def build_decomposition(spec: DecompositionSpec) -> Decomposition:
    """Lay out the box subdomains and number their interfaces.

    Vertical interfaces (between ``(ix, iy)`` and ``(ix+1, iy)``) come first,
    then horizontal ones, giving dense ids ``0..K-1``. Each interface is stored
    once, oriented from the lower-index subdomain to the higher one.
    """
    h = spec.h
    links: Dict[SubdomainId, Dict[Edge, Optional[InterfaceLink]]] = {
        (ix, iy): {edge: None for edge in EDGE_ORDER}
        for iy in range(spec.subdomains_y)
        for ix in range(spec.subdomains_x)
    }
    interfaces: List[Interface] = []

    def connect(low: SubdomainId, low_edge: Edge, high: SubdomainId, faces: int) -> None:
        interface_id = len(interfaces)
        interfaces.append(
            Interface(
                interface_id=interface_id,
                low=low,
                low_edge=low_edge,
                high=high,
                high_edge=low_edge.opposite,
                faces=faces,
                length=faces * h,
            )
        )
        links[low][low_edge] = InterfaceLink(neighbor=high, interface_id=interface_id, orientation=1)
        links[high][low_edge.opposite] = InterfaceLink(neighbor=low, interface_id=interface_id, orientation=-1)

    for iy in range(spec.subdomains_y):
        for ix in range(spec.subdomains_x - 1):
            connect((ix, iy), Edge.EAST, (ix + 1, iy), spec.cells_y)
    for iy in range(spec.subdomains_y - 1):
        for ix in range(spec.subdomains_x):
            connect((ix, iy), Edge.NORTH, (ix, iy + 1), spec.cells_x)

    subdomains = []
    for iy in range(spec.subdomains_y):
        for ix in range(spec.subdomains_x):
            sid = (ix, iy)
            subdomains.append(
                SubdomainTopology(
                    sid=sid,
                    index=subdomain_index(spec, sid),
                    origin=(ix * spec.cells_x * h, iy * spec.cells_y * h),
                    cells_x=spec.cells_x,
                    cells_y=spec.cells_y,
                    h=h,
                    links=links[sid],
                )
            )

    logger.debug(
        "built %dx%d decomposition with %d interfaces, h=%g",
        spec.subdomains_x, spec.subdomains_y, len(interfaces), h,
    )
    return Decomposition(spec=spec, subdomains=subdomains, interfaces=interfaces)


def face_centers(topology: SubdomainTopology, edge: Edge) -> np.ndarray:
    """Face centers of one subdomain edge as rows ``(x, y, s)``.

    ``s`` is the arclength from the edge's lower-coordinate end, so both
    sides of an interface enumerate their faces in the same order.
    """
    count = topology.face_count(edge)
    s = (np.arange(count) + 0.5) * topology.h
    x0, y0 = topology.origin
    if edge is Edge.WEST:
        x, y = np.full(count, x0), y0 + s
    elif edge is Edge.EAST:
        x, y = np.full(count, x0 + topology.cells_x * topology.h), y0 + s
    elif edge is Edge.SOUTH:
        x, y = x0 + s, np.full(count, y0)
    else:
        x, y = x0 + s, np.full(count, y0 + topology.cells_y * topology.h)
    return np.column_stack([x, y, s])


def edge_cells(field: np.ndarray, edge: Edge) -> np.ndarray:
    """Cell values adjacent to ``edge``, in ascending-``s`` order."""
    if edge is Edge.WEST:
        return field[0, :]
    if edge is Edge.EAST:
        return field[-1, :]
    if edge is Edge.SOUTH:
        return field[:, 0]
    return field[:, -1]
