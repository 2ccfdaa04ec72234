"""Structured triangulations of the unit square split by the membrane x = 1/2.

Vertices are numbered row by row, ``j * (M + 1) + i`` at ``(i / M, j / M)``.
Each subsquare is cut along its lower-left to upper-right diagonal into two
counter-clockwise triangles.  Edges carry a global orientation from the
smaller to the larger vertex index; local edge ``k`` of a triangle is the one
opposite its local vertex ``k`` and runs from local vertex ``k + 1`` to
``k + 2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class EdgeTag(enum.IntEnum):
    INTERIOR = 0
    INTERFACE = 1
    DIRICHLET = 2
    NEUMANN = 3


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangle mesh with tagged edges.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (T, 3) int array, counter-clockwise
    edges : (E, 2) int array, ``edges[e, 0] < edges[e, 1]``
    edge_to_triangles : (E, 2) int array, ``-1`` marks a missing neighbour
    triangle_edges : (T, 3) int array, global edge of each local edge
    edge_tags : (E,) int array of :class:`EdgeTag` values
    M : int
        Subdivisions per side; ``h = 1 / M``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_to_triangles: np.ndarray
    triangle_edges: np.ndarray
    edge_tags: np.ndarray
    M: int

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def edge_normals(self) -> np.ndarray:
        """Unit normals of the globally oriented edges (tangent rotated clockwise)."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    def edges_with_tag(self, tag: EdgeTag) -> np.ndarray:
        return np.flatnonzero(self.edge_tags == tag)

    def plus_side(self) -> np.ndarray:
        """Boolean mask of triangles lying in x > 1/2."""
        centroids = self.vertices[self.triangles].mean(axis=1)
        return centroids[:, 0] > 0.5

    def outward_normal(self, edge: int, triangle: int) -> np.ndarray:
        """Unit normal of ``edge`` pointing out of ``triangle``."""
        if triangle not in self.edge_to_triangles[edge]:
            raise ValueError(f"edge {edge} is not incident to triangle {triangle}")
        n = self.edge_normals()[edge]
        a, b = self.edges[edge]
        opposite = [v for v in self.triangles[triangle] if v != a and v != b][0]
        if np.dot(self.vertices[opposite] - self.vertices[a], n) > 0:
            n = -n
        return n

    def locate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Index of a triangle containing each point (structured layout only).

        Points on shared edges are assigned to one of the incident triangles.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        M = self.M
        i = np.clip(np.floor(x * M).astype(np.int64), 0, M - 1)
        j = np.clip(np.floor(y * M).astype(np.int64), 0, M - 1)
        upper = (y * M - j) > (x * M - i)
        return 2 * (j * M + i) + upper

    def dump(self, path: str | Path) -> None:
        """Write a plain-text debugging dump (vertices, triangles, tagged edges)."""
        lines = [f"vertices {self.n_vertices}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices]
        lines.append(f"triangles {self.n_triangles}")
        lines += [" ".join(map(str, t)) for t in self.triangles]
        lines.append(f"edges(tag) {self.n_edges}")
        lines += [
            f"{a} {b} {EdgeTag(t).name}"
            for (a, b), t in zip(self.edges, self.edge_tags)
        ]
        Path(path).write_text("\n".join(lines) + "\n")


def build_structured(M: int) -> Mesh:
    """Build the ``M x M`` structured triangulation of the unit square.

    ``M`` must be even so that the gridline x = 1/2 exists and the membrane
    is resolved by mesh edges.
    """
    if isinstance(M, bool) or not isinstance(M, (int, np.integer)):
        raise TypeError(f"M must be an integer, got {M!r}")
    M = int(M)
    if M < 2 or M % 2:
        raise ValueError(
            f"M={M}: M must be a positive even integer so that the interface "
            "x = 1/2 is resolved by mesh edges"
        )

    n = M + 1
    g = np.arange(n) / M
    xx, yy = np.meshgrid(g, g)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(M), np.arange(M))
    i, j = i.ravel(), j.ravel()
    v00 = j * n + i
    v10 = v00 + 1
    v01 = v00 + n
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * M * M, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    local = np.stack(
        [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1
    )
    local = np.sort(local, axis=2).reshape(-1, 2)
    edges, inverse = np.unique(local, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    triangle_edges = inverse.reshape(-1, 3)

    E = len(edges)
    edge_to_triangles = -np.ones((E, 2), dtype=np.int64)
    owner = np.repeat(np.arange(len(triangles)), 3)
    for e, t in zip(inverse, owner):
        slot = 0 if edge_to_triangles[e, 0] < 0 else 1
        edge_to_triangles[e, slot] = t

    pa = vertices[edges[:, 0]]
    pb = vertices[edges[:, 1]]
    tags = np.full(E, EdgeTag.INTERIOR, dtype=np.int64)
    boundary = edge_to_triangles[:, 1] < 0
    horizontal = pa[:, 1] == pb[:, 1]
    vertical = pa[:, 0] == pb[:, 0]
    tags[boundary & horizontal & np.isin(pa[:, 1], (0.0, 1.0))] = EdgeTag.DIRICHLET
    tags[boundary & vertical & np.isin(pa[:, 0], (0.0, 1.0))] = EdgeTag.NEUMANN
    tags[~boundary & (pa[:, 0] == 0.5) & (pb[:, 0] == 0.5)] = EdgeTag.INTERFACE

    return Mesh(
        vertices=_frozen(vertices),
        triangles=_frozen(triangles),
        edges=_frozen(edges),
        edge_to_triangles=_frozen(edge_to_triangles),
        triangle_edges=_frozen(triangle_edges),
        edge_tags=_frozen(tags),
        M=M,
    )
