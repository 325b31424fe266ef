"""Finite metric measure spaces, probability measures and couplings.

A Space is a finite point set with a validated distance matrix, a strictly
positive reference measure m, and a weighted edge structure that the
calculus modules use. Probability measures are stored as densities with
respect to m, so the compression constant max_x rho(x) is always finite
and available.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AsymmetricDistance,
    BadSpec,
    DisconnectedGraph,
    NonpositiveMass,
    TriangleViolation,
)

# Absolute slack for the triangle check: legitimate Euclidean matrices can
# violate the inequality by a few ulps.
_TRI_TOL = 1e-12
_MASS_TOL = 1e-12
_MARGINAL_TOL = 1e-10


@dataclass(frozen=True)
class Space:
    """Validated finite metric measure space with an edge structure.

    Attributes
    ----------
    points : list
        Point ids, in storage order. All arrays are indexed in this order.
    dist : (n, n) ndarray
        Symmetric distance matrix, zero diagonal, positive off-diagonal.
    measure : (n,) ndarray
        Strictly positive reference masses m(x).
    edges : list of (i, j, w)
        Undirected weighted edges, canonical i < j, w > 0.
    """

    points: list
    dist: np.ndarray
    measure: np.ndarray
    edges: list
    # caches, filled in __post_init__
    d2: np.ndarray = field(init=False, repr=False)
    edge_i: np.ndarray = field(init=False, repr=False)
    edge_j: np.ndarray = field(init=False, repr=False)
    edge_w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "d2", self.dist**2)
        ei = np.array([e[0] for e in self.edges], dtype=np.intp)
        ej = np.array([e[1] for e in self.edges], dtype=np.intp)
        ew = np.array([e[2] for e in self.edges], dtype=float)
        object.__setattr__(self, "edge_i", ei)
        object.__setattr__(self, "edge_j", ej)
        object.__setattr__(self, "edge_w", ew)
        for a in (self.dist, self.measure, self.d2, ei, ej, ew):
            a.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def total_mass(self) -> float:
        return float(self.measure.sum())

    @property
    def resolution(self) -> float:
        """Longest edge; the spatial discretization scale of the graph."""
        return float(self.dist[self.edge_i, self.edge_j].max())

    def neighbors(self, x: int) -> np.ndarray:
        mask_i = self.edge_i == x
        mask_j = self.edge_j == x
        return np.concatenate([self.edge_j[mask_i], self.edge_i[mask_j]])


@dataclass(frozen=True)
class ProbMeasure:
    """Probability measure as a density rho relative to a Space's m."""

    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        object.__setattr__(self, "density", d)
        d.setflags(write=False)

    @property
    def compression(self) -> float:
        """Smallest C with mu <= C m, i.e. max_x rho(x)."""
        return float(self.density.max())

    def mass(self, space: Space) -> np.ndarray:
        """Per-point masses rho(x) m(x)."""
        return self.density * space.measure


@dataclass(frozen=True)
class Coupling:
    """Joint mass matrix gamma(x, y) >= 0 over point pairs."""

    mass: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.mass, dtype=float)
        object.__setattr__(self, "mass", g)
        g.setflags(write=False)

    def cost(self, space: Space) -> float:
        """Transport cost sum gamma(x,y) d^2(x,y)."""
        return float((self.mass * space.d2).sum())


def build_space(points, dist, measure, edges) -> Space:
    """Validate inputs eagerly and return an immutable Space.

    Raises AsymmetricDistance, TriangleViolation (with a witness triple),
    NonpositiveMass, or DisconnectedGraph on invalid input.
    """
    points = list(points)
    n = len(points)
    dist = np.array(dist, dtype=float)
    measure = np.array(measure, dtype=float)
    if dist.shape != (n, n):
        raise BadSpec(f"dist must be {n}x{n}, got {dist.shape}")
    if measure.shape != (n,):
        raise BadSpec(f"measure must have length {n}")

    if np.any(np.diag(dist) != 0.0):
        raise AsymmetricDistance("dist has nonzero diagonal")
    if not np.array_equal(dist, dist.T):
        raise AsymmetricDistance("dist is not symmetric")
    off = dist + np.eye(n)
    if np.any(off <= 0.0):
        i, j = np.argwhere(off <= 0.0)[0]
        raise AsymmetricDistance(f"d({points[i]},{points[j]}) <= 0 for distinct points")

    # d(i,k) <= d(i,j) + d(j,k) for all triples, vectorized over j
    scale = float(dist.max()) if n > 1 else 1.0
    for j in range(n):
        slack = dist - (dist[:, j][:, None] + dist[j, :][None, :])
        bad = np.argwhere(slack > _TRI_TOL * max(scale, 1.0))
        if bad.size:
            i, k = bad[0]
            raise TriangleViolation(
                points[i], points[j], points[k], dist[i, k], dist[i, j], dist[j, k]
            )

    if np.any(measure <= 0.0) or not np.isfinite(measure.sum()):
        raise NonpositiveMass("reference measure must be strictly positive and finite")

    canon = []
    seen = set()
    for e in edges:
        i, j, w = int(e[0]), int(e[1]), float(e[2])
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise BadSpec(f"bad edge ({i},{j})")
        if w <= 0.0:
            raise BadSpec(f"edge ({i},{j}) has nonpositive weight {w}")
        if dist[i, j] <= 0.0:
            raise BadSpec(f"edge ({i},{j}) joins points at distance 0")
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        canon.append((key[0], key[1], w))
    canon.sort()

    # connectivity of the edge graph
    if n > 1:
        adj = [[] for _ in range(n)]
        for i, j, _ in canon:
            adj[i].append(j)
            adj[j].append(i)
        stack, visited = [0], {0}
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y not in visited:
                    visited.add(y)
                    stack.append(y)
        if len(visited) != n:
            raise DisconnectedGraph(
                f"edge graph has {n - len(visited)} unreachable points"
            )

    return Space(points=points, dist=dist, measure=measure, edges=canon)


def prob_measure(space: Space, density) -> ProbMeasure:
    """Validate sum rho m = 1 within 1e-12 and wrap."""
    rho = np.asarray(density, dtype=float)
    if rho.shape != (space.n,):
        raise BadSpec(f"density must have length {space.n}")
    if np.any(rho < 0.0):
        raise BadSpec("density must be nonnegative")
    total = float(rho @ space.measure)
    if abs(total - 1.0) > _MASS_TOL:
        raise BadSpec(f"density integrates to {total!r}, not 1")
    return ProbMeasure(density=rho)


def normalize(space: Space, weights) -> ProbMeasure:
    """Turn nonnegative per-point weights into a ProbMeasure (density form)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0.0) or w.sum() <= 0.0:
        raise BadSpec("weights must be nonnegative with positive total")
    return ProbMeasure(density=w / float(w @ space.measure))


def dirac(space: Space, x: int) -> ProbMeasure:
    """Unit mass at point index x, as a density."""
    rho = np.zeros(space.n)
    rho[x] = 1.0 / space.measure[x]
    return ProbMeasure(density=rho)


def check_coupling(space: Space, gamma: Coupling, mu: ProbMeasure, nu: ProbMeasure):
    """Marginal deficits of gamma against (mu, nu). Diagnostic, never raises."""
    g = gamma.mass
    row_err = float(np.abs(g.sum(axis=1) - mu.mass(space)).max())
    col_err = float(np.abs(g.sum(axis=0) - nu.mass(space)).max())
    return {"row": row_err, "col": col_err, "max": max(row_err, col_err)}


def product_coupling(space: Space, mu: ProbMeasure, nu: ProbMeasure) -> Coupling:
    return Coupling(mass=np.outer(mu.mass(space), nu.mass(space)))


def identity_coupling(space: Space, mu: ProbMeasure) -> Coupling:
    return Coupling(mass=np.diag(mu.mass(space)))


# ---------------------------------------------------------------------------
# Generators. All produce connected spaces with total mass 1; the random one
# uses numpy's PCG64 stream so outputs are reproducible from the seed alone.
# ---------------------------------------------------------------------------

def _shortest_path_closure(n, edges):
    """All-pairs shortest path over weighted edges (Floyd-Warshall)."""
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for i, j, length in edges:
        d[i, j] = min(d[i, j], length)
        d[j, i] = d[i, j]
    for k in range(n):
        d = np.minimum(d, d[:, k][:, None] + d[k, :][None, :])
    return d


def _mean_mass_weight(measure, i, j, length):
    # w = mean endpoint mass / edge length^2: makes the quadratic calculus
    # and the graph Laplacian consistent with their continuum counterparts
    # under grid refinement.
    return 0.5 * (measure[i] + measure[j]) / length**2


def generate(name: str, *args, seed: int | None = None) -> Space:
    """Build a standard Space.

    Supported: two_point(d), path_grid_1d(N), grid_2d(N), cycle(N),
    random_euclidean(n, dim) with a mandatory 64-bit seed.
    """
    if name == "two_point":
        (d,) = args or (1.0,)
        d = float(d)
        if d <= 0:
            raise BadSpec("two_point needs d > 0")
        dist = np.array([[0.0, d], [d, 0.0]])
        # unit edge weight: the canonical 2x2 Dirichlet form
        return build_space([0, 1], dist, [0.5, 0.5], [(0, 1, 1.0)])

    if name == "path_grid_1d":
        (N,) = args
        N = int(N)
        if N < 1:
            raise BadSpec("path_grid_1d needs N >= 1")
        xs = np.arange(N + 1) / N
        dist = np.abs(xs[:, None] - xs[None, :])
        m = np.full(N + 1, 1.0 / (N + 1))
        edges = [
            (i, i + 1, _mean_mass_weight(m, i, i + 1, 1.0 / N)) for i in range(N)
        ]
        return build_space(list(range(N + 1)), dist, m, edges)

    if name == "grid_2d":
        (N,) = args
        N = int(N)
        if N < 2:
            raise BadSpec("grid_2d needs N >= 2")
        h = 1.0 / (N - 1)
        idx = lambda i, j: i * N + j
        n = N * N
        m = np.full(n, 1.0 / n)
        raw = []
        for i in range(N):
            for j in range(N):
                if i + 1 < N:
                    raw.append((idx(i, j), idx(i + 1, j), h))
                if j + 1 < N:
                    raw.append((idx(i, j), idx(i, j + 1), h))
        dist = _shortest_path_closure(n, raw)
        edges = [(a, b, _mean_mass_weight(m, a, b, length)) for a, b, length in raw]
        return build_space(list(range(n)), dist, m, edges)

    if name == "cycle":
        (N,) = args
        N = int(N)
        if N < 3:
            raise BadSpec("cycle needs N >= 3")
        m = np.full(N, 1.0 / N)
        raw = [(i, (i + 1) % N, 1.0) for i in range(N)]
        dist = _shortest_path_closure(N, raw)
        edges = [(a, b, _mean_mass_weight(m, a, b, 1.0)) for a, b, _ in raw]
        return build_space(list(range(N)), dist, m, edges)

    if name == "random_euclidean":
        n, dim = args
        n, dim = int(n), int(dim)
        if n < 2 or dim < 1:
            raise BadSpec("random_euclidean needs n >= 2, dim >= 1")
        if seed is None:
            raise BadSpec("random_euclidean needs a seed")
        rng = np.random.Generator(np.random.PCG64(int(seed)))
        pts = rng.random((n, dim))
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=-1))
        dist = 0.5 * (dist + dist.T)
        np.fill_diagonal(dist, 0.0)
        m = np.full(n, 1.0 / n)
        edges = [
            (i, j, _mean_mass_weight(m, i, j, dist[i, j]))
            for i in range(n)
            for j in range(i + 1, n)
        ]
        return build_space(list(range(n)), dist, m, edges)

    raise BadSpec(f"unknown space spec {name!r}")


def parse_spec(text: str):
    """Parse CLI spec strings like 'path_grid_1d(32)' or 'two_point(2.0)'."""
    text = text.strip()
    if "(" not in text:
        return text, ()
    if not text.endswith(")"):
        raise BadSpec(f"malformed spec {text!r}")
    name, body = text[:-1].split("(", 1)
    args = tuple(float(a) for a in body.split(",") if a.strip()) if body.strip() else ()
    return name.strip(), args
