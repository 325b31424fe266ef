"""Exact quadratic optimal transport on finite spaces.

Solves the transportation LP with cost d^2, returns the optimal coupling
together with a canonical pair of Kantorovich potentials (phi, phi^c) in
d^2/2 units: phi is c-concave (phi^cc = phi), is the c-transform of its own
phi^c restricted to supp(nu), and vanishes at the first support point of mu.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from .errors import DegenerateBasis, Infeasible
from .space import Coupling, ProbMeasure, Space

GAP_TOL = 1e-9
SLACK_TOL = 1e-8
_SUPPORT_EPS = 1e-14


def c_transform(space: Space, phi: np.ndarray, support: np.ndarray | None = None):
    """phi^c(y) = min_x d^2(x,y)/2 - phi(x), exact pointwise minimum.

    `support` optionally restricts the minimum to a subset of x indices.
    """
    phi = np.asarray(phi, dtype=float)
    half_d2 = 0.5 * space.d2
    if support is not None:
        vals = half_d2[support, :] - phi[support, None]
    else:
        vals = half_d2 - phi[:, None]
    return vals.min(axis=0)


def is_c_concave(space: Space, phi: np.ndarray, tol: float = 1e-9):
    """Test phi = phi^cc; returns (bool, deficit). phi^cc >= phi always."""
    phicc = c_transform(space, c_transform(space, phi))
    deficit = float(np.abs(phicc - np.asarray(phi, dtype=float)).max())
    return deficit <= tol, deficit


def truncation_sequence(phi: np.ndarray, levels=None):
    """Truncations phi_n = min(n, phi); stabilizes once n >= max(phi)."""
    phi = np.asarray(phi, dtype=float)
    if levels is None:
        top = int(np.ceil(phi.max())) + 1
        levels = range(min(0, int(np.floor(phi.min()))), top + 1)
    return [(n, np.minimum(float(n), phi)) for n in levels]


@dataclass(frozen=True)
class OTResult:
    w2: float
    coupling: Coupling
    phi: np.ndarray
    phi_c: np.ndarray
    dual_value: float
    primal_value: float

    @property
    def gap(self) -> float:
        return abs(0.5 * self.primal_value - self.dual_value)


def _transport_lp(space: Space, a: np.ndarray, b: np.ndarray, cost: np.ndarray):
    """min <cost, gamma> over the transportation polytope; returns gamma, duals."""
    n = space.n
    # equality rows: n row sums then n column sums (rank 2n-1, HiGHS copes)
    cell = np.arange(n * n)
    r_idx = np.concatenate([cell // n, n + cell % n])
    c_idx = np.concatenate([cell, cell])
    A_eq = csr_matrix((np.ones(2 * n * n), (r_idx, c_idx)), shape=(2 * n, n * n))
    b_eq = np.concatenate([a, b])
    res = linprog(
        c=cost.ravel(),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-11,
            "dual_feasibility_tolerance": 1e-11,
        },
    )
    if res.status != 0 or res.x is None:
        raise Infeasible(f"transport LP failed: {res.message}")
    gamma = np.clip(res.x.reshape(n, n), 0.0, None)
    duals = np.asarray(res.eqlin.marginals, dtype=float)
    return gamma, duals[:n], duals[n:]


def solve_w2(space: Space, mu: ProbMeasure, nu: ProbMeasure) -> OTResult:
    """Exact optimal coupling and c-concave dual potentials for cost d^2."""
    a = mu.mass(space)
    b = nu.mass(space)
    cost = space.d2
    gamma, _, v = _transport_lp(space, a, b, cost)

    supp_nu = np.flatnonzero(b > _SUPPORT_EPS)
    # LP duals live in d^2 units; potentials use d^2/2. Closing under the
    # c-transform restricted to supp(nu) enforces phi = (phi^c|supp nu)^c.
    psi = 0.5 * v
    phi = c_transform(space, psi, support=supp_nu)
    # replace psi by the honest c-transform of phi before normalizing
    phi_c = c_transform(space, phi)

    supp_mu = np.flatnonzero(a > _SUPPORT_EPS)
    shift = phi[supp_mu[0]]
    phi = phi - shift
    phi_c = phi_c + shift

    primal = float((gamma * cost).sum())
    dual = float(phi @ a + phi_c @ b)
    result = OTResult(
        w2=float(np.sqrt(max(primal, 0.0))),
        coupling=Coupling(mass=gamma),
        phi=phi,
        phi_c=phi_c,
        dual_value=dual,
        primal_value=primal,
    )
    if result.gap > GAP_TOL:
        raise DegenerateBasis(
            f"duality gap {result.gap:.3e} exceeds {GAP_TOL}; solver output rejected"
        )
    return result


def slackness_residual(space: Space, result: OTResult, atol: float = 1e-12) -> float:
    """max over gamma(x,y) > 0 of |phi(x) + phi^c(y) - d^2(x,y)/2|."""
    g = result.coupling.mass
    xs, ys = np.nonzero(g > atol)
    if xs.size == 0:
        return 0.0
    vals = result.phi[xs] + result.phi_c[ys] - 0.5 * space.d2[xs, ys]
    return float(np.abs(vals).max())


# ---------------------------------------------------------------------------
# Independent oracle: enumerate transportation-polytope vertices. A vertex is
# a basic feasible solution supported on a spanning-tree-size cell subset, so
# for tiny supports we can enumerate every candidate basis directly.
# ---------------------------------------------------------------------------

def enumerate_vertex_value(
    dist2: np.ndarray, a: np.ndarray, b: np.ndarray, feas_tol: float = 1e-10
):
    """Minimal cost over all transportation-polytope vertices (brute force).

    Supports up to ~4x4 cells; cost matrix is d^2 restricted to the supports.
    Returns (best_cost, best_plan) with the plan embedded on the support grid.
    """
    ia = np.flatnonzero(a > _SUPPORT_EPS)
    ib = np.flatnonzero(b > _SUPPORT_EPS)
    p, q = len(ia), len(ib)
    if p * q > 36:
        raise ValueError("vertex enumeration is for tiny supports only")
    ar, br = a[ia], b[ib]
    cost = dist2[np.ix_(ia, ib)]
    cells = [(i, j) for i in range(p) for j in range(q)]
    k = p + q - 1
    # column of the constraint matrix for each cell: p row sums, q-1 col sums
    col_of = np.zeros((len(cells), k))
    for c, (i, j) in enumerate(cells):
        col_of[c, i] = 1.0
        if j < q - 1:
            col_of[c, p + j] = 1.0
    subsets = np.array(list(combinations(range(len(cells)), k)))
    mats = col_of[subsets].transpose(0, 2, 1)  # (S, k, k)
    dets = np.linalg.det(mats)
    ok = np.abs(dets) > 1e-12
    rhs = np.concatenate([ar, br[:-1]])
    sols = np.linalg.solve(mats[ok], np.broadcast_to(rhs, (int(ok.sum()), k)))
    feas = np.all(sols >= -feas_tol, axis=1)
    if not np.any(feas):
        raise Infeasible("no feasible vertex found")
    cost_flat = cost.ravel()
    costs = (sols * cost_flat[subsets[ok]]).sum(axis=1)
    costs = np.where(feas, costs, np.inf)
    best_at = int(np.argmin(costs))
    plan = np.zeros(p * q)
    np.add.at(plan, subsets[ok][best_at], np.clip(sols[best_at], 0.0, None))
    best = (float(costs[best_at]), plan.reshape(p, q))
    full = np.zeros_like(dist2)
    full[np.ix_(ia, ib)] = best[1]
    return best[0], full


def quantile_coupling(xs: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Monotone (quantile) coupling of two mass vectors on sorted 1d points."""
    order = np.argsort(xs, kind="stable")
    n = len(xs)
    gamma = np.zeros((n, n))
    ai = bi = 0
    ra, rb = a[order].copy(), b[order].copy()
    while ai < n and bi < n:
        if ra[ai] <= 1e-18:
            ai += 1
            continue
        if rb[bi] <= 1e-18:
            bi += 1
            continue
        move = min(ra[ai], rb[bi])
        gamma[order[ai], order[bi]] += move
        ra[ai] -= move
        rb[bi] -= move
    return gamma


def has_crossing(xs: np.ndarray, gamma: np.ndarray, atol: float = 1e-12) -> bool:
    """True if two coupling atoms cross on the line (x1<x2 but y1>y2)."""
    xi, yi = np.nonzero(gamma > atol)
    px, py = xs[xi], xs[yi]
    lt_x = px[:, None] < px[None, :] - 1e-15
    gt_y = py[:, None] > py[None, :] + 1e-15
    return bool(np.any(lt_x & gt_y))
