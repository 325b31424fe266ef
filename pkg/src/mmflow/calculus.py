"""Discrete weak-gradient calculus on a Space's edge structure.

Two calculus kinds are supported:

* ``slope``: |Df|(x) = max over edge neighbors y of |f(y)-f(x)|/d(x,y).
  The one-sided objects D+-f(grad g) can differ, so this kind exercises the
  non-Hilbertian phenomena (strict-convexity failure, parallelogram defect).
* ``quadratic``: |Df|(x)^2 = sum_{y~x} w_xy (f(y)-f(x))^2 / (2 m(x)), the
  graph Dirichlet form with the 1/2 sharing each edge between its endpoints.
  Here D+ = D- in closed form and the seminorm is Hilbertian.

The mu-weighted seminorm is ||f||_mu^2 = sum |Df|^2(x) rho(x) m(x) and the
dual norm of a mass-conserving functional l is defined through
(1/2) N^2 = sup_f l(f) - (1/2) ||f||_mu^2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonMonotoneQuotient, SingularForm, Unrepresentable
from .space import ProbMeasure, Space

KINDS = ("slope", "quadratic")
_EPS_SWEEP_K = 40
_MONOTONE_TOL = 1e-9


def _check_kind(kind: str):
    if kind not in KINDS:
        raise ValueError(f"unknown calculus kind {kind!r}")


def _edge_slopes(space: Space, f: np.ndarray):
    """Per-directed-edge difference quotients (f(head)-f(tail))/d."""
    i, j = space.edge_i, space.edge_j
    d = space.dist[i, j]
    fwd = (f[j] - f[i]) / d
    return np.concatenate([fwd, -fwd]), np.concatenate([i, j])


def grad_modulus(space: Space, kind: str, f) -> np.ndarray:
    """Pointwise gradient modulus |Df| of the requested kind."""
    _check_kind(kind)
    f = np.asarray(f, dtype=float)
    if kind == "slope":
        slopes, tails = _edge_slopes(space, f)
        out = np.zeros(space.n)
        np.maximum.at(out, tails, np.abs(slopes))
        return out
    i, j = space.edge_i, space.edge_j
    contrib = space.edge_w * (f[j] - f[i]) ** 2
    acc = np.zeros(space.n)
    np.add.at(acc, i, contrib)
    np.add.at(acc, j, contrib)
    return np.sqrt(acc / (2.0 * space.measure))


def seminorm_mu(space: Space, kind: str, f, mu: ProbMeasure) -> float:
    """||f||_mu = sqrt( sum |Df|^2 rho m )."""
    g = grad_modulus(space, kind, f)
    return float(np.sqrt((g**2 * mu.density * space.measure).sum()))


def cheeger_energy(space: Space, kind: str, f) -> float:
    """E(f) = (1/2) sum |Df|^2(x) m(x)."""
    g = grad_modulus(space, kind, f)
    return 0.5 * float((g**2 * space.measure).sum())


def dirichlet_matrix(space: Space, mu: ProbMeasure | None = None) -> np.ndarray:
    """Matrix A with f.A f = ||f||_mu^2 for the quadratic kind.

    A is the weighted graph Laplacian with effective edge weights
    w_xy (rho(x)+rho(y))/2; mu = m (rho = 1) gives twice the Cheeger form.
    """
    n = space.n
    rho = np.ones(n) if mu is None else mu.density
    i, j, w = space.edge_i, space.edge_j, space.edge_w
    eff = w * 0.5 * (rho[i] + rho[j])
    A = np.zeros((n, n))
    np.add.at(A, (i, j), -eff)
    np.add.at(A, (j, i), -eff)
    np.add.at(A, (i, i), eff)
    np.add.at(A, (j, j), eff)
    return A


# ---------------------------------------------------------------------------
# One-sided derivatives D+-f(grad g)
# ---------------------------------------------------------------------------

def _neighbor_table(space: Space):
    """(lists of neighbor indices, distances) per point; cached on the Space."""
    cache = getattr(space, "_nbr_cache", None)
    if cache is not None:
        return cache
    nbrs = [[] for _ in range(space.n)]
    for i, j, _ in space.edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    table = [
        (np.array(ns, dtype=np.intp), space.dist[x, np.array(ns, dtype=np.intp)])
        for x, ns in enumerate(nbrs)
    ]
    object.__setattr__(space, "_nbr_cache", table)
    return table


def _padded_neighbors(space: Space):
    """Neighbor indices/distances as (n, D) arrays with a validity mask."""
    cache = getattr(space, "_pad_cache", None)
    if cache is not None:
        return cache
    table = _neighbor_table(space)
    deg = max(len(t[0]) for t in table)
    idx = np.zeros((space.n, deg), dtype=np.intp)
    dist = np.ones((space.n, deg))
    mask = np.zeros((space.n, deg), dtype=bool)
    for x, (ys, ds) in enumerate(table):
        idx[x, : len(ys)] = ys
        dist[x, : len(ys)] = ds
        mask[x, : len(ys)] = True
    object.__setattr__(space, "_pad_cache", (idx, dist, mask))
    return idx, dist, mask


def dpm(space: Space, kind: str, f, g):
    """One-sided derivatives (D-f(grad g), D+f(grad g)) as per-point fields.

    Quadratic kind: both equal sum_{y~x} w_xy (f(y)-f(x))(g(y)-g(x))/(2 m(x)).

    Slope kind: difference quotients (|D(g+eps f)|^2 - |Dg|^2)/(2 eps) on the
    grid eps = +-2^-k, k = 0..40; the quotient is nondecreasing in eps, so the
    reported value is the innermost grid value, certified monotone within
    1e-9 (NonMonotoneQuotient otherwise).
    """
    _check_kind(kind)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if kind == "quadratic":
        i, j, w = space.edge_i, space.edge_j, space.edge_w
        contrib = w * (f[j] - f[i]) * (g[j] - g[i])
        acc = np.zeros(space.n)
        np.add.at(acc, i, contrib)
        np.add.at(acc, j, contrib)
        val = acc / (2.0 * space.measure)
        return val, val.copy()

    idx, dist, mask = _padded_neighbors(space)
    a = np.where(mask, (g[idx] - g[:, None]) / dist, 0.0)
    b = np.where(mask, (f[idx] - f[:, None]) / dist, 0.0)
    a2 = np.where(mask, a * a, -np.inf)
    z_star = np.argmax(a2, axis=1)
    az = np.take_along_axis(a, z_star[:, None], 1).ravel()
    eps_grid = 2.0 ** -np.arange(_EPS_SWEEP_K + 1)
    out = {}
    for sign in (1.0, -1.0):
        prev = np.full(space.n, sign * np.inf)
        q = np.zeros(space.n)
        for eps in sign * eps_grid:
            vals = np.where(mask, (a + eps * b) ** 2, -np.inf)
            y_star = np.argmax(vals, axis=1)
            ay = np.take_along_axis(a, y_star[:, None], 1).ravel()
            by = np.take_along_axis(b, y_star[:, None], 1).ravel()
            # exact decomposition of (max(a+eps b)^2 - max a^2)/(2 eps): for
            # small eps the argmax ties z_star and the leading term vanishes
            # identically, avoiding cancellation noise.
            lead = (ay - az) * (ay + az) / (2.0 * eps)
            q = lead + ay * by + 0.5 * eps * by**2
            # the quotient is nondecreasing in eps (convexity), so sweeping
            # toward 0+ it must not rise and toward 0- it must not fall
            viol = (q - prev) if sign > 0 else (prev - q)
            worst = float(np.nanmax(viol)) if np.all(np.isfinite(prev)) else -np.inf
            if worst > _MONOTONE_TOL:
                x = int(np.argmax(viol))
                raise NonMonotoneQuotient(
                    f"quotient moved by {worst:.3e} against convexity at "
                    f"eps={eps} (point {x})"
                )
            prev = q
        out[sign] = q
    return out[-1.0], out[1.0]


def dpm_slope_exact(space: Space, f, g):
    """Envelope-formula oracle for the slope-kind D+- (independent of dpm).

    With a_y, b_y the per-edge slopes of g and f at x and A(x) the argmax set
    of a_y^2, D+ = max_{y in A} a_y b_y and D- = min_{y in A} a_y b_y.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    table = _neighbor_table(space)
    d_minus = np.zeros(space.n)
    d_plus = np.zeros(space.n)
    for x in range(space.n):
        ys, dists = table[x]
        a = (g[ys] - g[x]) / dists
        b = (f[ys] - f[x]) / dists
        act = np.abs(a**2 - np.max(a**2)) <= 0.0
        prods = a[act] * b[act]
        d_minus[x] = prods.min()
        d_plus[x] = prods.max()
    return d_minus, d_plus


# ---------------------------------------------------------------------------
# Dual norm of mass-conserving functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualNormResult:
    value: float
    potential: np.ndarray | None
    exact: bool


def dual_norm(
    space: Space, kind: str, ell, mu: ProbMeasure, ascent_iters: int = 500
) -> DualNormResult:
    """N with N^2/2 = sup_f ell(f) - ||f||_mu^2 / 2.

    Quadratic kind: exact. Solves A_mu phi = ell in the complement of the
    constants and returns N = ||phi||_mu together with phi. Raises
    Unrepresentable if ell does not annihilate constants and SingularForm if
    mu vanishes on a cut set of the edge graph.

    Slope kind: certified lower bound via projected subgradient ascent
    (step 1/sqrt(k)); the certificate is max_k ell(f_k)/||f_k||_mu, which
    never exceeds the true supremum. Flagged with exact=False.
    """
    _check_kind(kind)
    ell = np.asarray(ell, dtype=float)
    scale = max(float(np.abs(ell).max()), 1e-30)
    if abs(ell.sum()) > 1e-9 * max(scale, 1.0):
        raise Unrepresentable(f"functional has nonzero total {ell.sum():.3e}")

    if kind == "quadratic":
        A = dirichlet_matrix(space, mu)
        n = space.n
        # bordered system pins the additive constant; singular A_mu beyond
        # the constants (mu vanishing on a cut set) makes it rank deficient.
        B = np.zeros((n + 1, n + 1))
        B[:n, :n] = A
        B[n, :n] = 1.0
        B[:n, n] = 1.0
        rhs = np.concatenate([ell, [0.0]])
        try:
            sol = np.linalg.solve(B, rhs)
            phi = sol[:n]
        except np.linalg.LinAlgError:
            phi = None
        if phi is None or not np.all(np.isfinite(phi)):
            phi, *_ = np.linalg.lstsq(A, ell, rcond=None)
        residual = float(np.abs(A @ phi - ell).max())
        if residual > 1e-8 * max(scale, 1.0):
            raise SingularForm(
                f"mu-weighted form cannot represent the functional "
                f"(residual {residual:.3e}); mu vanishes on a cut set"
            )
        phi = phi - phi.mean()
        n2 = float(ell @ phi)
        return DualNormResult(value=float(np.sqrt(max(n2, 0.0))), potential=phi, exact=True)

    # slope kind: concave maximization of l(f) - ||f||^2_mu / 2
    rho_m = mu.density * space.measure
    idx, dist, mask = _padded_neighbors(space)
    f = np.zeros(space.n)
    best = 0.0
    step0 = 1.0 / max(scale, 1e-12)
    for k in range(1, ascent_iters + 1):
        norm = seminorm_mu(space, "slope", f, mu)
        if norm > 1e-15:
            best = max(best, float(ell @ f) / norm)
        slopes = np.where(mask, (f[idx] - f[:, None]) / dist, 0.0)
        t = np.argmax(np.abs(slopes), axis=1)
        s_t = np.take_along_axis(slopes, t[:, None], 1).ravel()
        d_t = np.take_along_axis(dist, t[:, None], 1).ravel()
        y_t = np.take_along_axis(idx, t[:, None], 1).ravel()
        coeff = rho_m * s_t / d_t
        grad = ell + coeff
        np.subtract.at(grad, y_t, coeff)
        f = f + (step0 / np.sqrt(k)) * grad
        f -= f.mean()
    norm = seminorm_mu(space, "slope", f, mu)
    if norm > 1e-15:
        best = max(best, float(ell @ f) / norm)
    return DualNormResult(value=best, potential=None, exact=False)


# ---------------------------------------------------------------------------
# Structure diagnostics
# ---------------------------------------------------------------------------

def parallelogram_deficit(space: Space, kind: str, f, g) -> float:
    """|  ||f+g||^2 + ||f-g||^2 - 2||f||^2 - 2||g||^2  | in the S^2 seminorm."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    sq = lambda h: 2.0 * cheeger_energy(space, kind, h)
    return abs(sq(f + g) + sq(f - g) - 2.0 * sq(f) - 2.0 * sq(g))


def chain_rule_residuals(space: Space, kind: str, f, phi, phi_prime):
    """Residuals of |D(phi o f)| against |phi' o f| |Df|.

    phi / phi_prime are callables (phi piecewise affine for the equality
    claim). Returns per-point residual |D(phi o f)| - |phi' o f||Df| and a
    boolean mask of points where exact equality is expected: every achieving
    comparison stays inside one affine piece of phi (slope kind) or all
    neighbors do (quadratic kind).
    """
    f = np.asarray(f, dtype=float)
    comp = grad_modulus(space, kind, phi(f))
    base = np.abs(phi_prime(f)) * grad_modulus(space, kind, f)
    residual = comp - base
    table = _neighbor_table(space)
    exact = np.zeros(space.n, dtype=bool)
    for x in range(space.n):
        ys, _ = table[x]
        vals = np.append(f[ys], f[x])
        # same affine piece <=> phi interpolates linearly between the values
        lo, hi = vals.min(), vals.max()
        mid = 0.5 * (lo + hi)
        lin = phi(np.array([lo]))[0] + phi_prime(np.array([mid]))[0] * (hi - lo)
        exact[x] = abs(lin - phi(np.array([hi]))[0]) <= 1e-12 * (1 + abs(hi) + abs(lo))
    return residual, exact


def structure_tests(space: Space, kind: str, sample_fns, mu: ProbMeasure | None = None):
    """Diagnostic report over a battery of functions.

    Covers the parallelogram rule, the D+/D- gap, chain rules for truncation
    and smooth Lipschitz reparametrizations, the Leibniz subadditivity with
    neighborhood-sup weighting, and convexity of f -> D+f(grad g).
    """
    _check_kind(kind)
    fns = [np.asarray(f, dtype=float) for f in sample_fns]
    report = {"kind": kind}

    deficit = 0.0
    for i in range(len(fns)):
        for j in range(i + 1, len(fns)):
            deficit = max(deficit, parallelogram_deficit(space, kind, fns[i], fns[j]))
    report["parallelogram_max_deficit"] = deficit

    gap = 0.0
    conv_viol = 0.0
    lam = 0.37
    for i in range(len(fns)):
        for j in range(len(fns)):
            if i == j:
                continue
            dm, dp = dpm(space, kind, fns[i], fns[j])
            gap = max(gap, float((dp - dm).max()))
            if len(fns) >= 3:
                k = (i + 1) % len(fns)
                if k != j:
                    mix = (1 - lam) * fns[i] + lam * fns[k]
                    _, dp_mix = dpm(space, kind, mix, fns[j])
                    _, dp_i = dpm(space, kind, fns[i], fns[j])
                    _, dp_k = dpm(space, kind, fns[k], fns[j])
                    conv_viol = max(
                        conv_viol,
                        float((dp_mix - (1 - lam) * dp_i - lam * dp_k).max()),
                    )
    report["dpm_max_gap"] = gap
    report["dplus_convexity_violation"] = conv_viol

    trunc_exact = 0.0
    trunc_gap_log = 0.0
    smooth_gap_log = 0.0
    for f in fns:
        level = 0.5 * float(np.abs(f).max()) or 1.0
        phi = lambda r: np.minimum(level, np.maximum(-level, r))
        phi_p = lambda r: ((r > -level) & (r < level)).astype(float)
        res, exact = chain_rule_residuals(space, kind, f, phi, phi_p)
        if exact.any():
            trunc_exact = max(trunc_exact, float(np.abs(res[exact]).max()))
        if (~exact).any():
            trunc_gap_log = max(trunc_gap_log, float(np.abs(res[~exact]).max()))
        width = max(2.0 * float(np.abs(f).max()), 1e-9)
        smooth = lambda r: width * np.tanh(r / width)
        smooth_p = lambda r: 1.0 / np.cosh(r / width) ** 2
        res_s, _ = chain_rule_residuals(space, kind, f, smooth, smooth_p)
        smooth_gap_log = max(smooth_gap_log, float(np.abs(res_s).max()))
    report["chain_rule_truncation_exact_residual"] = trunc_exact
    report["chain_rule_truncation_logged_gap"] = trunc_gap_log
    report["chain_rule_smooth_logged_gap"] = smooth_gap_log

    leib = 0.0
    table = _neighbor_table(space)
    for i in range(len(fns)):
        f, g = fns[i], fns[(i + 1) % len(fns)]
        lhs = grad_modulus(space, kind, f * g)
        df = grad_modulus(space, kind, f)
        dg = grad_modulus(space, kind, g)
        fmax = np.array(
            [max(abs(f[x]), np.abs(f[table[x][0]]).max()) for x in range(space.n)]
        )
        leib = max(leib, float((lhs - (fmax * dg + np.abs(g) * df)).max()))
    report["leibniz_neighborhood_residual"] = leib
    return report
