"""Two-body Birman-Schwinger operator, critical couplings, and the ODE oracle.

Only the s-wave sector is discretized: the ground state and the threshold
phenomena of the nonnegative radial potential class live there.  The radial
reduction of V^(1/2) (H0 + z^2)^(-1) V^(1/2) has kernel

    k_z(r, r') = V^(1/2)(alpha r) g_z(r, r') V^(1/2)(alpha r'),
    g_z(r, r') = (exp(-z|r-r'|) - exp(-z(r+r'))) / (2 z),   g_0 = min(r, r'),

and the symmetrized Nystrom matrix of k_z keeps the discrete spectrum real.
Everything the matrix route produces is cross-checkable against a fixed-step
4th-order shooting integration of the radial equation, which never sees the
kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import AccuracyError, BracketError, DegenerateInputError
from .model import JacobiFrame, PairPotential, ParticleSystem, jacobi_frame
from .quadrature import (
    QuadratureRule,
    composite_gauss_legendre,
    gauss_legendre,
    panel_partial_integrals,
    semi_infinite_grid,
)


def swave_green(z: float, r: np.ndarray, rp: np.ndarray) -> np.ndarray:
    """s-wave radial kernel of (-Lap + z^2)^(-1) on L^2(dr)."""
    r = np.asarray(r, dtype=float)[:, None]
    rp = np.asarray(rp, dtype=float)[None, :]
    lo = np.minimum(r, rp)
    if z == 0.0:
        return np.broadcast_to(lo, np.broadcast_shapes(r.shape, rp.shape)).copy()
    # e^(-z|r-r'|) - e^(-z(r+r')) = e^(-z|r-r'|) (1 - e^(-2 z min)); expm1
    # keeps the small-z regime free of cancellation
    return np.exp(-z * np.abs(r - rp)) * (-np.expm1(-2.0 * z * lo)) / (2.0 * z)


def _psi_phi(z: float, ri, rj):
    """Separable factor psi(ri) phi(rj) of the Green kernel (rj 'below' branch).

    g_z(r, r') = phi_z(min) psi_z(max) with phi_z(t) = sinh(z t)/z and
    psi_z(t) = exp(-z t); the paired form below stays finite for every
    within-panel argument order.
    """
    ri = np.asarray(ri, dtype=float)
    rj = np.asarray(rj, dtype=float)
    if z == 0.0:
        return np.broadcast_to(rj, np.broadcast_shapes(ri.shape, rj.shape)).astype(float)
    return np.exp(-z * (ri - rj)) * (-np.expm1(-2.0 * z * rj)) / (2.0 * z)


def bs_radial_rule(V: PairPotential, alpha: float, n: int = 128,
                   points_per_panel: int = 8, z: float = 0.0) -> QuadratureRule:
    """Graded composite rule covering the (scaled) reach of V^(1/2).

    The Birman-Schwinger kernel carries V^(1/2)(alpha r) on both slots, so a
    finite interval with the square-root decay resolved is exact to rounding.
    At large z the Green kernel sharpens to width 1/z; for decaying profiles
    the span is then capped so panels stay narrow enough for the
    product-integrated diagonal blocks (the truncated region contributes
    at most sup_{r>span} V / z^2).
    """
    if V.support_radius is not None:
        span = V.support_radius / alpha
    else:
        span = (8.0 if V.kind == "gaussian" else 60.0) * V.range_ / alpha
        if z > 0.0:
            span = min(span, max(30.0 / z, 10.0 * V.range_ / alpha))
    q = points_per_panel
    p = max(2, n // q)
    edges = span * (np.arange(p + 1) / p) ** 1.5
    return composite_gauss_legendre(edges, q)


def green_row_operator(z: float, rule: QuadratureRule) -> np.ndarray:
    """Matrix B with (B f)_i ~ integral g_z(r_i, r') f(r') dr' at the nodes.

    Off-diagonal panel blocks are plain Nystrom (the kernel is smooth
    there); blocks on the panel diagonal are product-integrated through the
    semi-separable split, which removes the |r - r'| kink error entirely.
    Panels too wide for the exponential factors fall back to plain Nystrom,
    which is harmless because the kernel has decayed across such panels.
    """
    r, w = rule.nodes, rule.weights
    B = swave_green(z, r, r) * w[None, :]
    if rule.spec[0] != "composite":
        return B
    _, edges, q = rule.spec
    tau_ref = panel_partial_integrals(q)
    for k in range(len(edges) - 1):
        a, b = edges[k], edges[k + 1]
        if z * (b - a) > 4.0:
            # polynomial interpolation cannot track exp(z r) across such a
            # panel; leave it plain (these panels sit where V has decayed)
            continue
        sl = slice(k * q, (k + 1) * q)
        rs = r[sl]
        tau = 0.5 * (b - a) * tau_ref
        ri = rs[:, None] * np.ones((1, q))
        rj = np.ones((q, 1)) * rs[None, :]
        below = _psi_phi(z, ri, rj)   # psi(r_i) phi(r_j)
        above = _psi_phi(z, rj, ri)   # phi(r_i) psi(r_j)
        B[sl, sl] = below * tau + above * (w[sl][None, :] - tau)
    return B


def bs_matrix(V: PairPotential, frame: JacobiFrame, z: float,
              rule: QuadratureRule) -> np.ndarray:
    """Symmetrized Nystrom matrix of the s-wave Birman-Schwinger kernel."""
    if z < 0.0:
        raise ValueError("spectral parameter z must be >= 0")
    r = rule.nodes
    sqv = np.sqrt(V.profile(frame.alpha * r))
    sw = np.sqrt(rule.weights)
    B = green_row_operator(z, rule)
    m = (sqv * sw)[:, None] * B * (sqv / sw)[None, :]
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class BSOperator:
    """Quadrature-discretized Birman-Schwinger operator at energy -z^2."""

    potential: PairPotential
    frame: JacobiFrame
    z: float
    rule: QuadratureRule
    matrix: np.ndarray

    @property
    def nodes(self) -> np.ndarray:
        return self.rule.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.rule.weights

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def max_eigenvalue(self) -> float:
        return float(self.eigenvalues()[-1])


def bs_operator(V: PairPotential, frame: JacobiFrame, z: float,
                rule: QuadratureRule | None = None) -> BSOperator:
    if rule is None:
        rule = bs_radial_rule(V, frame.alpha, z=z)
    return BSOperator(V, frame, z, rule, bs_matrix(V, frame, z, rule))


def bs_max_eigenvalue(V: PairPotential, frame: JacobiFrame, z: float,
                      rule: QuadratureRule | None = None,
                      check_convergence: bool = False) -> float:
    """Largest eigenvalue mu(z) of the discretized BS operator.

    mu is continuous and strictly decreasing in z.  With
    ``check_convergence`` the node count is doubled and the two values
    must agree to 1e-6 relative.
    """
    if rule is None:
        rule = bs_radial_rule(V, frame.alpha, z=z)
    mu = float(np.linalg.eigvalsh(bs_matrix(V, frame, z, rule))[-1])
    if check_convergence:
        fine = float(np.linalg.eigvalsh(bs_matrix(V, frame, z, rule.refined()))[-1])
        if abs(fine - mu) > 1e-6 * max(abs(fine), 1e-300):
            raise AccuracyError(
                f"BS eigenvalue not converged at n={len(rule.nodes)}: {mu!r} vs {fine!r}"
            )
    return mu


def critical_coupling(V: PairPotential, frame: JacobiFrame,
                      rule: QuadratureRule | None = None) -> float:
    """lambda* = 1/mu(0), the coupling of the zero-energy resonance."""
    mu0 = bs_max_eigenvalue(V, frame, 0.0, rule)
    if mu0 <= 1e-14:
        raise DegenerateInputError("potential has no attraction: mu(0) = 0")
    return 1.0 / mu0


@dataclass(frozen=True)
class MarginReport:
    """R7 subcriticality margin of a system: eps = min_pairs lambda* - lambda."""

    coupling: float
    lambda_stars: dict
    eps: float
    satisfied: bool


def subcriticality_margin(system: ParticleSystem) -> MarginReport:
    """Margin eps > 0 certifies that no pair is bound or resonant."""
    stars = {}
    for pair, pot in system.potentials.items():
        frame = jacobi_frame(system, pair)
        try:
            stars[pair] = critical_coupling(pot, frame)
        except DegenerateInputError:
            stars[pair] = math.inf
    eps = min(stars.values()) - system.coupling
    return MarginReport(
        coupling=system.coupling,
        lambda_stars=stars,
        eps=eps,
        satisfied=eps > 0.0,
    )


def twobody_binding_energy(V: PairPotential, frame: JacobiFrame, lam: float,
                           rule: QuadratureRule | None = None,
                           ztol: float = 1e-8):
    """E2 = -z*^2 with lambda mu(z*) = 1, or None for subcritical coupling."""
    if lam <= 0.0:
        raise ValueError("coupling must be positive")

    def mu(z):
        # rule=None lets each z get a grid resolving the 1/z kernel width
        return bs_max_eigenvalue(V, frame, z, rule)

    if lam * mu(0.0) <= 1.0:
        return None
    z_hi = 1.0
    for _ in range(64):
        if lam * mu(z_hi) < 1.0:
            break
        z_hi *= 2.0
    else:
        raise BracketError("could not bracket the binding momentum")
    z_lo = 0.0
    while z_hi - z_lo > ztol:
        mid = 0.5 * (z_lo + z_hi)
        if lam * mu(mid) > 1.0:
            z_lo = mid
        else:
            z_hi = mid
    z_star = 0.5 * (z_lo + z_hi)
    return -z_star ** 2


def _bs_wavefunction(V: PairPotential, frame: JacobiFrame, lam: float,
                     rule: QuadratureRule | None = None):
    """Radial ground state u on demand, reconstructed from the BS eigenvector."""
    e2 = twobody_binding_energy(V, frame, lam, rule)
    if e2 is None:
        raise ValueError("no bound state: coupling is subcritical")
    z_star = math.sqrt(-e2)
    wrule = rule if rule is not None else bs_radial_rule(V, frame.alpha, z=z_star)
    m = bs_matrix(V, frame, z_star, wrule)
    vals, vecs = np.linalg.eigh(m)
    psi = vecs[:, -1]
    phi = psi / np.sqrt(wrule.weights)
    sqv = np.sqrt(V.profile(frame.alpha * wrule.nodes))

    def u(s):
        s = np.asarray(s, dtype=float)
        g = swave_green(z_star, s, wrule.nodes)
        return lam * g @ (wrule.weights * sqv * phi)

    return u, z_star, e2


def twobody_size(V: PairPotential, frame: JacobiFrame, lam: float,
                 rule: QuadratureRule | None = None,
                 n_moment: int = 256):
    """<r^2> of the normalized radial ground state (Jacobi radial variable)."""
    u, z_star, _ = _bs_wavefunction(V, frame, lam, rule)
    scale = max(3.0 * V.range_ / frame.alpha, 3.0 / z_star)
    mrule = semi_infinite_grid(n_moment, scale)
    uu = u(mrule.nodes) ** 2
    norm = float(np.dot(mrule.weights, uu))
    return float(np.dot(mrule.weights, mrule.nodes ** 2 * uu)) / norm


def twobody_tail_masses(V: PairPotential, frame: JacobiFrame, lam: float,
                        radii, rule: QuadratureRule | None = None):
    """T(R) = |chi_{r>R} u|^2 for the normalized ground state."""
    u, z_star, _ = _bs_wavefunction(V, frame, lam, rule)
    scale = max(3.0 * V.range_ / frame.alpha, 3.0 / z_star)
    mrule = semi_infinite_grid(512, scale)
    norm = float(np.dot(mrule.weights, u(mrule.nodes) ** 2))
    out = []
    for R in radii:
        inner_rule = gauss_legendre(512, 0.0, float(R))
        inner = float(np.dot(inner_rule.weights, u(inner_rule.nodes) ** 2))
        out.append((float(R), max(0.0, 1.0 - inner / norm)))
    return out


# ---------------------------------------------------------------------------
# Shooting oracle (independent of the kernel route)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShootingResult:
    nodes: int
    defect: float
    u_end: float
    du_end: float
    r_end: float


def _integration_span(V: PairPotential, frame: JacobiFrame) -> float:
    """Span covering the potential; exterior behaviour is handled in closed form."""
    return 1.25 * V.effective_radius / frame.alpha + 1.0


def shooting_oracle(V: PairPotential, frame: JacobiFrame, lam: float,
                    energy: float, n_steps: int = 20000,
                    r_max: float | None = None) -> ShootingResult:
    """Integrate -u'' - lam V(alpha r) u = E u outward from u(0) = 0.

    Fixed-step RK4; returns the sign-change count and the matching defect
    u' + kappa u at the outer boundary (kappa = sqrt(-E); at E = 0 the
    defect is u', the coefficient of the growing exterior solution).
    For discontinuous profiles the step is snapped to the support edge so
    every RK4 step sees a smooth right-hand side.
    """
    if lam < 0.0:
        raise ValueError("coupling must be >= 0")
    if energy > 0.0:
        raise ValueError("oracle only treats E <= 0")
    if r_max is None:
        r_max = _integration_span(V, frame)
    h = r_max / n_steps
    edge = V.support_radius
    if edge is not None:
        edge_r = edge / frame.alpha
        n_inner = max(1, int(math.ceil(edge_r / h)))
        h = edge_r / n_inner
        n_steps = int(math.ceil(r_max / h))

    grid = h * np.arange(n_steps + 1)
    # one-sided samples keep each RK4 step on a smooth branch of a
    # discontinuous profile (the edge sits exactly on a step boundary)
    eps = 1e-9 * h
    w_left = -(lam * V.profile(frame.alpha * (grid[:-1] + eps)) + energy)
    w_half = -(lam * V.profile(frame.alpha * (grid[:-1] + 0.5 * h)) + energy)
    w_right = -(lam * V.profile(frame.alpha * (grid[1:] - eps)) + energy)

    u, du = 0.0, 1.0
    nodes = 0
    prev = 0.0
    h2 = 0.5 * h
    for i in range(n_steps):
        w0 = w_left[i]
        wh = w_half[i]
        w1 = w_right[i]
        k1u, k1v = du, w0 * u
        k2u, k2v = du + h2 * k1v, wh * (u + h2 * k1u)
        k3u, k3v = du + h2 * k2v, wh * (u + h2 * k2u)
        k4u, k4v = du + h * k3v, w1 * (u + h * k3u)
        u_new = u + (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        du_new = du + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        u, du = u_new, du_new
        if prev != 0.0 and u != 0.0 and (prev < 0.0) != (u < 0.0):
            nodes += 1
        if u != 0.0:
            prev = u
        mag = max(abs(u), abs(du))
        if mag > 1e200:  # linear ODE: rescaling changes nothing observable
            u /= mag
            du /= mag
            prev = math.copysign(min(abs(prev), 1.0), prev)
    kappa = math.sqrt(-energy) if energy < 0.0 else 0.0
    scale = max(abs(u), abs(du), 1e-300)
    return ShootingResult(
        nodes=nodes,
        defect=(du + kappa * u) / scale,
        u_end=u,
        du_end=du,
        r_end=n_steps * h,
    )


def total_nodes(res: ShootingResult, energy: float) -> int:
    """Node count including zeros beyond the integration span.

    Outside the (numerically) vanished potential the solution is linear at
    E = 0 or a combination P e^(k r) + Q e^(-k r) at E < 0, so whether one
    more zero occurs is decided by the end values alone.
    """
    u, du = res.u_end, res.du_end
    if energy == 0.0:
        extra = 1 if u * du < 0.0 else 0
    else:
        kappa = math.sqrt(-energy)
        p = u + du / kappa
        q = u - du / kappa
        extra = 1 if (p * q < 0.0 and abs(q) > abs(p)) else 0
    return res.nodes + extra


def oracle_critical_coupling(V: PairPotential, frame: JacobiFrame,
                             lam_hi: float = 64.0, n_steps: int = 20000) -> float:
    """Threshold coupling from the zero-energy exterior slope sign change."""

    def slope(lam):
        res = shooting_oracle(V, frame, lam, 0.0, n_steps=n_steps)
        return res.du_end / max(abs(res.u_end), abs(res.du_end), 1e-300)

    lo = 1e-8
    if slope(lo) <= 0.0:
        raise BracketError("zero-energy slope negative at tiny coupling")
    hi = 1.0
    while slope(hi) > 0.0:
        hi *= 2.0
        if hi > lam_hi:
            raise BracketError(f"no threshold found below coupling {lam_hi}")
    return brentq(slope, hi / 2.0, hi, xtol=1e-12, rtol=8.9e-16)


def _oracle_solution(V, frame, lam, energy, n_steps=20000, r_max=None):
    """Full RK4 trajectory (grid, u) used for oracle moments."""
    if r_max is None:
        r_max = _integration_span(V, frame)
    h = r_max / n_steps
    edge = V.support_radius
    if edge is not None:
        edge_r = edge / frame.alpha
        n_inner = max(1, int(math.ceil(edge_r / h)))
        h = edge_r / n_inner
        n_steps = int(math.ceil(r_max / h))
    grid = h * np.arange(n_steps + 1)
    eps = 1e-9 * h
    w_left = -(lam * V.profile(frame.alpha * (grid[:-1] + eps)) + energy)
    w_half = -(lam * V.profile(frame.alpha * (grid[:-1] + 0.5 * h)) + energy)
    w_right = -(lam * V.profile(frame.alpha * (grid[1:] - eps)) + energy)
    us = np.empty(n_steps + 1)
    u, du = 0.0, 1.0
    us[0] = 0.0
    h2 = 0.5 * h
    for i in range(n_steps):
        w0, wh, w1 = w_left[i], w_half[i], w_right[i]
        k1u, k1v = du, w0 * u
        k2u, k2v = du + h2 * k1v, wh * (u + h2 * k1u)
        k3u, k3v = du + h2 * k2v, wh * (u + h2 * k2u)
        k4u, k4v = du + h * k3v, w1 * (u + h * k3u)
        u = u + (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        du = du + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        us[i + 1] = u
    return grid, us, du


def oracle_binding_energy(V: PairPotential, frame: JacobiFrame, lam: float,
                          n_steps: int = 20000) -> float:
    """Ground-state energy by node-count bisection polished on the defect."""
    e_lo = -1.01 * lam * float(np.max(V.profile(np.linspace(0.0, V.effective_radius, 512))))
    e_hi = -1e-13

    def nodes(E):
        return total_nodes(shooting_oracle(V, frame, lam, E, n_steps=n_steps), E)

    if nodes(e_hi) < 1:
        raise BracketError("no bound state at this coupling")
    if nodes(e_lo) > 0:
        raise BracketError("energy scan floor still has a node")
    lo, hi = e_lo, e_hi
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if nodes(mid) >= 1:
            hi = mid
        else:
            lo = mid
    # defect is smooth in E across the eigenvalue; polish inside the bracket
    def defect(E):
        return shooting_oracle(V, frame, lam, E, n_steps=n_steps).defect

    d_lo, d_hi = defect(lo), defect(hi)
    if d_lo * d_hi < 0.0:
        return brentq(defect, lo, hi, xtol=1e-14, rtol=8.9e-16)
    return 0.5 * (lo + hi)


def oracle_mean_square_radius(V: PairPotential, frame: JacobiFrame, lam: float,
                              n_steps: int = 40000) -> float:
    """<r^2> of the oracle ground state, exterior tail added in closed form."""
    energy = oracle_binding_energy(V, frame, lam)
    kappa = math.sqrt(-energy)
    r_max = _integration_span(V, frame)
    grid, us, _ = _oracle_solution(V, frame, lam, energy, n_steps=n_steps, r_max=r_max)
    uu = us ** 2
    norm = float(np.trapezoid(uu, grid))
    mom = float(np.trapezoid(grid ** 2 * uu, grid))
    u_end = us[-1]
    rm = grid[-1]
    norm += u_end ** 2 / (2.0 * kappa)
    mom += u_end ** 2 * (rm ** 2 / (2.0 * kappa) + rm / (2.0 * kappa ** 2)
                         + 1.0 / (4.0 * kappa ** 3))
    return mom / norm


# ---------------------------------------------------------------------------
# Sweep support
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoBodyPoint:
    """One row of a two-body control sweep."""

    coupling: float
    mu0: float
    lambda_star: float
    E2: float
    r2: float
    eps_R7: float
    tail: tuple


def sweep_two_body(V: PairPotential, frame: JacobiFrame, couplings,
                   tail_radii=None, rule: QuadratureRule | None = None):
    """Control sweep lambda -> (E2, <r^2>, tails) for the spreading contrast."""
    mu0 = bs_max_eigenvalue(V, frame, 0.0, rule)
    lam_star = 1.0 / mu0
    if tail_radii is None:
        tail_radii = tuple(k * V.range_ / frame.alpha for k in (1.0, 2.0, 4.0, 8.0, 16.0))
    points = []
    for lam in couplings:
        e2 = twobody_binding_energy(V, frame, lam, rule)
        if e2 is None:
            raise BracketError(f"coupling {lam} is subcritical; no control point")
        r2 = twobody_size(V, frame, lam, rule)
        tail = twobody_tail_masses(V, frame, lam, tail_radii, rule)
        points.append(TwoBodyPoint(
            coupling=float(lam),
            mu0=mu0,
            lambda_star=lam_star,
            E2=e2,
            r2=r2,
            eps_R7=lam_star - float(lam),
            tail=tuple(tail),
        ))
    return points


def fit_size_exponent(points) -> float:
    """Least-squares slope of log <r^2> against log 1/|E2|."""
    xs = np.log([1.0 / abs(p.E2) for p in points])
    ys = np.log([p.r2 for p in points])
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)
