"""Closed-form constants behind the 2√a spreading-speed result.

Everything here is a pure function of scalars; the simulation side checks
its measurements against these values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .core import DomainError, Params


def kpp_speed(a: float) -> float:
    if a <= 0:
        raise DomainError("growth rate must be positive")
    return 2.0 * math.sqrt(a)


def envelope_speed(k: float, a: float) -> float:
    """Speed (k² + a)/k of the exponential supersolution M·exp(−k(x·ξ − ct))."""
    if k <= 0:
        raise DomainError(f"decay rate must be positive, got {k}")
    return (k * k + a) / k


def _check_eps(eps: float, a: float):
    if a <= 0:
        raise DomainError("growth rate must be positive")
    if not 0 < eps < math.sqrt(a):
        raise DomainError(f"eps must lie in (0, sqrt(a)) = (0, {math.sqrt(a):.6g}), got {eps}")


def choose_abar(eps: float, a: float) -> float:
    """Smallest ā with 4ā − c² ≥ ε√a for every |c| ≤ 2√a − ε."""
    _check_eps(eps, a)
    sa = math.sqrt(a)
    return ((2 * sa - eps) ** 2 + eps * sa) / 4


def cell_halfwidth(eps: float, a: float, dim: int) -> float:
    _check_eps(eps, a)
    return 2 * math.pi * math.sqrt(dim) / math.sqrt(eps * math.sqrt(a))


def principal_eigenvalue(c: float, abar: float, eps: float, a: float, dim: int) -> float:
    """Principal eigenvalue of Δφ + cξ·∇φ + āφ on the box (−l, l)^N with Dirichlet walls."""
    _check_eps(eps, a)
    cmax = 2 * math.sqrt(a) - eps
    if abs(c) > cmax * (1 + 1e-14):
        raise DomainError(f"|c| = {abs(c)} exceeds 2*sqrt(a) - eps = {cmax}")
    ell = cell_halfwidth(eps, a, dim)
    return (4 * abar - c * c - dim * math.pi ** 2 / ell ** 2) / 4


def eigenvalue_floor(eps: float, a: float) -> float:
    return 3 * eps * math.sqrt(a) / 16


def eigenfunction(x, xi, c: float, eps: float, a: float, dim: int) -> np.ndarray:
    """φ(x) = exp(−(c/2) ξ·x) ∏ cos(π x_i / (2l)).

    ``x`` has shape (..., dim). Points outside the closed box raise.
    """
    ell = cell_halfwidth(eps, a, dim)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        x = x.reshape(-1, dim) if dim == 1 else x
    xi = np.asarray(xi, dtype=float).reshape(dim)
    if not math.isclose(float(np.linalg.norm(xi)), 1.0, rel_tol=1e-12):
        raise DomainError("xi must be a unit vector")
    if np.any(np.abs(x) > ell * (1 + 1e-12)):
        raise DomainError("point outside the closed box [-l, l]^N")
    proj = x @ xi
    cosines = np.prod(np.cos(np.pi * x / (2 * ell)), axis=-1)
    return np.exp(-0.5 * c * proj) * cosines


def persistence_time(eta: float, big_m: float, lam: float) -> float:
    """Smallest T ≥ 1 with exp(−λT)·M ≤ η."""
    if eta <= 0 or big_m <= 0 or lam <= 0:
        raise DomainError("eta, M and lambda must be positive")
    return max(1.0, math.log(big_m / eta) / lam)


def sphere_area(dim: int) -> float:
    return 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)


def gaussian_tail(radius: float, dim: int, power: int = 0) -> float:
    """∫_{|z|>R} |z|^power exp(−|z|²) dz over R^dim, via the upper incomplete gamma."""
    s = (dim + power) / 2
    r2 = max(radius, 0.0) ** 2
    return sphere_area(dim) * 0.5 * math.gamma(s) * float(special.gammaincc(s, r2))


def _tails_ok(radius: float, eta: float, dim: int) -> bool:
    return max(gaussian_tail(radius, dim, 0), gaussian_tail(radius, dim, 1)) <= eta


def persistence_radius(eta: float, T: float, a: float, dim: int, ell: float,
                       tol: float = 1e-9) -> float:
    """Smallest L ≥ l·√N (so B_L ⊃ D_l) meeting both Gaussian tail bounds.

    The tails are evaluated at R = (L − 4T√a) / (2√(2T)).
    """
    if eta <= 0:
        raise DomainError("eta must be positive")
    if T < 1:
        raise DomainError("T must be at least 1")
    shift = 4 * T * math.sqrt(a)
    scale = 2 * math.sqrt(2 * T)

    def ok(L: float) -> bool:
        return _tails_ok((L - shift) / scale, eta, dim)

    lo = ell * math.sqrt(dim)
    if ok(lo):
        return lo
    hi = max(lo, shift) + scale
    while not ok(hi):
        hi = lo + 2 * (hi - lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def m_tilde(big_m: float, lam: float, mu: float, dim: int) -> float:
    """Bound factor for v and ∇v on the inner ball once u is small on the outer one."""
    if min(big_m, lam, mu) <= 0:
        raise DomainError("inputs must be positive")
    pi_n = math.pi ** (dim / 2)
    first = 1 + mu * big_m / (lam * pi_n) + mu / lam
    g = mu / pi_n * lam ** -0.5 * math.sqrt(math.pi)
    second = 1 + g * big_m + g
    return max(first, second)


def envelope_v_coefficient(big_m: float, a: float, mu: float, lam: float) -> float:
    if min(big_m, a, mu, lam) <= 0:
        raise DomainError("inputs must be positive")
    return mu * big_m / (a + lam)


@dataclass
class TheoryBundle:
    params: Params
    eps: float
    abar: float
    ell: float
    lambda_floor: float
    kpp_speed: float
    big_m: float | None = None
    lambda_min: float = field(default=float("nan"))
    m_tilde: float | None = None
    envelope_speeds: dict[float, float] = field(default_factory=dict)

    def eigenvalue(self, c: float) -> float:
        p = self.params
        return principal_eigenvalue(c, self.abar, self.eps, p.a, p.dim)

    def t_of_eta(self, eta: float) -> float:
        if self.big_m is None:
            raise DomainError("T(eta) needs the sup-bound M")
        return persistence_time(eta, self.big_m, self.params.lam)

    def l_of_eta(self, eta: float) -> float:
        p = self.params
        return persistence_radius(eta, self.t_of_eta(eta), p.a, p.dim, self.ell)

    def to_dict(self, etas=(), n_c: int = 101) -> dict:
        p = self.params
        cmax = 2 * math.sqrt(p.a) - self.eps
        cs = np.linspace(-cmax, cmax, n_c)
        lams = [self.eigenvalue(c) for c in cs]
        out = {
            "params": p.to_dict(),
            "eps": self.eps,
            "abar": self.abar,
            "ell": self.ell,
            "lambda_at_0": self.eigenvalue(0.0),
            "lambda_floor": self.lambda_floor,
            "lambda_min_on_grid": min(lams),
            "floor_holds": min(lams) >= self.lambda_floor - 1e-12,
            "kpp_speed": self.kpp_speed,
            "damping_condition": p.b > p.dim * p.mu * p.chi / 4,
            "envelope_speeds": {str(k): v for k, v in self.envelope_speeds.items()},
        }
        if self.big_m is not None:
            out["M"] = self.big_m
            out["m_tilde"] = self.m_tilde
            out["envelope_v_coefficient"] = envelope_v_coefficient(self.big_m, p.a, p.mu, p.lam)
            out["eta"] = {str(e): {"T": self.t_of_eta(e), "L": self.l_of_eta(e)} for e in etas}
        return out


def build_bundle(params: Params, eps: float, big_m: float | None = None,
                 ks=(0.25, 0.5, 0.75)) -> TheoryBundle:
    a = params.a
    abar = choose_abar(eps, a)
    bundle = TheoryBundle(
        params=params,
        eps=eps,
        abar=abar,
        ell=cell_halfwidth(eps, a, params.dim),
        lambda_floor=eigenvalue_floor(eps, a),
        kpp_speed=kpp_speed(a),
        big_m=big_m,
        envelope_speeds={k * math.sqrt(a): envelope_speed(k * math.sqrt(a), a) for k in ks},
    )
    cmax = 2 * math.sqrt(a) - eps
    bundle.lambda_min = min(bundle.eigenvalue(c) for c in (-cmax, 0.0, cmax))
    if big_m is not None:
        bundle.m_tilde = m_tilde(big_m, params.lam, params.mu, params.dim)
    return bundle


def eigen_residual(c: float, eps: float, a: float, dim: int, h: float,
                   points: np.ndarray, xi=None, abar: float | None = None) -> np.ndarray:
    """|Δφ + cξ·∇φ + āφ − λφ| at ``points`` with central differences of step h."""
    abar = choose_abar(eps, a) if abar is None else abar
    xi = np.eye(dim)[0] if xi is None else np.asarray(xi, float)
    lam = principal_eigenvalue(c, abar, eps, a, dim)
    points = np.asarray(points, float).reshape(-1, dim)

    def phi(p):
        return eigenfunction(p, xi, c, eps, a, dim)

    f0 = phi(points)
    lap = np.zeros(len(points))
    drift = np.zeros(len(points))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        fp, fm = phi(points + e), phi(points - e)
        lap += (fp - 2 * f0 + fm) / h ** 2
        drift += xi[i] * (fp - fm) / (2 * h)
    return np.abs(lap + c * drift + abar * f0 - lam * f0)
