# ccr/copulas.py
"""
Bivariate copulas linking the count uniform u = F_N(.) and the severity
uniform v = F_Y(.).

Conventions:
    C(u, v)            copula CDF
    h(u, v) = dC/dv    conditional CDF of U given V = v
    vfunc(u, v) = dC/du conditional CDF of V given U = u
    90 degree rotation flips u, 270 degree rotation flips v; both negate tau.

All functions are vectorised and broadcast u, v with numpy rules. Inputs are
clamped to [EPS, 1 - EPS] before the family kernels; exact 0/1 boundaries are
restored afterwards so the copula axioms hold exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from ccr.errors import DomainError

logger = logging.getLogger(__name__)

EPS = 1e-12
FAMILIES = ("independence", "gaussian", "t", "clayton", "gumbel", "frank", "joe")
ARCHIMEDEAN = ("clayton", "gumbel", "frank", "joe")
ROTATIONS = (0, 90, 270)

# the ten variants compared when selecting a dependence structure
TABLE_VARIANTS = (
    ("gaussian", 0), ("t", 0),
    ("clayton", 90), ("clayton", 270),
    ("gumbel", 90), ("gumbel", 270),
    ("frank", 90), ("frank", 270),
    ("joe", 90), ("joe", 270),
)


@dataclass(frozen=True)
class CopulaSpec:
    """Copula family, association parameter, rotation and (t only) degrees of freedom."""

    family: str = "independence"
    theta: float = 0.0
    rotation: int = 0
    df: float | None = None

    def __post_init__(self):
        family = self.family.lower()
        object.__setattr__(self, "family", family)
        if family not in FAMILIES:
            raise DomainError(f"unknown copula family '{self.family}'")
        if self.rotation not in ROTATIONS:
            raise DomainError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        if self.rotation and family not in ARCHIMEDEAN:
            raise DomainError(f"{family} copula does not take a rotation")
        theta = float(self.theta)
        if family in ("gaussian", "t") and not -1.0 < theta < 1.0:
            raise DomainError(f"{family} correlation must lie in (-1, 1), got {theta}")
        if family == "clayton" and not theta > 0:
            raise DomainError(f"Clayton theta must be positive, got {theta}")
        if family in ("gumbel", "joe") and not theta >= 1.0:
            raise DomainError(f"{family} theta must be at least 1, got {theta}")
        if family == "frank" and not np.isfinite(theta):
            raise DomainError("Frank theta must be finite")
        if family == "t" and (self.df is None or not self.df > 0):
            raise DomainError(f"t copula needs positive df, got {self.df}")

    @property
    def label(self) -> str:
        name = {"t": "t", "independence": "Independence"}.get(self.family, self.family.capitalize())
        return f"{name}{self.rotation}" if self.rotation else name

    def kernel(self) -> "_Kernel":
        return _KERNELS[self.family](self.theta, self.df)


def _clip(x):
    return np.clip(np.asarray(x, dtype=float), EPS, 1.0 - EPS)


def _bisect(fn, target, lo=0.0, hi=1.0, iterations=64):
    """Vectorised bisection for nondecreasing fn on [lo, hi]."""
    target = np.asarray(target, dtype=float)
    lo = np.full(target.shape, lo, dtype=float)
    hi = np.full(target.shape, hi, dtype=float)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        below = fn(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# family kernels (unrotated, exchangeable)
# --------------------------------------------------------------------------

class _Kernel:
    def __init__(self, theta, df=None):
        self.theta = float(theta)
        self.df = df

    def cdf(self, u, v):
        raise NotImplementedError

    def hfunc(self, u, v):
        raise NotImplementedError

    def density(self, u, v):
        raise NotImplementedError

    def tau(self) -> float:
        raise NotImplementedError

    def hinv(self, w, v):
        w, v = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(v, dtype=float))
        return _bisect(lambda u: self.hfunc(_clip(u), v), w)


class _Independence(_Kernel):
    def cdf(self, u, v):
        return u * v

    def hfunc(self, u, v):
        return np.broadcast_to(u, np.broadcast(u, v).shape).astype(float)

    def hinv(self, w, v):
        return np.broadcast_to(w, np.broadcast(w, v).shape).astype(float)

    def density(self, u, v):
        return np.ones(np.broadcast(u, v).shape)

    def tau(self):
        return 0.0


def _bvn_cdf(h, k, rho):
    """Standard bivariate normal lower orthant probability via Owen's T."""
    h, k = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    h = np.where(h == 0.0, 1e-14, h)
    k = np.where(k == 0.0, 1e-14, k)
    s = np.sqrt((1.0 - rho) * (1.0 + rho))
    ah = (k - rho * h) / (h * s)
    ak = (h - rho * k) / (k * s)
    delta = np.where(h * k > 0, 0.0, 0.5)
    return 0.5 * special.ndtr(h) + 0.5 * special.ndtr(k) - special.owens_t(h, ah) - special.owens_t(k, ak) - delta


class _Gaussian(_Kernel):
    def cdf(self, u, v):
        return _bvn_cdf(special.ndtri(u), special.ndtri(v), self.theta)

    def hfunc(self, u, v):
        rho = self.theta
        return special.ndtr((special.ndtri(u) - rho * special.ndtri(v)) / np.sqrt(1.0 - rho * rho))

    def hinv(self, w, v):
        rho = self.theta
        return special.ndtr(special.ndtri(_clip(w)) * np.sqrt(1.0 - rho * rho) + rho * special.ndtri(v))

    def density(self, u, v):
        rho = self.theta
        x, y = special.ndtri(u), special.ndtri(v)
        one_m = 1.0 - rho * rho
        return np.exp(-(rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * one_m)) / np.sqrt(one_m)

    def tau(self):
        return 2.0 / np.pi * np.arcsin(self.theta)


class _StudentT(_Kernel):
    def _scale(self, y):
        nu, rho = self.df, self.theta
        return np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0))

    def hfunc(self, u, v):
        nu, rho = self.df, self.theta
        x, y = special.stdtrit(nu, u), special.stdtrit(nu, v)
        return special.stdtr(nu + 1.0, (x - rho * y) / self._scale(y))

    def hinv(self, w, v):
        nu, rho = self.df, self.theta
        y = special.stdtrit(nu, v)
        x = special.stdtrit(nu + 1.0, _clip(w)) * self._scale(y) + rho * y
        return special.stdtr(nu, x)

    def density(self, u, v):
        nu, rho = self.df, self.theta
        x, y = special.stdtrit(nu, u), special.stdtrit(nu, v)
        one_m = 1.0 - rho * rho
        log_c = (
            special.gammaln((nu + 2.0) / 2.0) + special.gammaln(nu / 2.0)
            - 2.0 * special.gammaln((nu + 1.0) / 2.0) - 0.5 * np.log(one_m)
            - (nu + 2.0) / 2.0 * np.log1p((x * x + y * y - 2.0 * rho * x * y) / (nu * one_m))
            + (nu + 1.0) / 2.0 * (np.log1p(x * x / nu) + np.log1p(y * y / nu))
        )
        return np.exp(log_c)

    def _cdf_scalar(self, u, v):
        nu, rho = self.df, self.theta
        points = None
        if rho != 0.0:
            knot = special.stdtr(nu, special.stdtrit(nu, u) / rho)
            if 0.0 < knot < v:
                points = [knot]

        def integrand(t):
            return float(self.hfunc(u, min(max(t, EPS), 1.0 - EPS)))

        value, _ = integrate.quad(integrand, 0.0, v, points=points, epsabs=1e-14, epsrel=1e-12, limit=200)
        return value

    def cdf(self, u, v):
        # C(u, v) = integral of h(u, t) over t in (0, v); no closed form for the t copula
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        out = np.empty(u.shape)
        for idx in np.ndindex(u.shape):
            out[idx] = self._cdf_scalar(float(u[idx]), float(v[idx]))
        return out

    def tau(self):
        return 2.0 / np.pi * np.arcsin(self.theta)


class _Clayton(_Kernel):
    def _log_a(self, lu, lv):
        # log(u^-theta + v^-theta - 1) from log u, log v
        a, b = -self.theta * lu, -self.theta * lv
        m = np.maximum(a, b)
        return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))

    def cdf(self, u, v):
        return np.exp(-self._log_a(np.log(u), np.log(v)) / self.theta)

    def hfunc(self, u, v):
        t = self.theta
        lv = np.log(v)
        return np.exp((-t - 1.0) * lv + (-1.0 / t - 1.0) * self._log_a(np.log(u), lv))

    def hinv(self, w, v):
        t = self.theta
        lw, lv = np.log(_clip(w)), np.log(v)
        b = -t * lv
        gap = -t / (t + 1.0) * lw
        log_a = np.logaddexp(b + np.log(np.expm1(np.maximum(gap, 1e-300))), 0.0)
        return np.exp(-log_a / t)

    def density(self, u, v):
        t = self.theta
        lu, lv = np.log(u), np.log(v)
        return np.exp(np.log1p(t) + (-t - 1.0) * (lu + lv) + (-1.0 / t - 2.0) * self._log_a(lu, lv))

    def tau(self):
        return self.theta / (self.theta + 2.0)


class _Gumbel(_Kernel):
    def _parts(self, u, v):
        t = self.theta
        lu, lv = -np.log(u), -np.log(v)
        log_a = np.logaddexp(t * np.log(lu), t * np.log(lv))
        return lu, lv, log_a

    def cdf(self, u, v):
        _, _, log_a = self._parts(u, v)
        return np.exp(-np.exp(log_a / self.theta))

    def hfunc(self, u, v):
        t = self.theta
        _, lv, log_a = self._parts(u, v)
        log_c = -np.exp(log_a / t)
        return np.exp(log_c + (1.0 / t - 1.0) * log_a + (t - 1.0) * np.log(lv) + lv)

    def density(self, u, v):
        t = self.theta
        lu, lv, log_a = self._parts(u, v)
        a_root = np.exp(log_a / t)
        log_c = (
            -a_root + lu + lv + (-2.0 + 2.0 / t) * log_a
            + (t - 1.0) * (np.log(lu) + np.log(lv)) + np.log1p((t - 1.0) / a_root)
        )
        return np.exp(log_c)

    def tau(self):
        return 1.0 - 1.0 / self.theta


class _Frank(_Kernel):
    def _independent(self):
        return abs(self.theta) < 1e-8

    def cdf(self, u, v):
        t = self.theta
        if self._independent():
            return u * v
        return -np.log1p(np.expm1(-t * u) * np.expm1(-t * v) / np.expm1(-t)) / t

    def hfunc(self, u, v):
        t = self.theta
        if self._independent():
            return _Independence(0).hfunc(u, v)
        a, b, d = np.expm1(-t * u), np.expm1(-t * v), np.expm1(-t)
        return np.exp(-t * v) * a / (d + a * b)

    def hinv(self, w, v):
        t = self.theta
        w = _clip(w)
        if self._independent():
            return np.broadcast_to(w, np.broadcast(w, v).shape).astype(float)
        b, d = np.expm1(-t * v), np.expm1(-t)
        a = w * d / (np.exp(-t * v) - w * b)
        return np.clip(-np.log1p(a) / t, 0.0, 1.0)

    def density(self, u, v):
        t = self.theta
        if self._independent():
            return np.ones(np.broadcast(u, v).shape)
        a, b, d = np.expm1(-t * u), np.expm1(-t * v), np.expm1(-t)
        return -t * d * np.exp(-t * (u + v)) / (d + a * b) ** 2

    def tau(self):
        t = self.theta
        if self._independent():
            return 0.0

        def debye_integrand(s):
            return 1.0 if s == 0.0 else s / np.expm1(s)

        debye, _ = integrate.quad(debye_integrand, 0.0, t, epsabs=1e-13, epsrel=1e-12)
        return 1.0 - 4.0 / t * (1.0 - debye / t)


class _Joe(_Kernel):
    def _parts(self, u, v):
        t = self.theta
        log_ubar, log_vbar = np.log1p(-u), np.log1p(-v)
        one_m_a = -np.expm1(t * log_ubar)  # 1 - (1-u)^theta
        one_m_b = -np.expm1(t * log_vbar)
        log_big_a = np.log1p(-one_m_a * one_m_b)
        return log_ubar, log_vbar, one_m_a, one_m_b, log_big_a

    def cdf(self, u, v):
        *_, log_big_a = self._parts(u, v)
        return -np.expm1(log_big_a / self.theta)

    def hfunc(self, u, v):
        t = self.theta
        _, log_vbar, one_m_a, _, log_big_a = self._parts(u, v)
        return np.exp((1.0 / t - 1.0) * log_big_a + (t - 1.0) * log_vbar) * one_m_a

    def density(self, u, v):
        t = self.theta
        log_ubar, log_vbar, _, _, log_big_a = self._parts(u, v)
        return np.exp(
            (1.0 / t - 2.0) * log_big_a + (t - 1.0) * (log_ubar + log_vbar)
        ) * (t - 1.0 + np.exp(log_big_a))

    def tau(self):
        t = self.theta
        if t == 1.0:
            return 0.0

        def integrand(s):
            if s <= 0.0 or s >= 1.0:
                return 0.0
            st = s**t
            return np.log1p(-st) * (1.0 - st) / (t * s ** (t - 1.0))

        value, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
        return 1.0 + 4.0 * value


_KERNELS = {
    "independence": _Independence,
    "gaussian": _Gaussian,
    "t": _StudentT,
    "clayton": _Clayton,
    "gumbel": _Gumbel,
    "frank": _Frank,
    "joe": _Joe,
}


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------

def _inputs(u, v):
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)) or np.any(np.isnan(u) | np.isnan(v)):
        raise DomainError("copula arguments must lie in [0, 1]")
    return u, v


def copula_cdf(spec: CopulaSpec, u, v) -> np.ndarray:
    u, v = _inputs(u, v)
    kernel = spec.kernel()
    cu, cv = _clip(u), _clip(v)
    if spec.rotation == 90:
        value = cv - kernel.cdf(_clip(1.0 - u), cv)
    elif spec.rotation == 270:
        value = cu - kernel.cdf(cu, _clip(1.0 - v))
    else:
        value = kernel.cdf(cu, cv)
    value = np.clip(value, np.maximum(u + v - 1.0, 0.0), np.minimum(u, v))
    value = np.where(v == 1.0, u, value)
    value = np.where(u == 1.0, v, value)
    return np.where((u == 0.0) | (v == 0.0), 0.0, value)


def copula_hfunc(spec: CopulaSpec, u, v) -> np.ndarray:
    """h(u, v) = dC(u, v)/dv."""
    u, v = _inputs(u, v)
    kernel = spec.kernel()
    cu, cv = _clip(u), _clip(v)
    if spec.rotation == 90:
        value = 1.0 - kernel.hfunc(_clip(1.0 - u), cv)
    elif spec.rotation == 270:
        value = kernel.hfunc(cu, _clip(1.0 - v))
    else:
        value = kernel.hfunc(cu, cv)
    value = np.clip(value, 0.0, 1.0)
    return np.where(u == 0.0, 0.0, np.where(u == 1.0, 1.0, value))


def copula_hinv(spec: CopulaSpec, w, v) -> np.ndarray:
    """Solve h(u, v) = w for u."""
    w, v = _inputs(w, v)
    kernel = spec.kernel()
    cv = _clip(v)
    if spec.rotation == 90:
        value = 1.0 - kernel.hinv(1.0 - w, cv)
    elif spec.rotation == 270:
        value = kernel.hinv(w, _clip(1.0 - v))
    else:
        value = kernel.hinv(w, cv)
    value = np.clip(value, 0.0, 1.0)
    return np.where(w == 0.0, 0.0, np.where(w == 1.0, 1.0, value))


def copula_vfunc(spec: CopulaSpec, u, v) -> np.ndarray:
    """dC(u, v)/du, the conditional CDF of V given U = u."""
    u, v = _inputs(u, v)
    kernel = spec.kernel()
    cu, cv = _clip(u), _clip(v)
    if spec.rotation == 90:
        value = kernel.hfunc(cv, _clip(1.0 - u))
    elif spec.rotation == 270:
        value = 1.0 - kernel.hfunc(_clip(1.0 - v), cu)
    else:
        value = kernel.hfunc(cv, cu)
    value = np.clip(value, 0.0, 1.0)
    return np.where(v == 0.0, 0.0, np.where(v == 1.0, 1.0, value))


def copula_vinv(spec: CopulaSpec, w, u) -> np.ndarray:
    """Solve vfunc(u, v) = w for v."""
    w, u = _inputs(w, u)
    kernel = spec.kernel()
    cu = _clip(u)
    if spec.rotation == 90:
        value = kernel.hinv(w, _clip(1.0 - u))
    elif spec.rotation == 270:
        value = 1.0 - kernel.hinv(1.0 - w, cu)
    else:
        value = kernel.hinv(w, cu)
    value = np.clip(value, 0.0, 1.0)
    return np.where(w == 0.0, 0.0, np.where(w == 1.0, 1.0, value))


def copula_density(spec: CopulaSpec, u, v) -> np.ndarray:
    u, v = _inputs(u, v)
    kernel = spec.kernel()
    cu, cv = _clip(u), _clip(v)
    if spec.rotation == 90:
        return kernel.density(_clip(1.0 - u), cv)
    if spec.rotation == 270:
        return kernel.density(cu, _clip(1.0 - v))
    return kernel.density(cu, cv)


def tau_from_param(spec: CopulaSpec) -> float:
    """Kendall's tau; rotated variants take the negative of the base value."""
    tau = float(spec.kernel().tau())
    return -tau if spec.rotation else tau


def param_from_tau(family: str, tau: float, rotation: int = 0, df: float | None = None) -> CopulaSpec:
    """CopulaSpec of the given family and rotation with Kendall's tau equal to `tau`."""
    family = family.lower()
    if not -1.0 < tau < 1.0:
        raise DomainError(f"Kendall's tau must lie in (-1, 1), got {tau}")
    base_tau = -tau if rotation else tau
    if family == "independence":
        if tau != 0.0:
            raise DomainError("independence copula only has tau = 0")
        return CopulaSpec("independence")
    if family in ("gaussian", "t"):
        return CopulaSpec(family, float(np.sin(np.pi * tau / 2.0)), rotation, df=df if family == "t" else None)
    if family != "frank" and base_tau <= 0.0:
        raise DomainError(f"{family}{rotation or ''} cannot reach tau = {tau}")
    if family == "clayton":
        return CopulaSpec("clayton", 2.0 * base_tau / (1.0 - base_tau), rotation)
    if family == "gumbel":
        return CopulaSpec("gumbel", 1.0 / (1.0 - base_tau), rotation)
    if family == "frank":
        if base_tau == 0.0:
            return CopulaSpec("frank", 0.0, rotation)
        theta = optimize.brentq(lambda t: _Frank(t).tau() - base_tau, -700.0, 700.0, xtol=1e-12)
        return CopulaSpec("frank", theta, rotation)
    if family == "joe":
        theta = optimize.brentq(lambda t: _Joe(t).tau() - base_tau, 1.0, 500.0, xtol=1e-12)
        return CopulaSpec("joe", theta, rotation)
    raise DomainError(f"unknown copula family '{family}'")


def sample_pair(spec: CopulaSpec, rng: np.random.Generator, size=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw (u, v): v and w uniform, u = h^{-1}(w | v)."""
    v = rng.random(size)
    w = rng.random(size)
    return copula_hinv(spec, w, v), v
