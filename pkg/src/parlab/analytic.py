"""Closed-form objects: barriers, manufactured solutions, theta-normalization
and the intrinsic blow-up rescaling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedKind
from .lattice import GridSpec, ScalarField, sample
from .solver import steady

BALL = 11 / 16
KINDS = ("plane", "quadratic-stationary", "linear-in-time", "heat-reference",
         "smooth-stationary")


@dataclass(frozen=True)
class BarrierSpec:
    t0: float
    eta: float
    u0: float
    clip: float
    unorm: float
    fnorm: float
    gamma: float
    p: float
    n: int

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.clip < 0:
            raise ValueError("Lipschitz constant must be nonnegative")
        if not self.gamma > -1:
            raise ValueError("gamma must exceed -1")


def barrier_constant(gamma, p, n):
    """Constant ``C(n, p)`` that makes the barrier a supersolution.

    For ``gamma >= 0`` the barrier is ``(M2/eta)|x|^2`` plus terms linear in t;
    on ``B_{11/16}`` its gradient is at most ``2 M2 (11/16) / eta`` and its
    normalized p-Laplacian is at most ``(2 M2/eta)(n + p - 2)`` (``n`` when
    ``p < 2``), giving ``2^(gamma+1) (11/16)^gamma (n + max(p-2, 0))``.

    For ``gamma < 0`` the spatial part is ``M2 eta^-a |x|^a`` with
    ``a = (gamma+2)/(gamma+1)``; then ``|D psi|^gamma Delta_p^N psi`` is the
    constant ``(a M2)^(gamma+1) eta^-(gamma+2) (n + a - 2 + (p-2)(a-1))``,
    so ``C = a^(gamma+1) (n - 1 + (a-1)(p-1))``.
    """
    if gamma >= 0:
        return 2.0 ** (gamma + 1) * (n + max(p - 2.0, 0.0)) * BALL**gamma
    a = (gamma + 2.0) / (gamma + 1.0)
    return a ** (gamma + 1) * (n - 1.0 + (a - 1.0) * (p - 1.0))


def barrier_M2(spec):
    if spec.gamma >= 0:
        return spec.clip**2 + (32 / 11) ** 2 * spec.unorm**2
    return (spec.clip + 32 / 11 * spec.unorm) ** ((spec.gamma + 2) / (spec.gamma + 1))


def barrier_M1(spec):
    c = barrier_constant(spec.gamma, spec.p, spec.n)
    m2 = barrier_M2(spec)
    if spec.gamma >= 0:
        return spec.eta ** (-(spec.gamma + 1)) * m2 ** (spec.gamma + 1) * c + spec.fnorm
    return spec.eta ** (-(spec.gamma + 2)) * m2 ** (spec.gamma + 1) * c + spec.fnorm


def barrier_upper(x, t, spec):
    """Upper barrier anchored at ``(0, t0)``; ``x`` has components on axis 0."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=0)
    m1, m2 = barrier_M1(spec), barrier_M2(spec)
    lin = spec.u0 + m1 * (np.asarray(t, dtype=float) - spec.t0)
    if spec.gamma >= 0:
        return lin + m2 / spec.eta * r2 + spec.eta
    a = (spec.gamma + 2) / (spec.gamma + 1)
    return lin + m2 / spec.eta**a * np.sqrt(r2) ** a + spec.eta ** (spec.gamma + 2)


# -- manufactured pairs -----------------------------------------------------

def regularized_operator(grad, hess, params):
    """``(|g|^2+eps^2)^(gamma/2) [tr H + (p-2)(<H e,e> + (1-|e|^2) tr H / n)]``
    with ``e = g / sqrt(|g|^2 + eps^2)``; ``grad`` is ``(n, ...)`` and ``hess``
    is ``(n, n, ...)``.
    """
    g = np.asarray(grad, dtype=float) + np.asarray(params.shift).reshape(
        (params.n,) + (1,) * (np.ndim(grad) - 1))
    s2 = np.sum(g * g, axis=0) + params.eps**2
    tr = sum(hess[i][i] for i in range(params.n))
    quad = sum(hess[i][j] * g[i] * g[j] for i in range(params.n) for j in range(params.n))
    e2 = np.divide(np.sum(g * g, axis=0), s2, out=np.zeros_like(s2), where=s2 > 0)
    hee = np.divide(quad, s2, out=np.zeros_like(s2), where=s2 > 0)
    deg = np.ones_like(s2) if params.gamma == 0 else s2 ** (0.5 * params.gamma)
    return deg * (tr + (params.p - 2.0) * (hee + (1.0 - e2) * tr / params.n))


def _heat_modes(n):
    if n == 1:
        return [((1,), 1.0), ((3,), 0.3)]
    return [((1, 1), 1.0), ((2, 1), 0.5), ((1, 3), 0.2)]


def manufactured(kind, params, q=None, K=1.0, modes=None, amplitude=0.25):
    """Exact pair ``(u(x, t), f(x, t))`` for the regularized equation.

    ``plane`` and ``linear-in-time`` use the slope ``q`` (default ``e_1``).
    ``heat-reference`` is a finite sine series on ``[-1, 1]^n`` with zero
    boundary values, valid for ``gamma = 0, p = 2`` only.
    ``smooth-stationary`` is ``|x|^2/2 + A sin(k.x + 0.3)``, a pair with
    nonzero fourth derivatives for convergence studies.
    """
    n = params.n
    if q is None:
        q = np.eye(n)[0] if kind in ("plane", "linear-in-time") else np.zeros(n)
    q = np.asarray(q, dtype=float).reshape(n)

    def dot(x):
        return sum(q[i] * np.asarray(x)[i] for i in range(n))

    if kind == "plane":
        return steady(lambda x, t=0.0: dot(x) + 0.0 * t), steady(lambda x, t=0.0: 0.0 * np.asarray(x)[0])
    if kind == "linear-in-time":
        return (lambda x, t=0.0: dot(x) + K * t), steady(lambda x, t=0.0: K + 0.0 * np.asarray(x)[0])
    if kind == "quadratic-stationary":
        @steady
        def u(x, t=0.0):
            return 0.5 * np.sum(np.asarray(x, dtype=float) ** 2, axis=0)

        def f(x, t=0.0):
            r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=0)
            deg = 1.0 if params.gamma == 0 else (r2 + params.eps**2) ** (params.gamma / 2)
            return -deg * (n + params.p - 2.0) + 0.0 * r2
        return u, steady(f)
    if kind == "smooth-stationary":
        k = np.array([2.0, 1.0][:n])

        def phase(x):
            return sum(k[i] * np.asarray(x, dtype=float)[i] for i in range(n)) + 0.3

        @steady
        def u(x, t=0.0):
            return 0.5 * np.sum(np.asarray(x, dtype=float) ** 2, axis=0) + amplitude * np.sin(phase(x))

        def f(x, t=0.0):
            x = np.asarray(x, dtype=float)
            c, s = np.cos(phase(x)), np.sin(phase(x))
            grad = np.stack([x[i] + amplitude * k[i] * c for i in range(n)])
            hess = [[(1.0 if i == j else 0.0) - amplitude * k[i] * k[j] * s for j in range(n)]
                    for i in range(n)]
            return -regularized_operator(grad, hess, params.with_(source=None))
        return u, steady(f)
    if kind == "heat-reference":
        if params.gamma != 0 or params.p != 2:
            raise UnsupportedKind("heat-reference needs gamma = 0 and p = 2")
        modes = _heat_modes(n) if modes is None else modes

        def u(x, t=0.0):
            x = np.asarray(x, dtype=float)
            out = 0.0
            for m, a in modes:
                lam = sum((mi * math.pi / 2) ** 2 for mi in m)
                prod = a * np.exp(-lam * np.asarray(t, dtype=float))
                for i, mi in enumerate(m):
                    prod = prod * np.sin(mi * math.pi * (x[i] + 1.0) / 2.0)
                out = out + prod
            return out
        return u, steady(lambda x, t=0.0: 0.0 * np.asarray(x)[0])
    raise UnsupportedKind(f"unknown manufactured kind {kind!r}")


# -- theta normalization -----------------------------------------------------

def normalize(unorm, fnorm, eps0, gamma):
    if gamma < 0:
        raise ValueError("normalization is defined for gamma >= 0")
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    return 1.0 / (2.0 * unorm + (fnorm / eps0) ** (1.0 / (gamma + 1.0)) + 1.0)


def theta_function(u, theta, gamma):
    """``x, t -> theta u(x, theta^gamma t)``."""
    return lambda x, t=0.0: theta * u(x, theta**gamma * t)


def theta_source(f, theta, gamma):
    """``x, t -> theta^(gamma+1) f(x, theta^gamma t)``."""
    return lambda x, t=0.0: theta ** (gamma + 1) * f(x, theta**gamma * t)


def theta_field(fld, theta, gamma):
    """Field transform; slices map one-to-one since time is only stretched."""
    s = fld.spec
    stretch = theta ** (-gamma)
    spec = GridSpec(s.n, s.h, s.dt * stretch, s.t_depth * stretch, s.origin, s.half_width)
    return ScalarField(spec, theta * fld.values, fld.t_final * stretch)


# -- flatness configuration and blow-up ---------------------------------------

@dataclass(frozen=True)
class FlatnessConfig:
    """Knobs of the flatness iteration. Defaults are experimental choices."""

    rho: float = 0.1
    delta: float = 0.1
    C2: float = 1.0
    C3: float = 1.0
    eps0: float = 0.05
    kmax: int = 4

    def __post_init__(self):
        if not 0 < self.rho < 1 or not 0 < self.delta < 1:
            raise ValueError("rho and delta must lie in (0, 1)")
        if not (self.C2 > 0 and self.C3 > 0 and self.eps0 > 0):
            raise ValueError("C2, C3 and eps0 must be positive")
        if self.kmax < 0:
            raise ValueError("kmax must be nonnegative")

    @property
    def A1(self):
        return 1.0 + 2.0 * self.C2

    def check(self, gamma):
        if not self.rho < (1 - self.delta) ** (gamma + 1):
            raise ValueError(f"need rho < (1-delta)^(gamma+1) = {(1 - self.delta) ** (gamma + 1):.4g}")

    def radius(self, k):
        return self.rho**k

    def scale(self, k):
        return (1 - self.delta) ** k

    def source_factor(self, k, gamma):
        """Multiplier of ``||f||`` under the level-k rescaling."""
        return self.rho**k * (1 - self.delta) ** (-k * (gamma + 1))

    def to_dict(self):
        return {"rho": self.rho, "delta": self.delta, "C2": self.C2, "C3": self.C3,
                "eps0": self.eps0, "kmax": self.kmax}


def blowup_field(u, k, l_k, cfg, gamma, target=None):
    """``w_k(x,t) = (u(r x, r^2 lam^-gamma t) - l_k . r x) / (r lam)`` on a unit grid.

    ``target`` is the unit-cylinder grid; by default it keeps ``h`` and uses
    as many slices as the source cylinder holds.
    """
    r, lam = cfg.radius(k), cfg.scale(k)
    depth = r * r * lam ** (-gamma)
    s = u.spec
    if target is None:
        m = max(1, round(depth / s.dt))
        target = GridSpec(s.n, s.h, 1.0 / m, 1.0)
    x = target.coords()
    l_k = np.asarray(l_k, dtype=float).reshape((s.n,) + (1,) * s.n)
    plane = r * np.sum(l_k * x, axis=0)
    vals = np.empty((target.num_slices,) + target.shape)
    for j, t in enumerate(target.times()):
        vals[j] = (sample(u, r * x, u.t_final + depth * t) - plane) / (r * lam)
    return ScalarField(target, vals)
