"""Discrete operators for ``u_t = |Du|^gamma [Lap u + (p-2) <D^2u e, e>] + f``.

Every ``|Du|`` is regularized as ``sqrt(|Du|^2 + eps^2)`` and the unit
direction becomes ``g = Du / sqrt(|Du|^2 + eps^2)``, so ``|g| < 1``. The
missing weight ``1 - |g|^2`` is spread isotropically: the directional term is
``<D^2u g, g> + (1 - |g|^2) Lap u / n``. This keeps the trace of the
direction matrix equal to one, agrees with the unregularized operator when
``|Du| >> eps``, and at a critical point falls back to the sphere average of
``<D^2u e, e>``.

The directional second difference along ``g`` uses off-grid values
at ``x +- h g``. Those values come from the tensor-product quadratic
interpolant on the 3^n block centred at the node: it is exact on quadratics,
and because the block is centred the third-order interpolation errors cancel
between ``+e`` and ``-e``, leaving an O(h^2) consistent stencil. (Multilinear
interpolation at distance ``h`` is not consistent for oblique ``e``.)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundaryNode, FirstSlice


@dataclass(frozen=True, eq=False)
class EquationParams:
    gamma: float
    p: float
    n: int
    eps: float = 0.0
    source: object = None
    fnorm: float = 0.0
    source_expr: str = None

    def __post_init__(self):
        if not self.gamma > -1:
            raise ValueError("gamma must exceed -1")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.gamma < 0 and self.eps == 0:
            raise ValueError("gamma < 0 needs eps > 0")
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2")

    @property
    def shift(self):
        return np.zeros(self.n)

    @property
    def source_norm(self):
        return self.fnorm

    def rhs(self, x, t):
        if self.source is None:
            return np.zeros(np.shape(x)[1:])
        return np.broadcast_to(self.source(x, t), np.shape(x)[1:]).astype(float)

    def with_(self, **kw):
        d = dict(gamma=self.gamma, p=self.p, n=self.n, eps=self.eps,
                 source=self.source, fnorm=self.fnorm, source_expr=self.source_expr)
        d.update(kw)
        return EquationParams(**d)

    def to_dict(self):
        return {"gamma": self.gamma, "p": self.p, "n": self.n, "eps": self.eps,
                "fnorm": self.fnorm, "source": self.source_expr}


@dataclass(frozen=True, eq=False)
class DeviationParams:
    """Coefficients of the equation for ``w = u - q.x``."""

    base: EquationParams
    q: tuple
    fbar: object = None
    fbar_norm: float = 0.0
    fbar_expr: str = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if q.size != self.base.n or not np.all(np.isfinite(q)):
            raise ValueError("q must be a finite vector of length n")
        object.__setattr__(self, "q", tuple(float(c) for c in q))

    gamma = property(lambda self: self.base.gamma)
    p = property(lambda self: self.base.p)
    n = property(lambda self: self.base.n)
    eps = property(lambda self: self.base.eps)

    @property
    def shift(self):
        return np.array(self.q)

    @property
    def source_norm(self):
        return self.fbar_norm

    def rhs(self, x, t):
        if self.fbar is None:
            return np.zeros(np.shape(x)[1:])
        return np.broadcast_to(self.fbar(x, t), np.shape(x)[1:]).astype(float)

    def to_dict(self):
        d = self.base.to_dict()
        d.update({"q": list(self.q), "fbar_norm": self.fbar_norm, "fbar": self.fbar_expr})
        return d


# -- slice kernels (interior nodes of a whole slice) --------------------------

def _nb(U, off):
    """View of ``U`` shifted by the integer offsets ``off`` on interior nodes."""
    return U[tuple(slice(1 + a, U.shape[i] - 1 + a) for i, a in enumerate(off))]


def _lagrange(s):
    return {-1: 0.5 * s * (s - 1.0), 0: 1.0 - s * s, 1: 0.5 * s * (s + 1.0)}


def slice_gradient(U, h, shift=None):
    """Centred gradient (plus ``shift``) at interior nodes, shape ``(n, ...)``."""
    n = U.ndim
    g = []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        m = [0] * n
        m[i] = -1
        g.append((_nb(U, e) - _nb(U, m)) / (2.0 * h))
    g = np.stack(g)
    if shift is not None:
        g = g + np.asarray(shift, dtype=float).reshape((n,) + (1,) * n)
    return g


def degeneracy(grad, params):
    """``(|grad|^2 + eps^2)^(gamma/2)``; components on axis 0."""
    g = np.asarray(grad, dtype=float)
    s2 = np.sum(g * g, axis=0) + params.eps**2
    if params.gamma == 0:
        return np.ones_like(s2)
    return s2 ** (0.5 * params.gamma)


def slice_operator(U, h, params):
    """Gradient, ``Delta_p^N`` and degeneracy at every interior node."""
    U = np.asarray(U, dtype=float)
    n = U.ndim
    g = slice_gradient(U, h, params.shift)
    gn = np.sqrt(np.sum(g * g, axis=0) + params.eps**2)
    e = np.divide(g, gn, out=np.zeros_like(g), where=gn > 0)
    c = _nb(U, (0,) * n)
    lap = 0.0
    for i in range(n):
        o = [0] * n
        o[i] = 1
        lap = lap + (_nb(U, o) + _nb(U, [-a for a in o]) - 2.0 * c)
    lap = lap / h**2
    if params.p == 2:
        plap = lap
    else:
        ls = [_lagrange(e[i]) for i in range(n)]
        pair = -2.0 * c
        for off in np.ndindex(*(3,) * n):
            off = tuple(a - 1 for a in off)
            if not any(off):
                w = 2.0
                for i in range(n):
                    w = w * ls[i][0]
                pair = pair + w * c
                continue
            w = 1.0
            for i, a in enumerate(off):
                w = w * ls[i][a]
            pair = pair + w * (_nb(U, off) + _nb(U, [-a for a in off]))
        e2 = np.sum(e * e, axis=0)
        plap = lap + (params.p - 2.0) * (pair / h**2 + (1.0 - e2) * lap / n)
    return g, plap, degeneracy(g, params)


def monotone_eps(slices, h, params, safety=1.5):
    """Smallest regularization keeping the explicit scheme monotone on ``slices``.

    The gradient inside ``(|Du|^2 + eps^2)^(gamma/2)`` makes the update
    depend on neighbours through the coefficient as well as the stencil;
    that dependence is dominated once ``eps >= gamma h |Delta_p^N u| / 4``.
    Returns ``max(params.eps, safety * bound)``.
    """
    if params.gamma <= 0:
        return params.eps
    worst = max(float(np.max(np.abs(slice_operator(U, h, params)[1]))) for U in slices)
    return max(params.eps, safety * params.gamma * h * worst / 4.0)


def slice_rate(U, h, params, x_int, t):
    """Right-hand side ``|Du|^gamma Delta_p^N u + f`` at interior nodes."""
    _, plap, deg = slice_operator(U, h, params)
    return deg * plap + params.rhs(x_int, t)


def interior(a, n):
    """Interior part of an array whose last ``n`` axes are spatial."""
    lead = a.ndim - n
    return a[(slice(None),) * lead + (slice(1, -1),) * n]


# -- per-node API ---------------------------------------------------------

def _block(fld, node, k):
    node = tuple(int(i) for i in np.atleast_1d(node))
    shape = fld.spec.shape
    if len(node) != fld.spec.n:
        raise ValueError("node index has the wrong dimension")
    if any(i <= 0 or i >= m - 1 for i, m in zip(node, shape)):
        raise BoundaryNode(f"node {node} is on the boundary")
    sl = tuple(slice(i - 1, i + 2) for i in node)
    return fld.values[k][sl], node


def gradient(fld, node, k):
    blk, _ = _block(fld, node, k)
    return slice_gradient(blk, fld.spec.h).reshape(fld.spec.n)


def normalized_p_laplacian(fld, node, k, params):
    blk, _ = _block(fld, node, k)
    _, plap, _ = slice_operator(blk, fld.spec.h, params)
    return float(plap.reshape(()))


def _node_x(fld, node):
    return np.array([fld.spec.axis(i)[node[i]] for i in range(fld.spec.n)])


def residual(fld, params, node, k):
    """Backward difference in time minus the explicit right-hand side.

    The operator and source are taken at slice ``k - 1``, which is the
    forward-Euler stencil of the stepper.
    """
    if k <= 0:
        raise FirstSlice("residual needs a previous slice")
    blk, node = _block(fld, node, k - 1)
    _, plap, deg = slice_operator(blk, fld.spec.h, params)
    t_prev = fld.times[k - 1]
    f = params.rhs(_node_x(fld, node).reshape(fld.spec.n, *(1,) * fld.spec.n), t_prev)
    dudt = (fld.values[k][node] - fld.values[k - 1][node]) / fld.spec.dt
    return float(dudt - (deg * plap + f).reshape(()))


def deviation_residual(fld, params, node, k):
    return residual(fld, params, node, k)


def residual_slice(fld, params, k):
    """``residual`` at every interior node of slice ``k`` at once."""
    if k <= 0:
        raise FirstSlice("residual needs a previous slice")
    n = fld.spec.n
    x_int = interior(fld.spec.coords(), n)
    rate = slice_rate(fld.values[k - 1], fld.spec.h, params, x_int, fld.times[k - 1])
    dudt = interior(fld.values[k] - fld.values[k - 1], n) / fld.spec.dt
    return dudt - rate
