"""Regularity instrumentation for solved fields."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import analytic
from .errors import DomainTooSmall, EmptyCylinder, ParlabError
from .lattice import (GridSpec, IntrinsicCylinder, ScalarField, cylinder_mask, cylinder_values,
                      nodes_inside)
from .operators import DeviationParams, EquationParams, slice_operator
from .solver import ProblemSpec, solve

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
MAX_PAIRS = 10**7
PROBE_MAX_NODES = 41
PROBE_MAX_SLICES = 20


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class _Report:
    def to_dict(self):
        return _jsonable(asdict(self))


def origin_cylinder(fld, r, lam=1.0, gamma=0.0):
    return IntrinsicCylinder((fld.spec.origin, fld.t_final), r, lam, gamma)


# -- oscillation and best planes ----------------------------------------------

def oscillation(fld, cyl):
    v = cylinder_values(fld, cyl)
    return float(v.max() - v.min())


def _plane_objective(vmax, vmin, x):
    def osc(l):
        s = l @ x
        return float(np.max(vmax - s) - np.min(vmin - s))
    return osc


def _golden(phi, a, b, tol):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = phi(c), phi(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = phi(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = phi(d)
    return (c, fc) if fc <= fd else (d, fd)


def plane_fit(vals, x, sweeps=200):
    """Minimax plane for samples ``vals`` (T, M) at nodes ``x`` (n, M).

    Least squares seeds a golden-section line search along the coordinate
    axes (and the diagonals in 2D) of the convex objective
    ``l -> osc(u - l.x)``, repeated until a sweep stops improving.
    """
    n = x.shape[0]
    vmax, vmin = vals.max(axis=0), vals.min(axis=0)
    osc = _plane_objective(vmax, vmin, x)
    design = np.vstack([np.ones(x.shape[1]), x]).T
    coef, *_ = np.linalg.lstsq(design, vals.mean(axis=0), rcond=None)
    l = coef[1:].copy()
    best = osc(l)
    dirs = [np.eye(n)[i] for i in range(n)]
    if n == 2:
        dirs += [np.array([1.0, 1.0]) / math.sqrt(2), np.array([1.0, -1.0]) / math.sqrt(2)]
    scale = float(np.max(np.abs(vals))) + 1.0
    for _ in range(sweeps):
        start = best
        for d in dirs:
            spread = float(np.ptp(d @ x))
            if spread == 0 or best == 0:
                continue
            half = 2.0 * best / spread
            s, val = _golden(lambda s: osc(l + s * d), -half, half, 1e-13 * (half + 1e-300) + 1e-15)
            if val < best:
                l = l + s * d
                best = val
        if start - best <= 1e-14 * scale:
            break
    return l, best


def best_plane(fld, cyl):
    vals, x, _ = cylinder_values(fld, cyl, with_coords=True)
    x = x - cyl.x0.reshape(-1, 1)
    return plane_fit(vals, x)


# -- flatness iteration -----------------------------------------------------

@dataclass
class FlatnessLevel:
    k: int
    r: float
    lam: float
    l: list
    osc: float
    slope_ok: bool
    osc_ok: bool


@dataclass
class FlatnessReport(_Report):
    levels: list
    verdict: str
    verdict_level: int
    slope_increments: list
    increments_ok: list
    config: dict
    gamma: float
    passed: bool

    @property
    def kind(self):
        return self.verdict.split("(")[0]


def _verdict(kind, k=None):
    return kind if k is None else f"{kind}({k})"


def flatness_iteration(fld, cfg, gamma, center=None):
    """Best planes on the shrinking cylinders ``Q_{rho^k}^{(1-delta)^k}``.

    Smooth(k) at the first level with ``|l_k| > C2 (1-delta)^k``; Degenerate
    when every level through ``kmax`` respects the cap; Unresolved(k) when
    the lattice cannot resolve level ``k``.
    """
    cfg.check(gamma)
    x0 = fld.spec.origin if center is None else center[0]
    t0 = fld.t_final if center is None else center[1]
    levels, verdict, vlevel = [], _verdict("Degenerate"), cfg.kmax
    for k in range(cfg.kmax + 1):
        r, lam = cfg.radius(k), cfg.scale(k)
        cyl = IntrinsicCylinder((x0, t0), r, lam, gamma)
        try:
            l, osc = best_plane(fld, cyl)
        except EmptyCylinder:
            verdict, vlevel = _verdict("Unresolved", k), k
            break
        slope_ok = bool(np.linalg.norm(l) <= cfg.C2 * lam)
        osc_ok = bool(osc <= r * lam)
        levels.append(FlatnessLevel(k, r, lam, [float(c) for c in l], float(osc), slope_ok, osc_ok))
        if not slope_ok:
            verdict, vlevel = _verdict("Smooth", k), k
            break
    inc, inc_ok = [], []
    for a, b in zip(levels, levels[1:]):
        d = float(np.linalg.norm(np.subtract(b.l, a.l)))
        inc.append(d)
        inc_ok.append(bool(d <= cfg.C3 * a.lam))
    passed = not verdict.startswith("Unresolved") and all(
        lv.osc_ok for lv in levels if lv.slope_ok)
    return FlatnessReport(levels, verdict, vlevel, inc, inc_ok, cfg.to_dict(), gamma, passed)


# -- seminorms ---------------------------------------------------------------

@dataclass
class RegularityReport(_Report):
    space_lip: float
    holder: dict
    time_exponent: float
    time_r2: float
    time_samples: int
    alpha_est: float
    alpha_r2: float
    alpha_samples: int
    exact: bool
    pairs: int
    passed: bool = True


def _pairs_exact(v, x, tau, kind, alpha=1.0, chunk=2048):
    """Sup of ``|v_i - v_j| / d_ij`` over all pairs ``i < j``."""
    best = 0.0
    m = v.size
    for s in range(0, m, chunk):
        e = min(m, s + chunk)
        dv = np.abs(v[s:e, None] - v[None, :])
        dx = np.sqrt(np.sum((x[:, s:e, None] - x[:, None, :]) ** 2, axis=0))
        if kind == "space":
            den = dx
            ok = (tau[s:e, None] == tau[None, :]) & (dx > 0)
        else:
            den = dx**alpha + np.abs(tau[s:e, None] - tau[None, :]) ** (alpha / 2)
            ok = den > 0
        q = np.divide(dv, den, out=np.zeros_like(dv), where=ok)
        best = max(best, float(q.max()))
    return best


def _pairs_sampled(v, x, tau, kind, alpha, idx_pairs):
    i, j = idx_pairs
    dv = np.abs(v[i] - v[j])
    dx = np.sqrt(np.sum((x[:, i] - x[:, j]) ** 2, axis=0))
    if kind == "space":
        den = dx
        ok = (tau[i] == tau[j]) & (dx > 0)
    else:
        den = dx**alpha + np.abs(tau[i] - tau[j]) ** (alpha / 2)
        ok = den > 0
    q = np.divide(dv, den, out=np.zeros_like(dv), where=ok)
    return float(q.max()) if q.size else 0.0


def _local_pairs(smask, nt):
    """Index pairs of lattice neighbours (space, diagonal and time)."""
    ids = -np.ones((nt,) + smask.shape, dtype=np.int64)
    ids[:, smask] = np.arange(nt * int(smask.sum())).reshape(nt, -1)
    n = smask.ndim
    shifts = [np.eye(n + 1, dtype=int)[i] for i in range(n + 1)]
    if n == 2:
        shifts += [np.array([0, 1, 1]), np.array([0, 1, -1])]
    out_i, out_j = [], []
    for sh in shifts:
        a = [slice(None)] * (n + 1)
        b = [slice(None)] * (n + 1)
        for ax, s in enumerate(sh):
            if s > 0:
                a[ax], b[ax] = slice(0, -s), slice(s, None)
            elif s < 0:
                a[ax], b[ax] = slice(-s, None), slice(0, s)
        ia, ib = ids[tuple(a)].ravel(), ids[tuple(b)].ravel()
        keep = (ia >= 0) & (ib >= 0)
        out_i.append(ia[keep])
        out_j.append(ib[keep])
    return np.concatenate(out_i), np.concatenate(out_j)


def _dyadic_fit(xs, ys):
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0)
    xs, ys = np.log(xs[keep]), np.log(ys[keep])
    if xs.size < 3:
        return float("nan"), float("nan"), int(xs.size)
    slope, icpt = np.polyfit(xs, ys, 1)
    pred = slope * xs + icpt
    ss = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ys - pred) ** 2)) / ss if ss > 0 else 1.0
    return float(slope), r2, int(xs.size)


def time_increments(series, dt, lags):
    """``max |u(t) - u(s)|`` over ``0 < t - s <= lag`` for each lag."""
    out = []
    for lag in lags:
        m = int(round(lag / dt))
        best = 0.0
        for j in range(1, m + 1):
            if j < len(series):
                best = max(best, float(np.max(np.abs(series[j:] - series[:-j]))))
        out.append(best)
    return out


def seminorms(fld, region, alphas=(0.5,), max_pairs=MAX_PAIRS, seed=0):
    """Discrete seminorms over the lattice points of ``region``.

    Sups are exact when the pair count is at most ``max_pairs``; otherwise
    all lattice-neighbour pairs plus ``max_pairs`` uniformly drawn pairs
    (seeded) are used, which can only underestimate.
    """
    smask, tidx = cylinder_mask(fld, region)
    vals, x, tt = cylinder_values(fld, region, with_coords=True)
    nt, m = vals.shape
    v = vals.ravel()
    xx = np.tile(x, (1, nt))
    tau = np.repeat(tt, m)
    total = v.size * (v.size - 1) // 2
    exact = total <= max_pairs
    holder = {}
    if exact:
        lip = _pairs_exact(v, xx, tau, "space")
        for a in alphas:
            holder[float(a)] = _pairs_exact(v, xx, tau, "holder", a)
        pairs = total
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, v.size, size=max_pairs)
        j = rng.integers(0, v.size, size=max_pairs)
        li, lj = _local_pairs(smask, nt)
        # same-time pairs for the Lipschitz quotient: draw within slices
        sj = (i // m) * m + rng.integers(0, m, size=max_pairs)
        lip = max(_pairs_sampled(v, xx, tau, "space", 1.0, (i, sj)),
                  _pairs_sampled(v, xx, tau, "space", 1.0, (li, lj)))
        for a in alphas:
            holder[float(a)] = max(_pairs_sampled(v, xx, tau, "holder", a, (i, j)),
                                   _pairs_sampled(v, xx, tau, "holder", a, (li, lj)))
        pairs = 2 * max_pairs + li.size
    # time exponent at the region centre
    c = np.argmin(np.sum((x - region.x0.reshape(-1, 1)) ** 2, axis=0))
    series = vals[:, c]
    dt = fld.spec.dt
    lags, lag = [], 4 * dt
    while lag <= region.depth / 4 * (1 + 1e-9):
        lags.append(lag)
        lag *= 2
    osc_t = time_increments(series, dt, lags)
    nu, nu_r2, nu_n = _dyadic_fit(lags, osc_t)
    # gradient-Holder exponent from the decay of best-plane oscillation
    radii, oscs, r = [], [], region.r
    while True:
        cyl = IntrinsicCylinder((region.center[0], region.t0), r)
        try:
            _, o = best_plane(fld, cyl)
        except EmptyCylinder:
            break
        radii.append(r)
        oscs.append(o)
        r /= 2
    slope, a_r2, a_n = _dyadic_fit(radii, oscs)
    rep = RegularityReport(lip, holder, nu, nu_r2, nu_n, slope - 1.0, a_r2, a_n, exact, pairs)
    rep.passed = bool(np.isfinite(lip) and all(np.isfinite(h) for h in holder.values()))
    return rep


def space_lipschitz(fld, region):
    """Exact ``sup |u(x,t) - u(y,t)| / |x - y|`` over a resolved region."""
    vals, x, _ = cylinder_values(fld, region, with_coords=True)
    best = 0.0
    d = np.sqrt(np.sum((x[:, :, None] - x[:, None, :]) ** 2, axis=0))
    np.fill_diagonal(d, np.inf)
    for row in vals:
        best = max(best, float(np.max(np.abs(row[:, None] - row[None, :]) / d)))
    return best


# -- doubling certificate ----------------------------------------------------

@dataclass
class CertificateReport(_Report):
    mode: str
    params: dict
    L1: float
    L2: float
    max_phi: float
    argmax: dict
    tolerance: float
    passed: bool


def _phi(mode, beta=None, nu=None, kappa0=None, s1=None):
    if mode == "holder":
        if beta is None or not 0 < beta < 1:
            raise ValueError("holder mode needs beta in (0, 1)")
        return (lambda s: s**beta), {"beta": beta}
    if mode == "lipschitz":
        if nu is None or kappa0 is None or not 1 < nu < 2 or not kappa0 > 0:
            raise ValueError("lipschitz mode needs 1 < nu < 2 and kappa0 > 0")
        if s1 is None:
            s1 = (1.0 / (4.0 * nu * kappa0)) ** (1.0 / (nu - 1.0))
        if nu * kappa0 * s1 ** (nu - 1) > 0.25 * (1 + 1e-12):
            raise ValueError("need nu kappa0 s1^(nu-1) <= 1/4")
        if not s1 > 2:
            raise ValueError("need s1 > 2")
        cap = s1 - kappa0 * s1**nu
        return (lambda s: np.where(s <= s1, s - kappa0 * s**nu, cap)), {
            "nu": nu, "kappa0": kappa0, "s1": s1}
    raise ValueError(f"unknown certificate mode {mode!r}")


def certificate_domain(fld, mode):
    """Closed-ball node mask and slice indices for the certificate domain."""
    r = 15 / 16 if mode == "holder" else 7 / 8
    spec = fld.spec
    if spec.half_width + 1e-12 < r or spec.t_depth + 1e-12 < r * r:
        raise DomainTooSmall(f"field must cover Q_{r:g}")
    if spec.nodes_per_axis > PROBE_MAX_NODES:
        raise ValueError(f"probe grid has more than {PROBE_MAX_NODES} nodes per axis; restrict() first")
    x = spec.coords() - np.reshape(spec.origin, (spec.n,) + (1,) * spec.n)
    smask = np.sum(x * x, axis=0) <= r * r * (1 + 1e-12)
    t = fld.times
    tidx = np.nonzero(t >= fld.t_final - r * r - 1e-12)[0]
    if len(tidx) > PROBE_MAX_SLICES:
        raise ValueError(f"probe grid has more than {PROBE_MAX_SLICES} slices in the domain")
    return r, smask, tidx


def doubling_certificate(fld, mode, L1, L2, x0, y0, t0, beta=None, nu=None,
                         kappa0=None, s1=None, slack=0.0):
    """Exhaustive max over grid triples of
    ``u(x,t) - u(y,t) - L2 phi(|x-y|) - L1/2 (|x-x0|^2 + |y-y0|^2 + (t-t0)^2)``.
    """
    phi, pinfo = _phi(mode, beta, nu, kappa0, s1)
    r, smask, tidx = certificate_domain(fld, mode)
    x = fld.spec.coords()[:, smask]
    x0 = np.asarray(x0, dtype=float).reshape(-1, 1)
    y0 = np.asarray(y0, dtype=float).reshape(-1, 1)
    d = np.sqrt(np.sum((x[:, :, None] - x[:, None, :]) ** 2, axis=0))
    base = -L2 * phi(d) - 0.5 * L1 * (np.sum((x - x0) ** 2, axis=0)[:, None]
                                     + np.sum((x - y0) ** 2, axis=0)[None, :])
    best, arg = -np.inf, None
    for k in tidx:
        v = fld.values[k][smask]
        t = fld.times[k]
        phi_t = v[:, None] - v[None, :] + base - 0.5 * L1 * (t - t0) ** 2
        j = int(np.argmax(phi_t))
        if phi_t.flat[j] > best:
            a, b = np.unravel_index(j, phi_t.shape)
            best = float(phi_t.flat[j])
            arg = {"x": x[:, a].tolist(), "y": x[:, b].tolist(), "t": float(t)}
    tol = 1e-8 + slack
    return CertificateReport(mode, dict(pinfo, radius=r), float(L1), float(L2), best, arg,
                             tol, bool(best <= tol))


def modulus_quotient(fld, mode, beta=None, nu=None, kappa0=None, s1=None):
    """Largest ``(u(x,t) - u(y,t)) / phi(|x-y|)`` over the certificate domain."""
    phi, _ = _phi(mode, beta, nu, kappa0, s1)
    r, smask, tidx = certificate_domain(fld, mode)
    x = fld.spec.coords()[:, smask]
    d = np.sqrt(np.sum((x[:, :, None] - x[:, None, :]) ** 2, axis=0))
    den = phi(d)
    best, arg = 0.0, None
    for k in tidx:
        v = fld.values[k][smask]
        q = np.divide(v[:, None] - v[None, :], den, out=np.zeros_like(den), where=d > 0)
        j = int(np.argmax(q))
        if q.flat[j] > best:
            a, b = np.unravel_index(j, q.shape)
            best = float(q.flat[j])
            arg = (x[:, a].copy(), x[:, b].copy(), float(fld.times[k]))
    return best, arg


def norm_scale(mode, unorm, fnorm, gamma):
    """Norm combination the modulus constant scales with."""
    if mode == "holder":
        e = 1.0 / (1.0 + gamma)
        return unorm + unorm**e + fnorm**e
    return 1.0 + unorm + fnorm


def calibrate_L2(fld, mode, fnorm, gamma, safety=1.25, **phi_kw):
    """``L2 = C * norm_scale`` with ``C`` the smallest constant that works on
    this field, inflated by ``safety``. Returns ``(L2, C, argmax_pair)``."""
    quot, arg = modulus_quotient(fld, mode, **phi_kw)
    scale = norm_scale(mode, fld.sup_norm(), fnorm, gamma)
    c = safety * quot / scale if scale > 0 else 0.0
    return c * scale, c, arg


def localization_L1(fld, x0, y0, t0, mode):
    """``140 osc u / d^2`` with ``d`` the parabolic distance of the pinning
    points to the boundary of the certificate cylinder, floored at ``h``."""
    r = 15 / 16 if mode == "holder" else 7 / 8
    osc = float(np.ptp(fld.values))
    dt = math.sqrt(max(t0 + r * r, 0.0))
    d = min(r - float(np.linalg.norm(x0)), r - float(np.linalg.norm(y0)), dt)
    d = max(d, fld.spec.h)
    return 140.0 * osc / d**2


# -- q sweep -------------------------------------------------------------

@dataclass
class QSweepRow:
    q_norm: float
    q: list
    lip_w: float
    lip_u: float
    error: str = None


@dataclass
class QSweepTable(_Report):
    rows: list
    ratio: float
    growth: bool
    control_slope: float
    passed: bool


def _lip_on(fld, radius):
    return space_lipschitz(fld, origin_cylinder(fld, radius))


def q_sweep(base, q_list, gamma=None, p=None, radius=0.5, workers=1):
    """Lipschitz constants of ``w`` and of ``u = w + q.x`` on ``Q_radius`` for
    each slope; the data of ``base`` (initial, boundary, source) are held
    fixed and interpreted as data for ``w``.
    """
    bp = base.params.base if isinstance(base.params, DeviationParams) else base.params
    fbar = base.params.fbar if isinstance(base.params, DeviationParams) else bp.source
    fbar_norm = base.params.fbar_norm if isinstance(base.params, DeviationParams) else bp.fnorm
    gamma = bp.gamma if gamma is None else gamma
    p = bp.p if p is None else p
    if gamma < 0:
        raise ValueError("uniform-in-q Lipschitz bounds need gamma >= 0")
    eq = bp.with_(gamma=gamma, p=p, source=None, fnorm=0.0)
    n = bp.n

    def qvec(q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return q if q.size == n else q[0] * np.eye(n)[0]

    def one(q):
        qv = qvec(q)
        dp = DeviationParams(eq, qv, fbar=fbar, fbar_norm=fbar_norm)
        try:
            w = solve(ProblemSpec(dp, base.initial, base.boundary, base.grid, base.cfl_safety))
        except ParlabError as exc:
            return QSweepRow(float(np.linalg.norm(qv)), qv.tolist(), float("nan"), float("nan"),
                             f"{type(exc).__name__}: {exc}")
        x = w.spec.coords()
        plane = np.sum(qv.reshape((n,) + (1,) * n) * x, axis=0)
        u = ScalarField(w.spec, w.values + plane, w.t_final)
        return QSweepRow(float(np.linalg.norm(qv)), qv.tolist(), _lip_on(w, radius), _lip_on(u, radius))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(one, q_list))
    else:
        rows = [one(q) for q in q_list]
    good = [r for r in rows if r.error is None]
    lw = np.array([r.lip_w for r in good])
    if lw.size and lw.min() > 0:
        ratio = float(lw.max() / lw.min())
    else:
        ratio = 1.0 if lw.size and lw.max() == 0 else float("inf")
    order = sorted(good, key=lambda r: r.q_norm)
    seq = [r.lip_w for r in order]
    growth = len(seq) > 1 and all(b > a for a, b in zip(seq, seq[1:])) and seq[-1] > 1.1 * seq[0]
    pos = [r for r in order if r.q_norm > 0 and r.lip_u > 0]
    if len(pos) >= 2:
        control = float(np.polyfit(np.log([r.q_norm for r in pos]), np.log([r.lip_u for r in pos]), 1)[0])
    else:
        control = float("nan")
    passed = len(good) == len(rows) and ratio < 2 and not growth
    return QSweepTable(rows, ratio, bool(growth), control, bool(passed))


# -- barrier certificate -----------------------------------------------------

@dataclass
class BarrierReport(_Report):
    min_residual: float
    crossings: int
    max_excess: float
    M1: float
    M2: float
    passed: bool


def barrier_residual(bspec, h, eps=0.0):
    """Min over nodes of ``B_{11/16}`` of the discrete residual
    ``d_t v - |Dv|^gamma Delta_p^N v - ||f||`` of the upper barrier."""
    grid = GridSpec(bspec.n, h, 1.0, 1.0)
    x = grid.coords()
    v = analytic.barrier_upper(x, bspec.t0, bspec)
    params = EquationParams(bspec.gamma, bspec.p, bspec.n, eps=eps)
    _, plap, deg = slice_operator(v, h, params)
    # the barrier is affine in t, so the backward difference is exactly M1
    res = analytic.barrier_M1(bspec) - deg * plap - bspec.fnorm
    inner = nodes_inside(grid, analytic.BALL)[(slice(1, -1),) * bspec.n]
    return float(res[inner].min())


def barrier_domination(fld, fnorm, gamma, p, t0, eta, clip=None, unorm=None):
    """Count nodes of ``B_{11/16} x [t0, t_final]`` where ``u`` exceeds the
    barrier built from the measured Lipschitz constant and sup norm."""
    spec = fld.spec
    tidx = np.nonzero(fld.times >= t0 - 1e-12)[0]
    k0 = tidx[0]
    t0 = float(fld.times[k0])
    mask = nodes_inside(spec, analytic.BALL + 1e-9)
    if clip is None:
        clip = space_lipschitz(ScalarField(spec, fld.values, fld.t_final),
                               origin_cylinder(fld, 1.0, 1.0))
    unorm = fld.sup_norm() if unorm is None else unorm
    c = tuple(np.argmin(np.abs(spec.axis(i) - spec.origin[i])) for i in range(spec.n))
    b = analytic.BarrierSpec(t0, eta, float(fld.values[k0][c]), clip, unorm, fnorm, gamma, p, spec.n)
    x = spec.coords()
    excess = -np.inf
    crossings = 0
    for k in tidx:
        diff = (fld.values[k] - analytic.barrier_upper(x, fld.times[k], b))[mask]
        excess = max(excess, float(diff.max()))
        crossings += int(np.sum(diff > 1e-8 + 2 * spec.h))
    return BarrierReport(float("nan"), crossings, excess, analytic.barrier_M1(b),
                         analytic.barrier_M2(b), crossings == 0)


# -- convergence ---------------------------------------------------------

@dataclass
class ConvergenceReport(_Report):
    kind: str
    hs: list
    errors: list
    order: float
    exact: bool
    min_order: float
    passed: bool


ROUNDOFF = 1e-12


def convergence_study(kind, params, hs, t_depth=0.01, min_order=1.5, cfl_safety=0.5):
    """Sup-norm error at the final time against a manufactured pair, with
    ``eps = h`` on every level, and the fitted order of decay in ``h``.

    A pair reproduced to roundoff on every level is reported as ``exact``.
    """
    errors = []
    for h in hs:
        p = params.with_(eps=h)
        u, f = analytic.manufactured(kind, p)
        p = p.with_(source=f)
        grid = _grid(params.n, h, t_depth)
        fld = solve(ProblemSpec(p, lambda x, u=u: u(x, -t_depth), u, grid, cfl_safety))
        errors.append(float(np.max(np.abs(fld.values[-1] - u(grid.coords(), 0.0)))))
    exact = max(errors) <= ROUNDOFF
    order = float(np.polyfit(np.log(hs), np.log(np.maximum(errors, 1e-300)), 1)[0])
    return ConvergenceReport(kind, list(hs), errors, order, bool(exact), min_order,
                             bool(exact or order >= min_order))


def _grid(n, h, t_depth):
    return GridSpec(n, h, t_depth, t_depth)
