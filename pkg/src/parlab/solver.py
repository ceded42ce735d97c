"""Explicit time stepping with Dirichlet data on the parabolic boundary."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTimeStep, UnstableStep
from .lattice import ScalarField
from .operators import DeviationParams, interior, slice_operator

try:
    from ._kernels import drift as _fused_drift, march as _fused_march
except ImportError:  # pragma: no cover
    _fused_drift = _fused_march = None

MIN_DT = 1e-12
MP_SLACK = 1e-6


def steady(fn):
    """Mark a data function ``(x, t)`` as independent of ``t``.

    Marked sources are evaluated once; when the source and the boundary data
    are both marked, the steps between stored slices run in compiled code.
    """
    fn.time_independent = True
    return fn


def _is_steady(fn):
    return fn is None or bool(getattr(fn, "time_independent", False))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    params: object
    initial: object
    boundary: object
    grid: object
    cfl_safety: float = 0.5

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.params.n != self.grid.n:
            raise ValueError("params and grid disagree on the dimension")
        x = self.grid.coords()[:, self.grid.boundary_mask()]
        t0 = -self.grid.t_depth
        a = np.broadcast_to(self.initial(x), x.shape[1:])
        b = np.broadcast_to(self.boundary(x, t0), x.shape[1:])
        gap = float(np.max(np.abs(a - b)))
        if gap > 1e-10:
            raise ValueError(f"initial and boundary data disagree on the boundary by {gap:.3g}")


@dataclass
class SolveHistory:
    times: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    margins: list = field(default_factory=list)
    slice_steps: list = field(default_factory=list)

    def summary(self):
        dts = np.asarray(self.dts) if self.dts else np.zeros(1)
        mg = np.asarray(self.margins) if self.margins else np.zeros(1)
        return {
            "steps": len(self.dts),
            "dt_min": float(dts.min()),
            "dt_max": float(dts.max()),
            "margin_min": float(mg.min()),
            "steps_per_slice": list(self.slice_steps),
        }


def _dt_from_deg(maxdeg, params, h, cfl_safety):
    if maxdeg == 0:
        return h * h
    dt = cfl_safety * h * h / (2.0 * (params.n + abs(params.p - 2.0)) * maxdeg)
    if dt < MIN_DT:
        raise DegenerateTimeStep(f"stable dt {dt:.3g} below {MIN_DT:g}")
    return dt


def stable_dt(u, params, h, cfl_safety=0.5):
    """``cfl h^2 / (2 (n + |p-2|) max|Du|^gamma)``, or ``h^2`` on a flat slice."""
    _, _, deg = slice_operator(u, h, params)
    return _dt_from_deg(float(np.max(deg)), params, h, cfl_safety)


class _Stepper:
    def __init__(self, params, grid, boundary):
        self.params = params
        self.grid = grid
        self.boundary = boundary
        x = grid.coords()
        self.bmask = grid.boundary_mask()
        self.xb = x[:, self.bmask]
        self.xi = interior(x, grid.n)
        src = getattr(params, "source", None) or getattr(params, "fbar", None)
        self._f_cache = None
        self._steady = _is_steady(src)
        self.frozen = self._steady and _is_steady(boundary) and _fused_march is not None

    def rhs(self, t):
        if self._steady:
            if self._f_cache is None:
                self._f_cache = self.params.rhs(self.xi, t)
            return self._f_cache
        return self.params.rhs(self.xi, t)

    def operator(self, u):
        """``(|Du|^gamma Delta_p^N u, |Du|^gamma)`` at interior nodes."""
        if _fused_drift is not None:
            return _fused_drift(u, self.grid.h, self.params)
        _, plap, deg = slice_operator(u, self.grid.h, self.params)
        return deg * plap, deg

    def advance(self, u, dt, t, op=None):
        drift, _ = self.operator(u) if op is None else op
        f = self.rhs(t)
        new = np.array(u, dtype=float, copy=True)
        interior(new, self.grid.n)[...] = interior(u, self.grid.n) + dt * (drift + f)
        bvals = np.broadcast_to(self.boundary(self.xb, t + dt), self.xb.shape[1:])
        new[self.bmask] = bvals
        fmax = float(np.max(np.abs(f))) if f.size else 0.0
        bound = max(float(np.max(np.abs(u))), float(np.max(np.abs(bvals)))) + dt * fmax
        margin = bound - float(np.max(np.abs(new)))
        if margin < -MP_SLACK:
            raise UnstableStep(f"max-principle bound exceeded by {-margin:.3g} at t={t + dt:.6g}")
        return new, margin


def step(u, params, dt, grid, t, boundary):
    """One forward-Euler step from time ``t``; boundary set at ``t + dt``."""
    new, _ = _Stepper(params, grid, boundary).advance(np.asarray(u, dtype=float), dt, t)
    return new


def solve(spec, t_final=0.0):
    """Trajectory on ``[t_final - t_depth, t_final]``, one stored slice per ``grid.dt``."""
    return solve_ensemble([spec], t_final)[0]


def solve_ensemble(specs, t_final=0.0):
    """Solve several problems on one grid with a shared step sequence.

    Every step uses the smallest stable dt over the members, so two runs
    differ only through their data; this is what discrete comparison needs.
    """
    grid = specs[0].grid
    if any(s.grid != grid for s in specs):
        raise ValueError("ensemble members must share a grid")
    steppers = [_Stepper(s.params, grid, s.boundary) for s in specs]
    times = grid.times(t_final)
    x = grid.coords()
    us = [np.array(np.broadcast_to(s.initial(x), grid.shape), dtype=float) for s in specs]
    vals = [np.empty((grid.num_slices,) + grid.shape) for _ in specs]
    for v, u in zip(vals, us):
        v[0] = u
    hists = [SolveHistory() for _ in specs]
    if len(specs) == 1 and steppers[0].frozen:
        return [_solve_frozen(specs[0], steppers[0], us[0], vals[0], hists[0], times, t_final)]
    t = float(times[0])
    for k in range(1, len(times)):
        target = float(times[k])
        nsteps = 0
        while t < target:
            ops = [st.operator(u) for st, u in zip(steppers, us)]
            try:
                dt = min(_dt_from_deg(float(np.max(op[1])), s.params, grid.h, s.cfl_safety)
                         for op, s in zip(ops, specs))
                last = dt >= target - t - 1e-12 * max(1.0, abs(target))
                if last:
                    dt = target - t
                out = [st.advance(u, dt, t, op) for st, u, op in zip(steppers, us, ops)]
            except (UnstableStep, DegenerateTimeStep) as exc:
                err = type(exc)(f"{exc} (solve failed at t={t:.6g})")
                err.t = t
                raise err from exc
            t = target if last else t + dt
            us = [o[0] for o in out]
            for hist, o in zip(hists, out):
                hist.times.append(t)
                hist.dts.append(dt)
                hist.margins.append(o[1])
            nsteps += 1
        for hist, v, u in zip(hists, vals, us):
            hist.slice_steps.append(nsteps)
            v[k] = u
    return [ScalarField(grid, v, t_final, history=hst) for v, hst in zip(vals, hists)]


def _solve_frozen(spec, st, u, vals, hist, times, t_final):
    grid = spec.grid
    u[st.bmask] = np.broadcast_to(spec.boundary(st.xb, float(times[0])), st.xb.shape[1:])
    bmax = float(np.max(np.abs(u[st.bmask])))
    f = st.rhs(float(times[0]))
    t = float(times[0])
    for k in range(1, len(times)):
        target = float(times[k])
        u, dts, margins, status = _fused_march(u, grid.h, spec.params, f, spec.cfl_safety,
                                               t, target, bmax, MIN_DT, MP_SLACK)
        steps = np.cumsum(dts)
        hist.times.extend((t + steps[:-1]).tolist() + [target] if len(dts) else [])
        hist.dts.extend(dts.tolist())
        hist.margins.extend(margins.tolist())
        hist.slice_steps.append(len(dts))
        if status:
            at = t + float(steps[-2]) if len(steps) > 1 else t
            if status == 1:
                err = UnstableStep(f"max-principle bound exceeded by {-margins[-1]:.3g} "
                                   f"(solve failed at t={at:.6g})")
            else:
                err = DegenerateTimeStep(f"stable dt below {MIN_DT:g} (solve failed at t={at:.6g})")
            err.t = at
            raise err
        t = target
        vals[k] = u
    return ScalarField(grid, vals, t_final, history=hist)


def solve_deviation(spec, t_final=0.0):
    if not isinstance(spec.params, DeviationParams):
        raise TypeError("solve_deviation needs DeviationParams")
    return solve(spec, t_final)
