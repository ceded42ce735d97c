"""Space-time lattices, sampled fields and intrinsic cylinders.

Spatial points are stored with their coordinates on the *first* axis, so a
single point is an array of shape ``(n,)`` and a batch of points has shape
``(n, ...)``. Field values are stored as one array of shape ``(T, N)`` in 1D or
``(T, N, N)`` in 2D, slice ``0`` being the earliest time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import EmptyCylinder, OutOfDomain

_SNAP = 1e-9


def _integer_ratio(a, b, what):
    k = a / b
    m = round(k)
    if m < 1 or abs(k - m) > 1e-8 * max(1.0, k):
        raise ValueError(f"{what}: {a} is not an integer multiple of {b}")
    return int(m)


@dataclass(frozen=True)
class GridSpec:
    """Uniform lattice on the box ``origin + [-half_width, half_width]^n``
    times ``[t_final - t_depth, t_final]``.

    ``dt`` is the spacing between stored time slices; the solver may take
    several adaptive sub-steps between two slices.
    """

    n: int
    h: float
    dt: float
    t_depth: float
    origin: tuple = None
    half_width: float = 1.0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        if not (self.h > 0 and self.dt > 0 and self.t_depth > 0):
            raise ValueError("h, dt and t_depth must be positive")
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * self.n)
        origin = tuple(float(c) for c in self.origin)
        if len(origin) != self.n:
            raise ValueError("origin has the wrong dimension")
        object.__setattr__(self, "origin", origin)
        # odd node count per axis keeps the origin on a node
        _integer_ratio(self.half_width, self.h, "half_width/h")
        _integer_ratio(self.t_depth, self.dt, "t_depth/dt")

    @property
    def nodes_per_axis(self):
        return 2 * round(self.half_width / self.h) + 1

    @property
    def shape(self):
        return (self.nodes_per_axis,) * self.n

    @property
    def num_slices(self):
        return round(self.t_depth / self.dt) + 1

    def axis(self, i=0):
        m = round(self.half_width / self.h)
        return self.origin[i] + self.h * np.arange(-m, m + 1, dtype=float)

    def coords(self):
        """Node coordinates, shape ``(n, *shape)``."""
        axes = [self.axis(i) for i in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def times(self, t_final=0.0):
        k = np.arange(self.num_slices, dtype=float)
        return t_final - self.t_depth + k * self.dt

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for i in range(self.n):
            idx = [slice(None)] * self.n
            idx[i] = 0
            mask[tuple(idx)] = True
            idx[i] = -1
            mask[tuple(idx)] = True
        return mask

    def to_dict(self):
        return {
            "n": self.n,
            "h": self.h,
            "dt": self.dt,
            "t_depth": self.t_depth,
            "origin": list(self.origin),
            "half_width": self.half_width,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n=d["n"],
            h=d["h"],
            dt=d["dt"],
            t_depth=d["t_depth"],
            origin=tuple(d.get("origin") or [0.0] * d["n"]),
            half_width=d.get("half_width", 1.0),
        )


@dataclass(frozen=True, eq=False)
class ScalarField:
    spec: GridSpec
    values: np.ndarray
    t_final: float = 0.0
    history: object = dc_field(default=None, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        expected = (self.spec.num_slices,) + self.spec.shape
        if vals.shape != expected:
            raise ValueError(f"values have shape {vals.shape}, expected {expected}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def slices(self):
        return self.values

    @property
    def times(self):
        return self.spec.times(self.t_final)

    @property
    def t_start(self):
        return self.t_final - self.spec.t_depth

    def coords(self):
        return self.spec.coords()

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    @classmethod
    def from_function(cls, spec, u, t_final=0.0):
        """Sample ``u(x, t)`` on every node of ``spec``."""
        x = spec.coords()
        vals = np.empty((spec.num_slices,) + spec.shape)
        for k, t in enumerate(spec.times(t_final)):
            vals[k] = np.broadcast_to(u(x, t), spec.shape)
        return cls(spec, vals, t_final)


@dataclass(frozen=True)
class IntrinsicCylinder:
    """``B_r(x0) x (t0 - r^2 lam^-gamma, t0]``."""

    center: tuple
    r: float
    lam: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def x0(self):
        return np.asarray(self.center[0], dtype=float).reshape(-1)

    @property
    def t0(self):
        return float(self.center[1])

    @property
    def depth(self):
        return self.r**2 * self.lam ** (-self.gamma)

    @classmethod
    def at_origin(cls, n, r, lam=1.0, gamma=0.0):
        return cls(((0.0,) * n, 0.0), r, lam, gamma)


def cylinder_mask(fld, cyl):
    """Spatial boolean mask and the time-slice indices inside ``cyl``."""
    spec = fld.spec
    x = spec.coords()
    x0 = cyl.x0.reshape((spec.n,) + (1,) * spec.n)
    dist2 = np.sum((x - x0) ** 2, axis=0)
    smask = dist2 < cyl.r**2 * (1 - _SNAP)
    t = fld.times
    lo = cyl.t0 - cyl.depth
    span = max(cyl.depth, spec.dt)
    tidx = np.nonzero((t > lo + _SNAP * span) & (t <= cyl.t0 + _SNAP * span))[0]
    return smask, tidx


def _check_resolved(smask, tidx, cyl):
    ns, nt = int(smask.sum()), len(tidx)
    if ns < 4 or nt < 2:
        raise EmptyCylinder(
            f"cylinder r={cyl.r:g}, depth={cyl.depth:g} holds {ns} nodes "
            f"and {nt} slices (need 4 and 2)"
        )


def nodes_in_cylinder(fld, cyl):
    """Lattice points ``(node_index, time_index)`` inside the cylinder."""
    smask, tidx = cylinder_mask(fld, cyl)
    _check_resolved(smask, tidx, cyl)
    nodes = [tuple(int(i) for i in ix) for ix in np.argwhere(smask)]
    return [(node, int(k)) for k in tidx for node in nodes]


def cylinder_values(fld, cyl, with_coords=False):
    """Field values inside a resolved cylinder, shape ``(T_in, M)``.

    With ``with_coords`` also returns the node coordinates, shape ``(n, M)``.
    """
    smask, tidx = cylinder_mask(fld, cyl)
    _check_resolved(smask, tidx, cyl)
    vals = fld.values[tidx][:, smask]
    if with_coords:
        return vals, fld.spec.coords()[:, smask], fld.times[tidx]
    return vals


def _locate(s, m, name):
    """Cell index and fractional weight for lattice coordinate ``s``."""
    s = np.asarray(s, dtype=float)
    r = np.round(s)
    s = np.where(np.abs(s - r) < _SNAP, r, s)
    if np.any(s < -_SNAP) or np.any(s > m + _SNAP):
        raise OutOfDomain(f"{name} outside the lattice")
    j = np.clip(np.floor(s), 0, max(m - 1, 0)).astype(int)
    return j, np.clip(s - j, 0.0, 1.0)


def interp_slice(vals, spec, x):
    """Multilinear interpolation of a single slice at points ``x`` (n, ...)."""
    x = np.asarray(x, dtype=float)
    m = spec.nodes_per_axis - 1
    lo = np.array(spec.origin) - spec.half_width
    idx, wts = [], []
    for i in range(spec.n):
        j, w = _locate((x[i] - lo[i]) / spec.h, m, "point")
        idx.append(j)
        wts.append(w)
    out = 0.0
    for corner in range(2**spec.n):
        bits = [(corner >> i) & 1 for i in range(spec.n)]
        weight = 1.0
        for i, b in enumerate(bits):
            weight = weight * (wts[i] if b else 1.0 - wts[i])
        out = out + weight * vals[tuple(idx[i] + bits[i] for i in range(spec.n))]
    return out


def sample(fld, x, t):
    """Multilinear in space, linear in time; exact on affine functions."""
    spec = fld.spec
    x = np.asarray(x, dtype=float)
    if x.shape[0] != spec.n:
        raise ValueError("point dimension does not match the field")
    k, wt = _locate((np.asarray(t, dtype=float) - fld.t_start) / spec.dt,
                    spec.num_slices - 1, "time")
    k = np.broadcast_to(k, x.shape[1:]) if x.ndim > 1 else k
    wt = np.broadcast_to(wt, x.shape[1:]) if x.ndim > 1 else wt
    if np.ndim(k) == 0:
        a = interp_slice(fld.values[int(k)], spec, x)
        if wt == 0.0:
            return a
        b = interp_slice(fld.values[int(k) + 1], spec, x)
        return (1.0 - wt) * a + wt * b
    last = spec.num_slices - 1
    a = np.empty(k.shape)
    b = np.empty(k.shape)
    for kk in np.unique(k):
        sel = k == kk
        xs = x[:, sel]
        a[sel] = interp_slice(fld.values[kk], spec, xs)
        b[sel] = interp_slice(fld.values[min(kk + 1, last)], spec, xs)
    return (1.0 - wt) * a + wt * b


def restrict(fld, stride=1, tstride=1):
    """Sub-lattice keeping every ``stride``-th node and ``tstride``-th slice.

    Both strides must divide the lattice so that the origin and the final
    time are kept.
    """
    spec = fld.spec
    m = round(spec.half_width / spec.h)
    kt = spec.num_slices - 1
    if m % stride or kt % tstride:
        raise ValueError("strides must divide the lattice")
    new = GridSpec(spec.n, spec.h * stride, spec.dt * tstride, spec.t_depth,
                   spec.origin, spec.half_width)
    sl = (slice(None, None, tstride),) + (slice(None, None, stride),) * spec.n
    return ScalarField(new, fld.values[sl], fld.t_final)


def window(fld, half_width=None, t_depth=None):
    """Sub-field on a smaller centred box and/or a shorter final time window."""
    spec = fld.spec
    hw = spec.half_width if half_width is None else half_width
    td = spec.t_depth if t_depth is None else t_depth
    new = GridSpec(spec.n, spec.h, spec.dt, td, spec.origin, hw)
    cut = round((spec.half_width - hw) / spec.h)
    kt = spec.num_slices - new.num_slices
    if cut < 0 or kt < 0:
        raise ValueError("window larger than the field")
    sl = (slice(kt, None),) + (slice(cut, spec.nodes_per_axis - cut),) * spec.n
    return ScalarField(new, fld.values[sl], fld.t_final)


# -- field dump -------------------------------------------------------------

def dump_field(fld, path, params=None, extra=None):
    """Write ``path`` (CSV: t, x1[, x2], value) and ``path.json`` sidecar."""
    path = Path(path)
    spec = fld.spec
    x = spec.coords().reshape(spec.n, -1)
    cols = ["t"] + [f"x{i + 1}" for i in range(spec.n)] + ["value"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k, t in enumerate(fld.times):
            vals = fld.values[k].reshape(-1)
            for j in range(vals.size):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x[:, j]]
                           + [repr(float(vals[j]))])
    side = {"format": "parlab-field/1", "grid": spec.to_dict(), "t_final": fld.t_final}
    if params is not None:
        side["params"] = params.to_dict()
    if extra:
        side.update(extra)
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def load_field(path):
    """Inverse of :func:`dump_field`; returns ``(field, sidecar_dict)``."""
    path = Path(path)
    side = json.loads(Path(str(path) + ".json").read_text())
    spec = GridSpec.from_dict(side["grid"])
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    vals = np.array([float(r[-1]) for r in rows[1:]])
    vals = vals.reshape((spec.num_slices,) + spec.shape)
    return ScalarField(spec, vals, side.get("t_final", 0.0)), side


def nodes_inside(spec, radius, center=None):
    """Boolean mask of nodes with ``|x - center| < radius``."""
    x = spec.coords()
    c = np.zeros(spec.n) if center is None else np.asarray(center, dtype=float)
    d2 = np.sum((x - c.reshape((spec.n,) + (1,) * spec.n)) ** 2, axis=0)
    return d2 < radius**2 * (1 - _SNAP)

