import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import parlab.probe as probe
from parlab.analytic import BarrierSpec, FlatnessConfig, blowup_field
from parlab.errors import DomainTooSmall, EmptyCylinder, UnstableStep
from parlab.lattice import GridSpec, IntrinsicCylinder, ScalarField, nodes_in_cylinder
from parlab.operators import EquationParams
from parlab.solver import ProblemSpec, steady

G2 = GridSpec(2, 0.1, 0.05, 0.5)


def fn(u, grid=G2):
    return ScalarField.from_function(grid, u)


def brute_osc(fld, cyl, l=None):
    pts = nodes_in_cylinder(fld, cyl)
    x = fld.spec.coords()
    vals = [fld.values[k][node] - (0.0 if l is None else float(np.dot(l, x[(slice(None),) + node]
                                                                        - cyl.x0)))
            for node, k in pts]
    return max(vals) - min(vals)


# -- oscillation and planes --------------------------------------------------

def test_oscillation_examples():
    cyl = IntrinsicCylinder.at_origin(2, 0.5)
    assert probe.oscillation(fn(lambda x, t: 0 * x[0] + 1.3 + 0 * t), cyl) == 0.0
    q = np.array([0.6, 0.8])
    osc = probe.oscillation(fn(lambda x, t: q[0] * x[0] + q[1] * x[1] + 0 * t), cyl)
    assert 2 * 0.5 - 2 * G2.h <= osc <= 2 * 0.5
    rng = np.random.default_rng(1)
    rnd = ScalarField(G2, rng.normal(size=(G2.num_slices,) + G2.shape))
    cyl = IntrinsicCylinder(((0.2, -0.1), -0.1), 0.45, 0.7, 1.0)
    assert probe.oscillation(rnd, cyl) == brute_osc(rnd, cyl)


def test_best_plane_exact_plane():
    l, osc = probe.best_plane(fn(lambda x, t: 1.7 * x[0] - 0.9 * x[1] + 0.4 + 0 * t),
                              IntrinsicCylinder.at_origin(2, 0.6))
    assert np.allclose(l, [1.7, -0.9], atol=1e-9) and osc < 1e-9


def test_best_plane_noise_bounds():
    rng = np.random.default_rng(7)
    a = 0.01
    q = np.array([0.5, -1.2])
    noise = rng.uniform(-a, a, size=(G2.num_slices,) + G2.shape)
    base = fn(lambda x, t: q[0] * x[0] + q[1] * x[1] + 0 * t)
    fld = ScalarField(G2, base.values + noise)
    r = 0.6
    l, osc = probe.best_plane(fld, IntrinsicCylinder.at_origin(2, r))
    assert osc <= 2 * a + 1e-12
    assert np.linalg.norm(l - q) <= 2 * a / r * np.sqrt(2)


def test_best_plane_against_grid_search():
    g = GridSpec(2, 0.2, 0.1, 0.3)
    rng = np.random.default_rng(11)
    fld = ScalarField(g, rng.normal(size=(g.num_slices,) + g.shape) * 0.2
                      + 0.8 * g.coords()[0] - 0.3 * g.coords()[1] ** 2)
    cyl = IntrinsicCylinder.at_origin(2, 0.9, 1.0, 0.0)
    l, osc = probe.best_plane(fld, cyl)
    grid_best = min(brute_osc(fld, cyl, np.array([a, b]))
                    for a in np.linspace(-1, 3, 51) for b in np.linspace(-2, 2, 51))
    assert osc <= 1.01 * grid_best + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.3, 0.9))
def test_best_plane_never_worse_than_zero_plane(seed, r):
    rng = np.random.default_rng(seed)
    fld = ScalarField(G2, rng.normal(size=(G2.num_slices,) + G2.shape))
    cyl = IntrinsicCylinder.at_origin(2, r)
    _, osc = probe.best_plane(fld, cyl)
    assert osc <= probe.oscillation(fld, cyl) + 1e-12


# -- flatness --------------------------------------------------------------

def test_flatness_plane_and_zero():
    g = GridSpec(2, 0.02, 0.0025, 0.5)
    cfg = FlatnessConfig(rho=0.5, delta=0.1, C2=1.0, kmax=4)
    rep = probe.flatness_iteration(fn(lambda x, t: 1.5 * x[0] + 0 * t, g), cfg, 1.0)
    assert rep.verdict == "Smooth(0)" and rep.verdict_level == 0
    rep = probe.flatness_iteration(fn(lambda x, t: 0 * x[0] + 0 * t, g), cfg, 1.0)
    assert rep.verdict == "Degenerate" and rep.passed
    for lv in rep.levels:
        assert lv.r == cfg.rho**lv.k and lv.lam == (1 - cfg.delta) ** lv.k
        assert lv.osc == 0 and all(c == 0 for c in lv.l)
    assert rep.to_dict()["levels"][0]["k"] == 0


def test_flatness_unresolved():
    cfg = FlatnessConfig(rho=0.1, delta=0.1, C2=5.0, kmax=3)
    rep = probe.flatness_iteration(fn(lambda x, t: 0.1 * x[0] ** 2 + 0 * t), cfg, 0.0)
    assert rep.verdict == "Unresolved(1)" and not rep.passed
    with pytest.raises(ValueError):
        probe.flatness_iteration(fn(lambda x, t: 0 * x[0] + 0 * t), FlatnessConfig(rho=0.9), 1.0)


def test_flatness_blowup_consistency():
    # node-aligned blow-up: level j of w_k is level k + j of u
    rho, k = 0.5, 1
    cfg = FlatnessConfig(rho=rho, delta=0.1, C2=50.0, C3=50.0, kmax=3)
    src = GridSpec(2, 0.025, 1 / 256, 1.0)
    u = fn(lambda x, t: np.sin(2 * x[0] + 0.3) * np.cos(x[1]) + 0.5 * t, src)
    full = probe.flatness_iteration(u, cfg, 0.0)
    l_k = np.array(full.levels[k].l)
    target = GridSpec(2, src.h / rho**k, src.dt / rho ** (2 * k), 1.0)
    w = blowup_field(u, k, l_k, cfg, 0.0, target=target)
    sub = probe.flatness_iteration(w, FlatnessConfig(rho=rho, delta=0.1, C2=50.0, C3=50.0, kmax=2), 0.0)
    r, lam = cfg.radius(k), cfg.scale(k)
    for j, lv in enumerate(sub.levels):
        ref = full.levels[k + j]
        assert lv.osc * r * lam == pytest.approx(ref.osc, rel=1e-6, abs=2 * src.h * 1e-3)
        assert np.allclose(np.array(lv.l) * lam + l_k, ref.l, atol=1e-6)


# -- seminorms --------------------------------------------------------------

def test_seminorms_plane():
    fld = fn(lambda x, t: 2.5 * x[0] + 0 * t)
    rep = probe.seminorms(fld, probe.origin_cylinder(fld, 0.5), alphas=(0.5,))
    assert rep.exact and rep.space_lip == pytest.approx(2.5)
    assert np.isnan(rep.time_exponent) or rep.time_samples < 3


def test_time_exponent_sqrt():
    g = GridSpec(1, 0.1, 1e-4, 1.0)
    fld = fn(lambda x, t: np.sqrt(np.maximum(-t, 0.0)) + 0 * x[0], g)
    rep = probe.seminorms(fld, probe.origin_cylinder(fld, 1.0), alphas=(0.5,))
    assert rep.time_exponent == pytest.approx(0.5, abs=0.05)
    assert rep.time_r2 >= 0.95


def test_seminorms_match_brute_force():
    g = GridSpec(2, 0.25, 0.1, 0.3)
    rng = np.random.default_rng(2)
    fld = ScalarField(g, rng.normal(size=(g.num_slices,) + g.shape))
    cyl = probe.origin_cylinder(fld, 0.8)
    rep = probe.seminorms(fld, cyl, alphas=(0.5, 0.8))
    pts = nodes_in_cylinder(fld, cyl)
    x, t = g.coords(), fld.times
    lip, hold = 0.0, {0.5: 0.0, 0.8: 0.0}
    for (a, ka), (b, kb) in itertools.combinations(pts, 2):
        dv = abs(fld.values[ka][a] - fld.values[kb][b])
        dx = float(np.linalg.norm(x[(slice(None),) + a] - x[(slice(None),) + b]))
        if ka == kb and dx > 0:
            lip = max(lip, dv / dx)
        for al in hold:
            den = dx**al + abs(t[ka] - t[kb]) ** (al / 2)
            if den > 0:
                hold[al] = max(hold[al], dv / den)
    assert rep.space_lip == pytest.approx(lip, rel=1e-12)
    for al in hold:
        assert rep.holder[al] == pytest.approx(hold[al], rel=1e-12)
    sampled = probe.seminorms(fld, cyl, alphas=(0.5,), max_pairs=50, seed=3)
    assert not sampled.exact and sampled.space_lip <= lip + 1e-12
    again = probe.seminorms(fld, cyl, alphas=(0.5,), max_pairs=50, seed=3)
    assert again.to_dict() == sampled.to_dict()


# -- doubling certificate ------------------------------------------------------

CERT_GRID = GridSpec(1, 0.1, 0.1, 1.0)


def brute_phi(fld, L1, L2, x0, y0, t0, phi, r):
    x = fld.spec.axis()
    best = -np.inf
    for k, t in enumerate(fld.times):
        if t < -r * r - 1e-12:
            continue
        for i, j in itertools.product(range(len(x)), repeat=2):
            if abs(x[i]) > r + 1e-12 or abs(x[j]) > r + 1e-12:
                continue
            val = (fld.values[k][i] - fld.values[k][j] - L2 * phi(abs(x[i] - x[j]))
                   - L1 / 2 * ((x[i] - x0) ** 2 + (x[j] - y0) ** 2 + (t - t0) ** 2))
            best = max(best, val)
    return best


def test_certificate_zero_field():
    fld = fn(lambda x, t: 0 * x[0] + 0 * t, CERT_GRID)
    rep = probe.doubling_certificate(fld, "holder", 1.0, 1.0, [0.0], [0.0], 0.0, beta=0.5)
    assert rep.max_phi == 0.0 and rep.passed
    assert rep.argmax == {"x": [0.0], "y": [0.0], "t": 0.0}


@pytest.mark.parametrize("mode,kw", [("holder", dict(beta=0.5)),
                                     ("lipschitz", dict(nu=1.5, kappa0=0.05))])
def test_certificate_matches_enumeration(mode, kw):
    fld = fn(lambda x, t: np.sin(3 * x[0]) * (1 + t) + 0.2 * np.abs(x[0]), CERT_GRID)
    rep = probe.doubling_certificate(fld, mode, 2.0, 0.7, [0.1], [-0.2], -0.3, **kw)
    phi, info = probe._phi(mode, **kw)
    r = 15 / 16 if mode == "holder" else 7 / 8
    assert rep.max_phi == pytest.approx(brute_phi(fld, 2.0, 0.7, 0.1, -0.2, -0.3, phi, r), abs=1e-14)
    if mode == "lipschitz":
        assert info["s1"] == pytest.approx((1 / (4 * 1.5 * 0.05)) ** 2)


def test_certificate_lipschitz_field():
    L = 1.3
    fld = fn(lambda x, t: L * x[0] + 0 * t, CERT_GRID)
    beta = 0.5
    L2 = L * (2 * 15 / 16) ** (1 - beta)
    rep = probe.doubling_certificate(fld, "holder", 0.0, L2, [0.0], [0.0], 0.0, beta=beta)
    assert rep.passed
    bad = probe.doubling_certificate(fld, "holder", 0.0, 0.0, [0.0], [0.0], 0.0, beta=beta)
    osc = np.ptp(fld.values[-1][np.abs(CERT_GRID.axis()) <= 15 / 16])
    assert not bad.passed and bad.max_phi >= osc / 2


def test_certificate_errors():
    small = fn(lambda x, t: x[0] + 0 * t, GridSpec(1, 0.1, 0.1, 0.5))
    with pytest.raises(DomainTooSmall):
        probe.doubling_certificate(small, "holder", 1, 1, [0], [0], 0, beta=0.5)
    fine = fn(lambda x, t: x[0] + 0 * t, GridSpec(1, 0.02, 0.1, 1.0))
    with pytest.raises(ValueError):
        probe.doubling_certificate(fine, "holder", 1, 1, [0], [0], 0, beta=0.5)
    fld = fn(lambda x, t: x[0] + 0 * t, CERT_GRID)
    for kw in (dict(beta=1.5), dict(nu=2.5, kappa0=0.1), dict(nu=1.5, kappa0=0.1, s1=1.0)):
        with pytest.raises(ValueError):
            probe.doubling_certificate(fld, "lipschitz" if "nu" in kw else "holder", 1, 1, [0], [0], 0, **kw)


def test_calibrated_L2_is_sharp():
    fld = fn(lambda x, t: 0.3 * np.abs(x[0] - 0.05) + 0.1 * np.sin(4 * x[0]) + 0 * t, CERT_GRID)
    L2, C, (xa, ya, ta) = probe.calibrate_L2(fld, "holder", 0.0, 1.0, beta=0.5)
    L1 = probe.localization_L1(fld, xa, ya, ta, "holder")
    assert probe.doubling_certificate(fld, "holder", L1, L2, xa, ya, ta, beta=0.5).passed
    assert not probe.doubling_certificate(fld, "holder", L1, L2 / 2, xa, ya, ta, beta=0.5).passed


# -- q sweep -----------------------------------------------------------------

def sweep_base(w0=None):
    g = GridSpec(2, 0.1, 0.05, 0.2)
    w0 = w0 or (lambda x: 0.3 * np.abs(x[0] - 0.1) - 0.2 * x[1] ** 2)
    return ProblemSpec(EquationParams(1.0, 3.0, 2, eps=0.1), w0, steady(lambda x, t=0.0: w0(x)), g)


def test_q_sweep_zero_and_trivial():
    base = sweep_base()
    tab = probe.q_sweep(base, [0.0])
    from parlab.solver import solve
    ref = probe.space_lipschitz(solve(base), probe.origin_cylinder(solve(base), 0.5))
    assert len(tab.rows) == 1 and tab.rows[0].lip_w == pytest.approx(ref)
    zero = probe.q_sweep(sweep_base(lambda x: 0.0 * x[0]), [1.0, 4.0])
    assert all(r.lip_w == 0 for r in zero.rows) and zero.passed


def test_q_sweep_error_row(monkeypatch):
    real = probe.solve

    def flaky(spec, *a, **k):
        if abs(spec.params.q[0] - 8.0) < 1e-12:
            raise UnstableStep("forced")
        return real(spec, *a, **k)

    monkeypatch.setattr(probe, "solve", flaky)
    tab = probe.q_sweep(sweep_base(), [4.0, 8.0, 16.0])
    assert [r.error is not None for r in tab.rows] == [False, True, False]
    assert "UnstableStep" in tab.rows[1].error and not tab.passed
    with pytest.raises(ValueError):
        probe.q_sweep(sweep_base(), [1.0], gamma=-0.5)


# -- barrier and convergence ------------------------------------------------------

def test_barrier_probes():
    b = BarrierSpec(-0.5, 0.5, 0.0, 1.0, 0.5, 0.1, 1.0, 3.0, 2)
    assert probe.barrier_residual(b, 0.05) >= -1e-8
    fld = fn(lambda x, t: 0.2 * np.sin(x[0]) + 0 * t)
    rep = probe.barrier_domination(fld, 0.0, 1.0, 3.0, -0.5, 0.5)
    assert rep.crossings == 0 and rep.passed and rep.M2 > 0


def test_convergence_study_exact_pair():
    rep = probe.convergence_study("quadratic-stationary", EquationParams(1.0, 3.0, 2), [0.1, 0.05])
    assert rep.exact and rep.passed
    with pytest.raises(Exception):
        probe.convergence_study("nope", EquationParams(1.0, 3.0, 2), [0.1, 0.05])


def test_empty_cylinder_propagates():
    with pytest.raises(EmptyCylinder):
        probe.best_plane(fn(lambda x, t: x[0] + 0 * t), IntrinsicCylinder.at_origin(2, 0.05))
