import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import cornerpde as cp
from cornerpde import NumericError, ValidationError


def _interp(mesh, fun):
    return cp.FieldSnapshot(mesh, fun(mesh.nodes))


def _smooth(p):
    return np.sin(math.pi * p[:, 0]) * np.sin(math.pi * p[:, 1])


# ---------------------------------------------------------------------------
# weighted norms
# ---------------------------------------------------------------------------

def test_kondratiev_constant_sector_closed_form():
    # constant field, a = -1, p = 2 on the 3pi/2 sector of radius 1:
    # integral of rho^2 = (3pi/2) * (1/4), norm = sqrt(3pi/8); the curved
    # slivers beyond the polygon chords are part of the quadrature support
    sec = cp.make_sector(3 * math.pi / 2, 1.0)
    mesh = cp.mesh_uniform(sec, 1 / 8)
    ones = cp.FieldSnapshot(mesh, np.ones(mesh.n_nodes))
    val = cp.kondratiev_norm(ones, cp.KondratievParams(m=0, p=2.0, a=-1.0))
    assert val == pytest.approx(math.sqrt(3 * math.pi / 8), rel=1e-10)


def test_kondratiev_singular_mode_depth_stable():
    # the r^(2/3) corner mode with a = 1/2: doubling the radial subdivision
    # depth must not move the value
    sec = cp.make_sector(3 * math.pi / 2, 1.0)
    mesh = cp.mesh_uniform(sec, 1 / 8)
    r = np.linalg.norm(mesh.nodes, axis=1)
    phi = np.arctan2(mesh.nodes[:, 1], mesh.nodes[:, 0])
    u = r ** (2 / 3) * np.sin(2 * (phi + 3 * math.pi / 4) / 3)
    field = cp.FieldSnapshot(mesh, u)
    params = cp.KondratievParams(m=1, p=2.0, a=0.5)
    v8 = cp.kondratiev_norm(field, params, depth=8)
    v16 = cp.kondratiev_norm(field, params, depth=16)
    assert abs(v16 / v8 - 1.0) < 1e-6


def test_kondratiev_a0_m0_is_l2():
    ls = cp.make_l_shape()
    mesh = cp.mesh_uniform(ls, 1 / 4)
    rng = np.random.default_rng(2)
    vals = rng.standard_normal(mesh.n_nodes)
    field = cp.FieldSnapshot(mesh, vals)
    got = cp.kondratiev_norm(field, cp.KondratievParams(m=0, p=2.0, a=0.0))
    ops = cp.assemble(mesh)
    want = math.sqrt(vals @ (ops.mass @ vals))
    assert got == pytest.approx(want, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(a_lo=st.floats(-1.0, 0.8), da=st.floats(0.01, 0.5), seed=st.integers(0, 50))
def test_kondratiev_monotone_in_weight_exponent(a_lo, da, seed):
    # rho <= 1, so rho^(-p a) grows with a: the m = 0 norm is nondecreasing
    ls = cp.make_l_shape()
    mesh = cp.mesh_uniform(ls, 1 / 4)
    rng = np.random.default_rng(seed)
    field = cp.FieldSnapshot(mesh, rng.standard_normal(mesh.n_nodes))
    lo = cp.kondratiev_norm(field, cp.KondratievParams(m=0, p=2.0, a=a_lo))
    hi = cp.kondratiev_norm(field, cp.KondratievParams(m=0, p=2.0, a=a_lo + da))
    assert lo <= hi * (1 + 1e-12)


def test_kondratiev_validation():
    sq = cp.make_square()
    mesh = cp.mesh_uniform(sq, 0.5)
    field = cp.FieldSnapshot(mesh, np.zeros(mesh.n_nodes))
    with pytest.raises(ValidationError):
        cp.kondratiev_norm(field, cp.KondratievParams(m=2, p=2.0, a=0.0))
    with pytest.raises(ValidationError):
        cp.KondratievParams(m=-1)
    with pytest.raises(ValidationError):
        cp.KondratievParams(m=0, p=1.0)
    with pytest.raises(ValidationError):
        cp.kondratiev_norm(field, cp.KondratievParams(m=0), depth=0)


def test_sobolev_norm_linear_oracle():
    # u = x on the unit square: |u|_L2^2 = 1/3, |grad u|^2 = 1
    sq = cp.make_square()
    mesh = cp.mesh_uniform(sq, 1 / 8)
    fx = cp.FieldSnapshot(mesh, mesh.nodes[:, 0].copy())
    assert cp.sobolev_norm(fx, 0) == pytest.approx(math.sqrt(1 / 3), rel=1e-12)
    assert cp.sobolev_norm(fx, 1) == pytest.approx(math.sqrt(1 / 3 + 1.0), rel=1e-12)
    with pytest.raises(ValidationError):
        cp.sobolev_norm(fx, 2)


def test_sobolev_m1_dominates_m0():
    ls = cp.make_l_shape()
    mesh = cp.mesh_uniform(ls, 1 / 4)
    rng = np.random.default_rng(9)
    field = cp.FieldSnapshot(mesh, rng.standard_normal(mesh.n_nodes))
    assert cp.sobolev_norm(field, 1) >= cp.sobolev_norm(field, 0)


def test_l2_error_against_exact_linear_is_zero():
    ls = cp.make_l_shape()
    mesh = cp.mesh_uniform(ls, 1 / 4)
    field = _interp(mesh, lambda p: 2 * p[:, 0] - p[:, 1] + 0.25)
    err = cp.l2_error_against(field, lambda p: 2 * p[:, 0] - p[:, 1] + 0.25)
    assert err < 1e-13


def test_l2_error_against_interpolation_rate():
    sq = cp.make_square()
    errs = [cp.l2_error_against(_interp(cp.mesh_uniform(sq, 1 / n), _smooth), _smooth)
            for n in (4, 8, 16, 32)]
    slope, _, _ = cp.fit_loglog([1 / 4, 1 / 8, 1 / 16, 1 / 32], errs)
    assert slope == pytest.approx(2.0, abs=0.1)


# ---------------------------------------------------------------------------
# error ladders
# ---------------------------------------------------------------------------

def test_self_convergence_errors_decreasing():
    sq = cp.make_square()
    meshes = [cp.mesh_uniform(sq, 1 / n) for n in (4, 8, 16, 32)]
    ref = cp.mesh_uniform(sq, 1 / 64)
    snaps = [_interp(m, _smooth) for m in meshes]
    reference = _interp(ref, _smooth)
    for norm in ("l2", "energy"):
        errs = cp.self_convergence_errors(snaps, reference, norm=norm)
        assert errs.shape == (4,)
        assert (errs > 0).all()
        assert (np.diff(errs) < 0).all()
    # the energy norm dominates the L2 norm error for the same pair
    e_l2 = cp.self_convergence_errors(snaps, reference, norm="l2")
    e_en = cp.self_convergence_errors(snaps, reference, norm="energy")
    assert (e_en >= e_l2).all()
    with pytest.raises(ValidationError):
        cp.self_convergence_errors(snaps, reference, norm="h7")


def test_cross_family_l2_errors_measure_nodal_defect():
    # the cross-family error is the nodal difference from the reference
    # measured in the snapshot's own mass matrix: inject a known defect on
    # top of a shared smooth field and recover its L2 size per level
    ls = cp.make_l_shape()

    def fun(p):
        return np.sin(p[:, 0] + 0.3) * np.cos(p[:, 1])

    def defect(p):
        return np.cos(2 * p[:, 0]) * np.sin(p[:, 1] + 0.1)

    ns = (4, 8, 16)
    snaps, expected = [], []
    for n in ns:
        mesh = cp.mesh_uniform(ls, 1 / n)
        c = (1 / n) ** 1.5
        snaps.append(cp.FieldSnapshot(mesh, fun(mesh.nodes) + c * defect(mesh.nodes)))
        d = c * defect(mesh.nodes)
        mass = cp.assemble(mesh).mass
        expected.append(math.sqrt(d @ (mass @ d)))
    reference = _interp(cp.mesh_graded(ls, 128, 2 / 3), fun)
    cross = cp.cross_family_l2_errors(snaps, reference)
    assert (np.diff(cross) < 0).all()
    # the graded reference's small interpolation floor is the only slack
    assert np.allclose(cross, expected, rtol=5e-3)
    slope, _, _ = cp.fit_loglog([1 / n for n in ns], cross)
    assert slope == pytest.approx(1.5, abs=0.05)


def test_galerkin_energy_errors_closed_form():
    # synthetic constant fields make the Richardson extrapolation exact:
    # J = [0, .75, .9375, .984375] -> diffs contract by 4, J* = 1,
    # errors = sqrt(1 - J) = [1, 1/2, 1/4]
    sq = cp.make_square()
    meshes = [cp.mesh_uniform(sq, 1 / n) for n in (4, 8, 16, 32)]
    cs = [0.0, 0.75, 0.9375, 0.984375]
    fields = [cp.FieldSnapshot(m, np.full(m.n_nodes, c)) for m, c in zip(meshes, cs)]
    errs = cp.galerkin_energy_errors(fields[:3], fields[3], 1.0)
    assert np.allclose(errs, [1.0, 0.5, 0.25], rtol=1e-12)


def test_galerkin_energy_errors_guards():
    sq = cp.make_square()
    meshes = [cp.mesh_uniform(sq, 1 / n) for n in (4, 8, 16, 32)]

    def fields_for(cs):
        return [cp.FieldSnapshot(m, np.full(m.n_nodes, c)) for m, c in zip(meshes, cs)]

    dec = fields_for([0.9, 0.5, 0.4, 0.39])
    with pytest.raises(NumericError, match="must increase"):
        cp.galerkin_energy_errors(dec[:3], dec[3], 1.0)
    expanding = fields_for([0.0, 0.1, 0.5, 2.0])
    with pytest.raises(NumericError, match="not contracting"):
        cp.galerkin_energy_errors(expanding[:3], expanding[3], 1.0)
    ok = fields_for([0.0, 0.75, 0.9375, 0.984375])
    with pytest.raises(ValidationError):
        cp.galerkin_energy_errors(ok[:1], ok[3], 1.0)   # too few fields
    skewed = [ok[0], ok[2], ok[3]]                      # n jumps 4 -> 16
    with pytest.raises(ValidationError):
        cp.galerkin_energy_errors(skewed[:2], skewed[2], 1.0)


# ---------------------------------------------------------------------------
# hierarchical surpluses and N-term approximation
# ---------------------------------------------------------------------------

def test_surplus_roundtrip_square_and_lshape():
    for dom, h in ((cp.make_square(), 1 / 16), (cp.make_l_shape(), 1 / 8)):
        mesh = cp.mesh_uniform(dom, h)
        rng = np.random.default_rng(3)
        vals = rng.standard_normal(mesh.n_nodes)
        hc = cp.hierarchical_coefficients(cp.FieldSnapshot(mesh, vals))
        assert hc.n_coefficients == mesh.n_nodes
        rec = cp.surplus_reconstruct(hc)
        assert np.max(np.abs(rec - vals)) < 1e-12
        # raw-coefficient route reconstructs too
        rec_raw = cp.surplus_reconstruct(hc, hc.raw, scaled=False)
        assert np.max(np.abs(rec_raw - vals)) < 1e-12


def test_surplus_levels_partition_nodes():
    sq = cp.make_square()
    mesh = cp.mesh_uniform(sq, 1 / 8)
    hc = cp.hierarchical_coefficients(cp.FieldSnapshot(mesh, np.zeros(mesh.n_nodes)))
    assert hc.n_levels == 4                      # n = 8 = 1 * 2**3
    counts = np.bincount(hc.levels)
    assert counts.sum() == mesh.n_nodes
    assert counts[0] == 4                        # corners of the unit cell


def test_surplus_decay_for_smooth_fields():
    sq = cp.make_square()
    mesh = cp.mesh_uniform(sq, 1 / 32)
    vals = np.sin(2 * mesh.nodes[:, 0]) * np.exp(mesh.nodes[:, 1])
    hc = cp.hierarchical_coefficients(cp.FieldSnapshot(mesh, vals))
    peaks = [np.abs(hc.raw[hc.levels == lev]).max() for lev in range(1, hc.n_levels)]
    # raw surpluses of a C^2 field shrink ~ 4x per level
    ratios = [a / b for a, b in zip(peaks, peaks[1:])]
    assert min(ratios) > 2.5


def test_surplus_requires_lattice():
    ls = cp.make_l_shape()
    graded = cp.mesh_graded(ls, 8, 2 / 3)
    with pytest.raises(ValidationError):
        cp.hierarchical_coefficients(cp.FieldSnapshot(graded, np.zeros(graded.n_nodes)))
    sec = cp.make_sector(math.pi, 1.0)
    polar = cp.mesh_uniform(sec, 1 / 4)
    with pytest.raises(ValidationError):
        cp.hierarchical_coefficients(cp.FieldSnapshot(polar, np.zeros(polar.n_nodes)))
    mesh = cp.mesh_uniform(cp.make_square(), 1 / 12)   # 12 = 3 * 4: not 2**L
    with pytest.raises(ValidationError):
        cp.hierarchical_coefficients(cp.FieldSnapshot(mesh, np.zeros(mesh.n_nodes)))
    # but coarse_n = 3 legalizes it
    hc = cp.hierarchical_coefficients(cp.FieldSnapshot(mesh, np.zeros(mesh.n_nodes)), coarse_n=3)
    assert hc.n_levels == 3


def test_best_n_term_basics():
    c = 1.0 / np.arange(1, 2001)
    approx, err0 = cp.best_n_term(c, 2000)
    assert err0 == 0.0
    assert np.array_equal(approx, c)
    approx5, err5 = cp.best_n_term(c, 5)
    assert np.flatnonzero(approx5).tolist() == [0, 1, 2, 3, 4]
    assert err5 == pytest.approx(math.sqrt(np.sum(c[5:] ** 2)))
    with pytest.raises(ValidationError):
        cp.best_n_term(c, -1)


def test_nterm_sweep_harmonic_slope():
    # c_k = 1/k: sigma_N ~ N^(-1/2)
    c = 1.0 / np.arange(1, 2001)
    Ns = [10, 20, 40, 80, 160, 320]
    sig = cp.nterm_error_sweep(c, Ns)
    slope, _, _ = cp.fit_loglog(Ns, sig)
    assert slope == pytest.approx(-0.5, abs=0.05)
    assert (np.diff(sig) < 0).all()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), scale=st.floats(0.01, 100.0), n_keep=st.integers(0, 40))
def test_best_n_term_scale_and_permutation(seed, scale, n_keep):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(37)
    _, e = cp.best_n_term(c, n_keep)
    _, e_scaled = cp.best_n_term(scale * c, n_keep)
    assert e_scaled == pytest.approx(scale * e, rel=1e-10, abs=1e-12)
    perm = rng.permutation(c.size)
    _, e_perm = cp.best_n_term(c[perm], n_keep)
    assert e_perm == pytest.approx(e, rel=1e-10, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000))
def test_nterm_sweep_nonincreasing(seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(64)
    sig = cp.nterm_error_sweep(c, np.arange(0, 65))
    assert (np.diff(sig) <= 1e-12).all()
    assert sig[-1] == 0.0


# ---------------------------------------------------------------------------
# Besov surrogate and the adaptivity scale
# ---------------------------------------------------------------------------

def test_besov_moduli_smoke_and_homogeneity():
    t = np.linspace(0, 1, 513)
    f = np.sin(2 * math.pi * t)
    res = cp.besov_norm_moduli(f, s=0.5)
    assert res.value > 0 and res.approximate
    assert res.r == 1                      # floor(0.5) + 1
    assert res.value == pytest.approx(res.lp_norm + res.seminorm)
    res3 = cp.besov_norm_moduli(3.0 * f, s=0.5)
    assert res3.value == pytest.approx(3.0 * res.value, rel=1e-12)
    # moduli are nondecreasing across scales
    assert (np.diff(res.moduli) >= -1e-15).all()


def test_besov_moduli_validation():
    f = np.sin(np.linspace(0, 5, 513))
    with pytest.raises(ValidationError):
        cp.besov_norm_moduli(f, s=0.0)
    with pytest.raises(ValidationError):
        cp.besov_norm_moduli(f, s=1.5, r=1)          # r <= s
    with pytest.raises(ValidationError):
        cp.besov_norm_moduli(np.zeros(32), s=0.5)    # too coarse


def test_adaptivity_tau_roundtrip():
    for gamma in (0.0, 0.7, 1.9361, 3.2):
        tau = cp.adaptivity_tau(gamma, d=2, p=2.0)
        assert cp.gamma_from_tau(tau, d=2, p=2.0) == pytest.approx(gamma, abs=1e-12)
    assert cp.adaptivity_tau(2.0, d=2, p=2.0) == pytest.approx(2 / 3)
    with pytest.raises(ValidationError):
        cp.adaptivity_tau(1.0, d=4, p=2.0)
    with pytest.raises(ValidationError):
        cp.adaptivity_tau(-0.1, d=2, p=2.0)


def test_embedding_check_conditions():
    base = dict(k=1, m=2, s=1.0, a=0.5, gamma=1.0, delta=1, d=3, p=2.0)
    rep = cp.embedding_check(cp.EmbeddingParams(**base))
    assert rep.ok and not rep.failed_conditions
    assert not rep.generalized_dimension
    # gamma >= m fails the gamma bound
    bad = cp.embedding_check(cp.EmbeddingParams(**{**base, "gamma": 2.0, "a": 0.7}))
    assert not bad.ok and "gamma-bound" in bad.failed_conditions
    # weight too small fails the weight bound
    bad2 = cp.embedding_check(cp.EmbeddingParams(**{**base, "a": 0.1}))
    assert not bad2.ok and "weight-bound" in bad2.failed_conditions
    # vertices-only singular set: the s bound is vacuous, a > 0 suffices
    v = cp.embedding_check(cp.EmbeddingParams(**{**base, "delta": 0, "d": 2, "gamma": 1.9}))
    assert v.generalized_dimension
    assert v.ok


def test_embedding_monotone_in_gamma_and_a():
    base = dict(k=1, m=2, s=1.0, delta=1, d=3, p=2.0)
    ok_states = []
    for gamma in (0.5, 1.0, 1.5, 2.5):
        rep = cp.embedding_check(cp.EmbeddingParams(a=0.9, gamma=gamma, **base))
        ok_states.append(rep.ok)
    # once it flips to False it stays False as gamma grows
    assert ok_states == sorted(ok_states, reverse=True)


# ---------------------------------------------------------------------------
# rate fits
# ---------------------------------------------------------------------------

def test_fit_loglog_exact_power_law():
    x = np.array([1 / 4, 1 / 8, 1 / 16, 1 / 32])
    y = 3.0 * x ** 1.7
    slope, intercept, rms = cp.fit_loglog(x, y)
    assert slope == pytest.approx(1.7, abs=1e-12)
    assert math.exp(intercept) == pytest.approx(3.0, rel=1e-12)
    assert rms < 1e-12


def test_estimate_rates_synthetic_exact():
    h = np.array([1 / 8, 1 / 16, 1 / 32, 1 / 64])
    N = np.array([64, 256, 1024, 4096])
    rep = cp.estimate_rates(h, 2.0 * h ** 1.5, N, 5.0 * N ** -0.8, d=2, p=2.0)
    assert rep.sobolev_rate == pytest.approx(1.5, abs=1e-12)
    assert rep.nterm_slope == pytest.approx(0.8, abs=1e-12)
    assert rep.besov_gamma_est == pytest.approx(1.6, abs=1e-12)
    assert rep.tau == pytest.approx(1.0 / (0.8 + 0.5), abs=1e-12)
    d = rep.as_dict()
    assert set(d) >= {"sobolev_rate", "nterm_slope", "besov_gamma_est", "tau"}


def test_estimate_rates_validation():
    h = np.array([1 / 8, 1 / 16, 1 / 32, 1 / 64])
    N = np.array([64, 256, 1024, 4096])
    e = 2.0 * h
    s = 5.0 / N
    with pytest.raises(ValidationError):
        cp.estimate_rates(h[:3], e[:3], N[:3], s[:3])          # too few points
    with pytest.raises(ValidationError):
        cp.estimate_rates(h[::-1], e, N, s)                    # h must decrease
    with pytest.raises(ValidationError):
        cp.estimate_rates(h, e, N[::-1], s)                    # N must increase
    with pytest.raises(ValidationError):
        cp.estimate_rates(h, 0.0 * e, N, s)                    # errors positive
