"""Time integration: update constants, the split solves, run duties."""

import numpy as np
import pytest

from vmewave import (
    IntegratorConfig,
    InitialPulse,
    InvalidSubstepRatio,
    MultiscaleState,
    NewtonNonConvergence,
    SplitNonConvergence,
    build_mesh,
    build_operators,
    dns_run,
    DnsProblem,
    implicit_constants,
    initial_accelerations,
    run,
    step_ee_ssm,
    step_ei_ssm,
    substep_constants,
)
from vmewave.assembly import internal_forces, total_energy
from vmewave.stability import critical_dt_multiscale

PULSE = InitialPulse(amplitude=0.02, width=0.1)


def small_problem(n_es=8, n_ef=4, E=None, rho=1.0):
    mesh = build_mesh(n_es, n_ecp=1, n_ef=n_ef)
    if E is None:
        E = np.ones(mesh.n_fel)
    ops = build_operators(mesh, E, rho=rho)
    return mesh, ops, PULSE.displacement(mesh.x_c)


def test_substep_constants_hand_values():
    sc = substep_constants(0.54)
    assert sc.q1 == pytest.approx(-0.16103059581320450886, rel=1e-15)
    assert sc.q2 == pytest.approx(0.58695652173913043478, rel=1e-15)
    assert sc.q0 == pytest.approx(0.074074074074074074074, rel=1e-15)


def test_substep_constants_consistency():
    # q0 + q1 + q2 = 1/2 for every admissible ratio
    for p in (0.1, 0.3, 0.5, 0.54, 0.9):
        sc = substep_constants(p)
        assert sc.q0 + sc.q1 + sc.q2 == pytest.approx(0.5, rel=1e-14)
        assert sc.b0 == p
        assert sc.b3 == pytest.approx(1.0 - p, rel=1e-15)


def test_half_ratio_recovers_midpoint_weights():
    sc = substep_constants(0.5)
    assert sc.q1 == pytest.approx(0.0, abs=1e-15)
    assert sc.q2 == pytest.approx(0.5, rel=1e-15)
    assert sc.q0 == pytest.approx(0.0, abs=1e-15)


def test_implicit_constants_hand_values():
    c1, c2, c3 = implicit_constants(0.54, 1.0)
    assert c1 == pytest.approx(0.85185185185185185185, rel=1e-15)
    assert c2 == pytest.approx(-4.0257648953301127214, rel=1e-15)
    assert c3 == pytest.approx(3.1739130434782608696, rel=1e-15)


def test_implicit_constants_scale_inversely_with_dt():
    a = implicit_constants(0.54, 1.0)
    b = implicit_constants(0.54, 0.25)
    np.testing.assert_allclose(b, np.array(a) / 0.25, rtol=1e-15)


def test_bad_substep_ratio_rejected():
    for p in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(InvalidSubstepRatio):
            substep_constants(p)
    with pytest.raises(InvalidSubstepRatio):
        IntegratorConfig(scheme="ee-ssm", cfl=1.0, p=1.0)


def test_unknown_scheme_rejected():
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="newmark", cfl=1.0)


def residuals(ops, cfg, d_c0):
    """Residuals of the semi-discrete balance at the initial accelerations."""
    mesh = ops.mesh
    a_c, a_f, F = initial_accelerations(ops, cfg, d_c0)
    f_c, f_f, _ = internal_forces(ops, d_c0, np.zeros(mesh.n_fdof))
    a_f_sub = a_f[mesh.sub_fine_nodes]

    cpl_c = np.zeros(mesh.n_cdof)
    np.add.at(cpl_c, mesh.gather_c_sub,
              np.einsum("sab,sb->sa", ops.cpl, a_f_sub))
    r_c = ops.m_c * a_c + cpl_c + f_c
    r_c = r_c[ops.free_c]

    if cfg.scheme == "ei-ssm":
        ma = np.einsum("sab,sb->sa", ops.mf_cons, a_f_sub)
    else:
        ma = ops.m_f[mesh.sub_fine_nodes] * a_f_sub
    cpl_f = np.einsum("sab,sa->sb", ops.cpl, a_c[mesh.gather_c_sub])
    r_f = (ma + cpl_f + f_f[mesh.sub_fine_nodes])[:, 1:-1]
    return r_c, r_f, f_c, f_f


@pytest.mark.parametrize("scheme", ["ee-ssm", "ei-ssm"])
def test_initial_accelerations_satisfy_balance(scheme):
    mesh, ops, d_c0 = small_problem(n_es=4, n_ef=4)
    cfg = IntegratorConfig(scheme=scheme, cfl=0.5, tol_c=1e-12, tol_f=1e-12,
                           max_split_iters=5000)
    r_c, r_f, f_c, f_f = residuals(ops, cfg, d_c0)
    assert np.max(np.abs(r_c)) < 1e-9 * np.max(np.abs(f_c))
    assert np.max(np.abs(r_f)) < 1e-9 * np.max(np.abs(f_f))


def test_initial_accelerations_zero_field():
    mesh, ops, _ = small_problem()
    cfg = IntegratorConfig(scheme="ee-ssm", cfl=0.5)
    a_c, a_f, F = initial_accelerations(ops, cfg, np.zeros(mesh.n_cdof))
    assert np.all(a_c == 0.0)
    assert np.all(a_f == 0.0)
    np.testing.assert_allclose(F, 1.0, atol=1e-15)


def test_zero_initial_condition_stays_at_rest():
    mesh, ops, _ = small_problem(n_es=4, n_ef=2)
    cfg = IntegratorConfig(scheme="ee-cdm", cfl=0.9, max_split_iters=2000)
    res = run(ops, cfg, np.zeros(mesh.n_cdof), snapshot_times=(0.02,))
    snap = res.snapshots[0]
    assert np.all(snap.state.d_c == 0.0)
    assert np.all(snap.state.d_f == 0.0)
    assert len(res.records) > 0


def test_run_pins_constrained_dofs():
    mesh, ops, d_c0 = small_problem()
    d_c0 = d_c0 + 0.005  # violate the fixed ends on purpose
    cfg = IntegratorConfig(scheme="ee-cdm", cfl=0.5)
    res = run(ops, cfg, d_c0, snapshot_times=(0.0,))
    state = res.snapshots[0].state
    assert state.d_c[0] == 0.0 and state.d_c[-1] == 0.0
    np.testing.assert_array_equal(state.d_c[1:-1], d_c0[1:-1])


def test_snapshot_at_time_zero_needs_no_step():
    mesh, ops, d_c0 = small_problem()
    cfg = IntegratorConfig(scheme="ee-ssm", cfl=0.5)
    res = run(ops, cfg, d_c0, snapshot_times=(0.0,))
    assert len(res.records) == 0
    assert res.snapshots[0].t == 0.0
    # interior dofs untouched, the fixed ends are pinned to zero
    np.testing.assert_array_equal(res.snapshots[0].state.d_c[1:-1], d_c0[1:-1])


def test_snapshot_lands_on_nearest_step():
    mesh, ops, d_c0 = small_problem(n_es=4, n_ef=2)
    cfg = IntegratorConfig(scheme="ee-cdm", cfl=0.8, max_split_iters=2000)
    res = run(ops, cfg, d_c0, snapshot_times=(0.021,))
    snap = res.snapshots[0]
    assert abs(snap.t - 0.021) <= res.max_dt / 2 + 1e-12
    assert snap.requested_t == 0.021


def test_end_time_keeps_stepping_past_last_snapshot():
    mesh, ops, d_c0 = small_problem(n_es=4, n_ef=2)
    cfg = IntegratorConfig(scheme="ee-cdm", cfl=0.8, max_split_iters=2000)
    res = run(ops, cfg, d_c0, snapshot_times=(0.01,), end_time=0.05)
    assert res.records[-1].t >= 0.05 - 1e-12


def test_step_times_accumulate():
    mesh, ops, d_c0 = small_problem(n_es=4, n_ef=2)
    cfg = IntegratorConfig(scheme="ee-ssm", cfl=0.7, max_split_iters=2000)
    res = run(ops, cfg, d_c0, end_time=0.04)
    ts = [r.t for r in res.records]
    dts = [r.dt for r in res.records]
    np.testing.assert_allclose(ts, np.cumsum(dts), rtol=1e-12)
    assert res.max_dt == max(dts)


@pytest.mark.parametrize("scheme,ref_scheme", [
    ("ee-cdm", "ee-cdm"),
    ("ee-ssm", "ee-ssm"),
    ("ei-ssm", "ee-ssm"),
])
def test_coarse_only_matched_grid_reproduces_reference(scheme, ref_scheme):
    """With the enrichment frozen and one fine element per coarse element,
    the two-scale stepper must retrace the single-scale solver bit for bit,
    the implicit-fine hybrid included (its coarse update is the explicit
    sub-step scheme)."""
    n = 12
    mesh = build_mesh(n, n_ecp=1, n_ef=1)
    ops = build_operators(mesh, np.ones(n))
    d_c0 = PULSE.displacement(mesh.x_c)
    cfg = IntegratorConfig(scheme=scheme, cfl=0.9, coarse_only=True)
    res = run(ops, cfg, d_c0, snapshot_times=(0.15, 0.3))

    prob = DnsProblem(n_el=n, E_el=np.ones(n), scheme=ref_scheme, cfl=0.9)
    ref = dns_run(prob, PULSE.displacement(prob.node_coords),
                  snapshot_times=(0.15, 0.3))

    assert [r.dt for r in res.records] == [r.dt for r in ref.records]
    for sv, sd in zip(res.snapshots, ref.snapshots):
        assert sv.t == sd.t
        assert np.array_equal(sv.state.d_c, sd.state.d)
        assert np.array_equal(sv.state.v_c, sd.state.v)
        assert np.all(sv.state.d_f == 0.0)


def test_small_amplitude_solution_stays_even():
    # Even initial data stays even only in the linear limit: the stress is
    # not an odd function of u', so at finite amplitude mirrored points see
    # genuinely different tangent stiffness and the profile skews.
    mesh, ops, _ = small_problem(n_es=8, n_ef=4)
    pulse = InitialPulse(amplitude=1e-6, width=0.1)
    d_c0 = pulse.displacement(mesh.x_c)
    cfg = IntegratorConfig(scheme="ee-ssm", cfl=0.8, tol_c=1e-9, tol_f=1e-9,
                           max_split_iters=20000)
    res = run(ops, cfg, d_c0, snapshot_times=(0.05,))
    d_c = res.snapshots[0].state.d_c
    d_f = res.snapshots[0].state.d_f
    asym_c = np.max(np.abs(d_c - d_c[::-1])) / np.max(np.abs(d_c))
    asym_f = np.max(np.abs(d_f - d_f[::-1])) / np.max(np.abs(d_f))
    assert asym_c < 1e-4
    assert asym_f < 1e-3


def energy_trace(scheme, cfl, steps):
    # resolve the pulse with a few coarse elements per width, otherwise the
    # energy bookkeeping is dominated by projection chatter
    mesh = build_mesh(24, n_ecp=1, n_ef=2)
    ops = build_operators(mesh, np.ones(mesh.n_fel))
    d_c0 = InitialPulse(amplitude=0.01, width=0.15).displacement(mesh.x_c)
    d_c0[0] = d_c0[-1] = 0.0
    cfg = IntegratorConfig(scheme=scheme, cfl=cfl, tol_c=1e-6, tol_f=1e-6,
                           max_split_iters=20000)
    a_c, a_f, F = initial_accelerations(ops, cfg, d_c0)
    zf = np.zeros(mesh.n_fdof)
    state = MultiscaleState(t=0.0, step=0, d_c=d_c0, v_c=np.zeros(mesh.n_cdof),
                            a_c=a_c, d_f=zf.copy(), v_f=zf.copy(), a_f=a_f)
    step_fn = step_ee_ssm if scheme == "ee-ssm" else step_ei_ssm
    out = [total_energy(ops, state.d_c, state.d_f, state.v_c, state.v_f)]
    for _ in range(steps):
        dt = critical_dt_multiscale(ops, F, cfg.cfl, scheme).dt
        state, _, F = step_fn(ops, cfg, state, dt)
        out.append(total_energy(ops, state.d_c, state.d_f, state.v_c, state.v_f))
    return out


@pytest.mark.parametrize("scheme,cfl,steps", [
    ("ee-ssm", 0.9, 40),
    ("ei-ssm", 0.5, 12),
])
def test_substep_schemes_dissipate(scheme, cfl, steps):
    # Net energy loss with no step gaining more than a sliver.  Strict
    # step-by-step decrease is a property of well-resolved runs; tiny probe
    # problems trade energy back and forth between the scales.
    e = energy_trace(scheme, cfl, steps)
    assert e[-1] < e[0]
    rises = np.diff(e)
    assert rises.max(initial=0.0) < 1e-3 * e[0]


def test_split_iteration_cap_raises():
    mesh, ops, d_c0 = small_problem(n_es=4, n_ef=4)
    cfg = IntegratorConfig(scheme="ee-ssm", cfl=0.5, tol_c=0.0, tol_f=0.0,
                           max_split_iters=1)
    with pytest.raises(SplitNonConvergence):
        run(ops, cfg, d_c0, end_time=0.01)


def test_newton_iteration_cap_raises():
    mesh, ops, d_c0 = small_problem(n_es=4, n_ef=4)
    cfg = IntegratorConfig(scheme="ei-ssm", cfl=0.5, tol_newton=0.0,
                           max_newton_iters=2)
    with pytest.raises(NewtonNonConvergence):
        run(ops, cfg, d_c0, end_time=0.01)


def test_worker_count_does_not_change_results():
    rng = np.random.default_rng(3)
    mesh = build_mesh(6, n_ecp=1, n_ef=4)
    E = np.where(rng.random(mesh.n_fel) < 0.5, 1.0, 0.5)
    ops = build_operators(mesh, E)
    d_c0 = PULSE.displacement(mesh.x_c)
    states = {}
    for workers in (1, 4):
        cfg = IntegratorConfig(scheme="ee-ssm", cfl=0.8, workers=workers,
                               max_split_iters=2000)
        res = run(ops, cfg, d_c0, snapshot_times=(0.05,))
        states[workers] = res.snapshots[0].state
    assert np.array_equal(states[1].d_c, states[4].d_c)
    assert np.array_equal(states[1].d_f, states[4].d_f)
    assert np.array_equal(states[1].v_f, states[4].v_f)
