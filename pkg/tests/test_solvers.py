import numpy as np
import pytest
import scipy.sparse as sp

from chbfem.mesh import build_unit_square_mesh
from chbfem.model import MaterialParams
from chbfem.solvers import (ChbSystem, FieldState, IterationStats,
                            NonConvergence, SimulationFailed, SolverConfig,
                            advance_simulation)

from conftest import random_state


@pytest.fixture(scope="module")
def system4():
    return ChbSystem(build_unit_square_mesh(4), MaterialParams())


def fd_jacobian(residual, x0, h=1e-6):
    n = len(x0)
    J = np.empty((n, n))
    for k in range(n):
        xp = x0.copy()
        xm = x0.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (residual(xp) - residual(xm)) / (2.0 * h)
    return J


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(strategy="picard")
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(num_steps=-1)


def test_ch_residual_zero_at_homogeneous_state(system4):
    st = system4.initial_state(lambda x, y: 0.5)
    res = system4.ch_residual(st, st.phi, st.mu, st.u, st.p)
    assert np.abs(res[:system4.nv]).max() <= 1e-14
    assert np.abs(res[system4.nv:]).max() <= 1e-14


def test_ch_jacobian_matches_finite_differences(system4):
    rng = np.random.default_rng(31)
    prev = random_state(system4, rng)
    for _ in range(3):
        phi = rng.uniform(0.15, 0.85, system4.nv)
        mu = rng.normal(0.0, 0.1, system4.nv)
        res, J = system4.ch_residual_and_jacobian(prev, phi, mu, prev.u, prev.p)
        x0 = np.concatenate([phi, mu])

        def r(x):
            return system4.ch_residual(prev, x[:system4.nv], x[system4.nv:],
                                       prev.u, prev.p)

        F = fd_jacobian(r, x0)
        scale = max(np.abs(F).max(), 1.0)
        assert np.abs(J.toarray() - F).max() <= 1e-5 * scale


def test_monolithic_jacobian_matches_finite_differences(system4):
    rng = np.random.default_rng(32)
    prev = random_state(system4, rng)
    st = random_state(system4, rng, n=1)
    J = system4.monolithic_jacobian(prev, st).toarray()
    F = fd_jacobian(lambda x: system4.monolithic_residual(prev, system4.unpack(x, 1)),
                    system4.pack(st))
    scale = max(np.abs(F).max(), 1.0)
    assert np.abs(J - F).max() <= 1e-5 * scale


def test_jacobian_interpolation_couplings_vanish_outside_unit_interval(system4):
    rng = np.random.default_rng(33)
    prev = random_state(system4, rng)
    st = random_state(system4, rng, phi_low=1.2, phi_high=1.6, n=1)
    J = system4.monolithic_jacobian(prev, st).toarray()
    o = system4
    # couplings mediated by pi'(phi): (mu,p), (p,phi) and (q,phi) blocks
    assert np.abs(J[o.off_mu:o.off_u, o.off_p:o.off_q]).max() == 0.0
    assert np.abs(J[o.off_p:o.off_q, :o.nv]).max() == 0.0
    assert np.abs(J[o.off_q:, :o.nv]).max() == 0.0
    # the swelling coupling is affine in phi and must survive
    assert np.abs(J[o.off_u:o.off_p, :o.nv]).max() > 0.0


def test_elasticity_zero_load(system4):
    phi = np.full(system4.nv, 0.5)
    u = system4.solve_elasticity(phi, np.zeros(system4.nc))
    assert np.abs(u).max() <= 1e-14


def test_elasticity_residual_and_boundary(system4):
    rng = np.random.default_rng(34)
    phi = rng.uniform(0.0, 1.0, system4.nv)
    p = rng.normal(0.0, 0.5, system4.nc)
    u = system4.solve_elasticity(phi, p)
    assert np.abs(u[system4.u_bdofs]).max() == 0.0
    # residual of the unconstrained equations at the solution
    cint, abar, swell, _ = system4._elasticity_data(phi)
    strain = system4.strain_per_cell(u)
    sint = np.einsum("cab,cb->ca", cint, strain) - swell
    elem = (np.einsum("cai,ca->ci", system4.B, sint)
            - (abar * p)[:, None] * system4.drow)
    r = np.zeros(2 * system4.nv)
    np.add.at(r, system4.udofs.ravel(), elem.ravel())
    free = np.setdiff1d(np.arange(2 * system4.nv), system4.u_bdofs)
    assert np.abs(r[free]).max() <= 1e-10


def test_elasticity_rotation_symmetry_with_uniform_stiffness():
    # the mesh is invariant under the 180-degree rotation about the center;
    # with equal phase stiffnesses and the odd eigenstrain phi = x the
    # pulled-back field w(x) = u(rot(x)) solves the same discrete problem,
    # so u(rot(v)) = u(v) componentwise to solver precision
    mesh = build_unit_square_mesh(8)
    params = MaterialParams(C1=MaterialParams().C0.copy())
    system = ChbSystem(mesh, params)
    phi = mesh.vertices[:, 0].copy()
    u = system.solve_elasticity(phi, np.zeros(system.nc))
    n = mesh.n
    ux = u[0::2].reshape(n + 1, n + 1)
    uy = u[1::2].reshape(n + 1, n + 1)
    assert np.abs(ux).max() > 1e-4  # the load actually deforms the body
    assert np.abs(ux - ux[::-1, ::-1]).max() <= 1e-8
    assert np.abs(uy - uy[::-1, ::-1]).max() <= 1e-8


def test_flow_zero_data(system4):
    prev = system4.initial_state(lambda x, y: 0.5)
    p, q = system4.solve_flow(prev.phi, prev.u, prev)
    assert np.abs(p).max() <= 1e-14
    assert np.abs(q).max() <= 1e-14


def test_flow_elementwise_residual_and_global_mass(system4):
    rng = np.random.default_rng(35)
    prev = random_state(system4, rng)
    phi = rng.uniform(0.1, 0.9, system4.nv)
    u = rng.normal(0.0, 0.01, 2 * system4.nv)
    p, q = system4.solve_flow(phi, u, prev)
    state = FieldState(phi, prev.mu, u, p, q, n=1)
    cell_res = system4.flow_cell_residual(prev, state)
    assert np.abs(cell_res).max() <= 1e-10
    # summing the cell equations: storage change balances the net outflux
    assert abs(cell_res.sum()) <= 1e-10


def test_monolithic_pq_block_equals_standalone_flow_matrix(system4):
    rng = np.random.default_rng(39)
    prev = random_state(system4, rng)
    st = random_state(system4, rng, n=1)
    J = system4.monolithic_jacobian(prev, st).toarray()
    o = system4
    dinv, _, mq_elem = system4._flow_data(st.phi)
    r = np.repeat(o.qdofs[:, :, None], 3, axis=2).ravel()
    c = np.repeat(o.qdofs[:, None, :], 3, axis=1).ravel()
    Mq = sp.coo_matrix((mq_elem.ravel(), (r, c)), shape=(o.ne, o.ne)).toarray()
    flow = np.block([[np.diag(dinv), system4.params.tau * o.Bdiv.toarray()],
                     [-o.BdivT.toarray(), Mq]])
    assert np.allclose(J[o.off_p:, o.off_p:], flow, atol=1e-14)


def test_ch_solve_at_extreme_surface_tension_fails_cleanly(system4):
    # tiny gamma strengthens the relative coupling; the solve either
    # converges or reports NonConvergence, never another failure mode
    system = ChbSystem(system4.mesh, MaterialParams(gamma=1e-6))
    st0 = system.initial_state()
    cfg = SolverConfig(strategy="splitting", num_steps=1, max_iter=8)
    try:
        phi, mu, iters = system.solve_ch_subsystem(st0, st0.u, st0.p, cfg)
        assert iters <= cfg.max_iter
    except NonConvergence as exc:
        assert exc.iterations <= cfg.max_iter


def test_monolithic_residual_zero_at_fixed_point(system4):
    st = system4.initial_state(lambda x, y: 0.5)
    nxt = st.copy()
    nxt.n = 1
    res = system4.monolithic_residual(st, nxt)
    assert np.abs(res).max() <= 1e-14


def test_monolithic_residual_first_order_in_perturbation(system4):
    cfg = SolverConfig(strategy="monolithic", num_steps=1)
    st0 = system4.initial_state()
    st1, _ = system4.monolithic_step(st0, cfg)
    rng = np.random.default_rng(36)
    d = rng.normal(size=system4.ndofs)
    d /= np.linalg.norm(d)
    norms = []
    for eps in (1e-4, 1e-5, 1e-6):
        pert = system4.unpack(system4.pack(st1) + eps * d, 1)
        norms.append(np.linalg.norm(system4.monolithic_residual(st0, pert)))
    # residual scales linearly: ratio of successive norms tracks eps ratio
    assert norms[0] / norms[1] == pytest.approx(10.0, rel=0.3)
    assert norms[1] / norms[2] == pytest.approx(10.0, rel=0.3)


def test_cross_strategy_agreement_short_run(system4):
    st0 = system4.initial_state()
    fin_s, stats_s = advance_simulation(
        system4, st0, SolverConfig(strategy="splitting", num_steps=2))
    fin_m, stats_m = advance_simulation(
        system4, st0, SolverConfig(strategy="monolithic", num_steps=2))
    assert all(s.converged for s in stats_s + stats_m)
    assert np.abs(fin_s.phi - fin_m.phi).max() <= 1e-5
    assert np.abs(fin_s.u - fin_m.u).max() <= 1e-5
    assert np.abs(fin_s.p - fin_m.p).max() <= 1e-5


def test_monolithic_residual_small_at_splitting_solution(system4):
    st0 = system4.initial_state()
    cfg = SolverConfig(strategy="splitting", num_steps=1)
    st1, _ = system4.splitting_step(st0, cfg)
    res = system4.monolithic_residual(st0, st1)
    o = system4
    blocks = [res[:o.nv], res[o.off_mu:o.off_u], res[o.off_u:o.off_p],
              res[o.off_p:o.off_q], res[o.off_q:]]
    for blk in blocks:
        assert np.linalg.norm(blk) <= 10.0 * cfg.tol


def test_zero_data_fixed_point_both_strategies(system4):
    st0 = system4.initial_state(lambda x, y: 0.5)
    cfg_s = SolverConfig(strategy="splitting", num_steps=1)
    st1, stats = system4.splitting_step(st0, cfg_s)
    assert stats.outer_iters == 1
    assert np.abs(st1.phi - st0.phi).max() <= 1e-12
    cfg_m = SolverConfig(strategy="monolithic", num_steps=1)
    st1m, stats_m = system4.monolithic_step(st0, cfg_m)
    assert stats_m.newton_iters == 1
    assert np.abs(system4.pack(st1m) - system4.pack(st0)).max() <= 1e-12


def test_mass_conservation_over_steps(system4):
    st0 = system4.initial_state()
    ones = np.ones(system4.nv)
    mass0 = ones @ (system4.M @ st0.phi)
    masses = []
    advance_simulation(system4, st0, SolverConfig(strategy="splitting", num_steps=4),
                       on_step=lambda s, _: masses.append(ones @ (system4.M @ s.phi)))
    for m in masses:
        assert abs(m - mass0) <= 1e-10


def test_nonconvergence_is_reported_not_crashed(system4):
    st0 = system4.initial_state()
    cfg = SolverConfig(strategy="splitting", num_steps=1, max_iter=2)
    with pytest.raises(NonConvergence) as exc_info:
        system4.splitting_step(st0, cfg)
    exc = exc_info.value
    assert exc.iterations <= cfg.max_iter
    assert np.isfinite(exc.last_update_norm) or exc.diverged

    cfg_m = SolverConfig(strategy="monolithic", num_steps=1, max_iter=2)
    with pytest.raises(NonConvergence) as exc_info:
        system4.monolithic_step(st0, cfg_m)
    assert exc_info.value.iterations == 2


def test_advance_simulation_zero_steps(system4):
    st0 = system4.initial_state()
    fin, stats = advance_simulation(system4, st0, SolverConfig(num_steps=0))
    assert fin is st0
    assert stats == []


def test_advance_simulation_wraps_failures_with_step_index(system4):
    st0 = system4.initial_state()
    cfg = SolverConfig(strategy="monolithic", num_steps=3, max_iter=1)
    with pytest.raises(SimulationFailed) as exc_info:
        advance_simulation(system4, st0, cfg)
    exc = exc_info.value
    assert exc.step_index == 1
    assert len(exc.stats) == 1
    assert not exc.stats[-1].converged
    assert isinstance(exc.cause, NonConvergence)


def test_iteration_stats_sanity(system4):
    st0 = system4.initial_state()
    cfg = SolverConfig(strategy="splitting", num_steps=2)
    _, stats = advance_simulation(system4, st0, cfg)
    for s in stats:
        assert s.converged
        assert 1 <= s.outer_iters <= cfg.max_iter
        assert all(1 <= k <= cfg.max_iter for k in s.inner_newton)
        assert s.wall_seconds >= 0.0
        assert s.newton_total == sum(s.inner_newton)


def test_initial_state_shapes_and_step(system4):
    st = system4.initial_state()
    assert st.phi.shape == (system4.nv,)
    assert st.u.shape == (2 * system4.nv,)
    assert st.p.shape == (system4.nc,)
    assert st.q.shape == (system4.ne,)
    for v, (x, _) in enumerate(system4.mesh.vertices):
        assert st.phi[v] == (1.0 if x >= 0.5 else 0.0)
    assert np.all(st.mu == 0.0) and np.all(st.p == 0.0)
