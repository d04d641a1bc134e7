import dataclasses

import numpy as np
import pytest

from dgns.problems import get_problem
from dgns.projection import ProjectionConfig
from dgns.solvers import SolverError
from dgns.timestepping import (SDIRK_GAMMA, FlowSolver, FlowState, SchemeConfig, StepInfo,
                               make_discretization, run_simulation)


def _solver(name="dirichlet", n=4, p=3, projector="divdiv", **scheme):
    pb = get_problem(name)
    disc = make_discretization(pb, (n, n), p)
    return FlowSolver(disc, pb, SchemeConfig(**scheme), ProjectionConfig(projector))


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(scheme="chorin")
    with pytest.raises(ValueError):
        SchemeConfig(stepper="bdf2")
    with pytest.raises(ValueError):
        SchemeConfig(dt=0.0)
    with pytest.raises(ValueError):
        _ = SchemeConfig(dt=0.3, T=1.0).n_steps
    assert SchemeConfig(stepper="implicit_euler").omega_value == 1.0
    assert SchemeConfig(stepper="sdirk2").omega_value == 1.5
    assert SDIRK_GAMMA == pytest.approx(1 - np.sqrt(0.5))


def _final_l2(problem, dims, p, dts, **scheme):
    errs = []
    for dt in dts:
        disc = make_discretization(problem, dims, p)
        res = run_simulation(disc, problem, SchemeConfig(dt=dt, T=problem.T, **scheme), ProjectionConfig("divdiv"))
        errs.append(res.final_errors.l2_v)
    return errs


def test_implicit_euler_is_first_order():
    # a fast-decaying vortex makes the time derivative dominate the error
    errs = _final_l2(get_problem("taylor_green_2d", mu=0.1, T=0.4), (4, 4), 3, (0.1, 0.05, 0.025),
                     scheme="ripcs", stepper="implicit_euler")
    assert np.log2(errs[1] / errs[2]) == pytest.approx(1.0, abs=0.2)


def test_sdirk2_is_second_order():
    # large steps are pre-asymptotic for the splitting error; compare the two smallest
    errs = _final_l2(get_problem("dirichlet", T=0.4), (4, 4), 3, (0.025, 0.0125),
                     scheme="ipcs", stepper="sdirk2")
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.25)


def test_extrapolated_guess_does_not_change_the_step():
    s = _solver("taylor_green_2d", n=4, p=2, dt=0.1, T=0.2)
    st = s.initial_state()
    a = s.step(st)
    b = s.step(dataclasses.replace(st, v_prev=st.v + 0.01))
    np.testing.assert_allclose(a.v, b.v, atol=1e-8)
    assert a.v_prev is st.v and a.k == 1 and a.t == pytest.approx(0.1)


def test_assembled_and_matrix_free_jacobians_agree():
    a = _solver("taylor_green_2d", n=4, p=2, dt=0.1, T=0.1)
    b = _solver("taylor_green_2d", n=4, p=2, dt=0.1, T=0.1, jacobian="matrix_free")
    np.testing.assert_allclose(a.step(a.initial_state()).v, b.step(b.initial_state()).v, atol=1e-8)


def test_ripcs_and_ipcs_differ_only_in_pressure_update():
    s = _solver(dt=0.1, T=0.1)
    st = s.initial_state()
    ip, rip = s.ipcs_step(st), s.ripcs_step(st)
    np.testing.assert_allclose(ip.v, rip.v, atol=1e-12)
    assert np.abs(ip.p - rip.p).max() > 1e-6


def test_navier_stokes_run_reports_diagnostics():
    s = _solver("taylor_green_2d", n=8, p=2, projector="rt", dt=0.1, T=0.3)
    res = run_simulation(s.disc, s.problem, s.scheme, s.projector.config, errors_every=1)
    assert not res.failed and len(res.rows) == 3
    energy = [r["kinetic_energy"] for r in res.rows]
    assert all(b < a for a, b in zip(energy, energy[1:]))
    assert all(r["newton_iterations"] >= 1 for r in res.rows)
    assert max(r["mass_residual_max"] for r in res.rows) < 1e-11
    assert res.final_errors.l2_v < 0.05


def test_failed_step_returns_last_valid_state(monkeypatch):
    s = _solver(dt=0.1, T=0.3)
    calls = []

    def flaky(self, state, dt=None):
        calls.append(state.k)
        if state.k == 1:
            raise SolverError("forced")
        return FlowState(state.v, state.p, state.t + 0.1, state.k + 1)

    monkeypatch.setattr(FlowSolver, "step", flaky)
    monkeypatch.setattr(FlowSolver, "last_info", StepInfo(), raising=False)
    res = run_simulation(s.disc, s.problem, s.scheme, s.projector.config)
    assert res.failed and "forced" in res.error
    assert res.state.k == 1 and len(res.rows) == 1
