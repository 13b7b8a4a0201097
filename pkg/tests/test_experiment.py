from dataclasses import replace

import numpy as np
import pytest

from mpct import cstr
from mpct.admm import solve
from mpct.errors import InvalidParameters, NoSteadyStateFound, NumericalFailure
from mpct.experiment import (ControllerConfig, CstrController, Scenario, ScenarioSpec,
                             controller_grid, operating_point, run_campaign, run_experiment)
from mpct.steady import (admissible_steady_output, steady_state_for_output,
                         steady_states_for_input)
from mpct.validation import IndicatorBounds, ValidationPlan

BACKOFF = ControllerConfig(eta_theta=1.5, eta_c=0.08, eta_p=20.0)


def test_steady_regime(cstr_controller):
    op = operating_point()
    rec = run_experiment(Scenario.steady(op.y_eq), cstr_controller)
    assert rec.phi1 == 0.0 and rec.feasible and rec.failed_step is None
    np.testing.assert_allclose(rec.trajectory[:, 7:9], np.tile(cstr.NOMINAL_INPUT, (100, 1)),
                               atol=1e-3)
    assert rec.trajectory.shape == (100, 21)


def test_random_run_indicators(cstr_controller):
    rec = run_experiment(Scenario.sample(0, (0, 0)), cstr_controller)
    assert 0 < rec.phi2 <= cstr_controller.cfg.max_iter
    assert rec.phi2 == rec.trajectory[:, 18].max()
    assert rec.feasible == (rec.phi1 == 0.0)
    u = rec.trajectory[:, 7:9]
    assert np.all(u >= [3.0, -9000.0]) and np.all(u <= [35.0, 0.0])


def test_scenario_sampling_is_keyed():
    a = Scenario.sample(5, (0, 17))
    b = Scenario.sample(5, (0, 17))
    c = Scenario.sample(5, (0, 18))
    assert np.array_equal(a.noise, b.noise) and a.t_r == b.t_r
    assert not np.array_equal(a.noise, c.noise)
    for s in (a, c):
        assert 0.73 <= s.y_r1[0] <= 1.094 and 155 <= s.y_r2[1] <= 301
        assert 10 <= s.t_r <= 50
        assert s.noise.shape == (140,)


def test_scenario_statistics():
    draws = [Scenario.sample(1, (0, e)) for e in range(2000)]
    noise = np.concatenate([d.noise for d in draws])
    assert noise.std() == pytest.approx(0.1, rel=0.02)
    t_r = np.array([d.t_r for d in draws])
    assert t_r.min() == 10 and t_r.max() == 50
    cb = np.array([d.y_r1[0] for d in draws])
    assert cb.mean() == pytest.approx((0.73 + 1.094) / 2, abs=0.01)


def test_scenario_validation():
    with pytest.raises(InvalidParameters):
        Scenario((), np.zeros(2), np.zeros(2), 200, np.zeros(140))
    with pytest.raises(InvalidParameters):
        ScenarioSpec(N_t=20)


def test_common_random_numbers_keys():
    assert ScenarioSpec().key(0, 3, 9) == (0, 9)
    assert ScenarioSpec(common_random_numbers=False).key(0, 3, 9) == (0, 3, 9)


def test_experiment_is_deterministic(cstr_controller):
    s = Scenario.sample(3, (0, 1))
    a = run_experiment(s, cstr_controller)
    b = run_experiment(s, cstr_controller)
    assert np.array_equal(a.trajectory, b.trajectory)


def test_solver_failure_is_recorded(monkeypatch):
    ctrl = CstrController()
    calls = {"n": 0}
    real = ctrl.step

    def failing(y, y_ref):
        calls["n"] += 1
        if calls["n"] == 45:
            raise NumericalFailure("forced")
        return real(y, y_ref)

    monkeypatch.setattr(ctrl, "step", failing)
    rec = run_experiment(Scenario.sample(0, (0, 2)), ctrl)
    assert rec.failed_step == 4
    assert rec.phi1 == float("inf") and rec.phi2 == 5000 and not rec.feasible
    assert rec.trajectory.shape == (4, 21)


def test_backoff_helps_in_paired_runs(cstr_controller):
    backed = CstrController(BACKOFF)
    better = 0
    for e in range(50):
        s = Scenario.sample(11, (0, e))
        better += run_experiment(s, backed, keep_trajectory=False).phi1 <= \
            run_experiment(s, cstr_controller, keep_trajectory=False).phi1
    assert better >= 40


def test_warm_and_cold_solutions_agree(cstr_controller):
    ctrl = CstrController()
    real = ctrl.step
    gaps, warm_it, cold_it = [], [], []

    def paired(y, y_ref):
        est = ctrl.est
        x_r, u_r = ctrl.reference(np.asarray(y_ref) - ctrl.op.y_eq, est.d_hat)
        cold, _ = solve(ctrl.problem, est.x_hat, est.d_hat, x_r, u_r, None, ctrl.settings)
        out = real(y, y_ref)
        gaps.append(np.abs(ctrl.problem.scale_u(out[1].u0 - cold.u0)).max())
        warm_it.append(out[1].iterations)
        cold_it.append(cold.iterations)
        return out

    ctrl.step = paired
    run_experiment(Scenario.sample(0, (0, 3)), ctrl)
    eps_p = ctrl.cfg.eps_p
    # both are inexact solutions of one problem; typical gap within 2 eps_p
    assert np.median(gaps) <= 2 * eps_p
    assert max(gaps) <= 2 * 5 * eps_p
    assert np.mean(warm_it) < np.mean(cold_it)


def test_grid_order():
    grid = controller_grid()
    assert len(grid) == 54
    assert grid[0].label() == "{0, 0, 0, 100}"
    assert grid[1].label() == "{0, 0, 0, 300}"
    assert grid[-1].label() == "{3, 0.08, 20, 300}"


def test_single_record_campaign():
    plan = ValidationPlan(r=1, M=1, K=2, N_s=1)
    seen = []
    rep = run_campaign(plan, [ControllerConfig()], 4, spec=ScenarioSpec(N_t=30, init_steps=10, tr_range=(5, 20)),
                       on_controller=lambda i, s: seen.append(i))
    s = rep.controllers[0]
    assert seen == [0]
    assert s.phi1_bound == s.phi1[0] and s.phi2_bound == s.phi2[0]
    again = run_campaign(plan, [ControllerConfig()], 4, spec=ScenarioSpec(N_t=30, init_steps=10, tr_range=(5, 20)))
    assert again.controllers[0].phi1 == s.phi1 and again.controllers[0].phi2 == s.phi2


def test_campaign_verification_runs():
    plan = ValidationPlan(r=1, M=1, K=2, N_s=3)
    rep = run_campaign(plan, [ControllerConfig()], 4, spec=ScenarioSpec(N_t=20, init_steps=5, tr_range=(5, 15)),
                       verify=2)
    s = rep.controllers[0]
    assert len(s.verify_phi1) == 2
    frac1, frac2, pct = s.exceedance()
    assert 0 <= frac1 <= 1 and 0 <= frac2 <= 1 and 0 <= pct <= 100


# -- steady states --------------------------------------------------------

def test_steady_output_interior():
    op = operating_point()
    res = admissible_steady_output(op.y_eq)
    np.testing.assert_allclose(res.y, op.y_eq, rtol=1e-4)
    np.testing.assert_allclose(res.u, op.u_eq, rtol=1e-4)


def test_steady_output_unreachable_demand():
    res = admissible_steady_output([0.9, 400.0])
    assert res.u[0] == pytest.approx(35.0) or res.u[1] == pytest.approx(0.0)
    assert res.y[1] < 400.0
    b = IndicatorBounds()
    assert res.x[2] <= b.theta_max and res.y[0] >= b.cB_min and res.y[1] >= b.pB_min
    # brute-force oracle: no admissible grid equilibrium has a closer input
    u_un = res.x_unconstrained[4:]
    span = np.array([32.0, 9000.0])
    best = np.linalg.norm((res.u - u_un) / span)
    for fn in np.linspace(3, 35, 33):
        for pk in np.linspace(-9000, 0, 37):
            for x in steady_states_for_input([fn, pk]):
                y = cstr.outputs(x)
                if x[2] <= 117 and y[0] >= 0.72 and y[1] >= 155:
                    assert np.linalg.norm((x[4:] - u_un) / span) >= best - 1e-9


def test_steady_state_for_output_round_trip():
    x = steady_state_for_output([0.95, 250.0])
    np.testing.assert_allclose(cstr.outputs(x), [0.95, 250.0], rtol=1e-10)
    assert np.abs(cstr.cstr_derivative(x, x[4:], cstr.THETA_NOMINAL)).max() <= 1e-6


def test_unreachable_concentration():
    with pytest.raises(NoSteadyStateFound):
        steady_state_for_output([1.2, 200.0])
    with pytest.raises(NoSteadyStateFound):
        admissible_steady_output([np.nan, 200.0])


def test_config_replace_keeps_label():
    assert replace(ControllerConfig(), beta=300.0).label() == "{0, 0, 0, 300}"
    assert BACKOFF.label() == "{1.5, 0.08, 20, 100}"
