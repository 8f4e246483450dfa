import math

import numpy as np
import pytest

from models.data_models import PlanningControl, VehicleParams, VehicleState
from services.ddp_planner import (
    DdpParams,
    DdpProblem,
    ObstacleDisc,
    PlannerError,
    RegularizationError,
    backward_pass,
    forward_rollout,
    plan,
    rollout,
    stage_cost,
    trajectory_cost,
    _make_trajectory,
)

H = 0.1
Q_PX, Q_V, R_A, R_ALPHA = 1.0, 0.5, 5.0, 0.5
QF_PX, QF_V = 10.0, 5.0


def _lq_problem(N: int = 30, x0=(-10.0, 0.0, 0.0, 2.0, 0.0)) -> DdpProblem:
    """Double integrator (px, v) embedded in the bicycle with theta = omega = 0"""
    return DdpProblem(
        x0=VehicleState(*x0),
        N=N,
        h=H,
        Q=np.diag([Q_PX, 0.0, 0.0, Q_V, 0.0]),
        R=np.diag([R_A, R_ALPHA]),
        Qf=np.diag([QF_PX, 0.0, 0.0, QF_V, 0.0]),
        goal=VehicleState(),
    )


def _riccati_reference(N: int, x0: np.ndarray):
    """Finite-horizon discrete LQR on the (px, v) subsystem"""
    A = np.array([[1.0, H], [0.0, 1.0]])
    B = np.array([[0.0], [H]])
    Q = H * np.diag([Q_PX, Q_V])
    R = np.array([[H * R_A]])
    P = np.diag([QF_PX, QF_V])
    gains = []
    for _ in range(N):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        gains.append(K)
        P = Q + A.T @ P @ A - A.T @ P @ B @ K
    gains.reverse()
    x = x0.copy()
    controls = []
    for K in gains:
        u = -(K @ x)
        controls.append(float(u[0]))
        x = A @ x + (B @ u)
    return np.array(controls), 0.5 * x0 @ P @ x0, gains


def _initial(prob: DdpProblem):
    controls = np.zeros((prob.N, 2))
    states = rollout(prob.x0.as_array(), controls, prob)
    return _make_trajectory(states, controls, trajectory_cost(states, controls, prob), prob)


class TestStageCost:
    def test_zero_at_goal(self):
        prob = _lq_problem()
        c = stage_cost(np.zeros(5), np.zeros(2), prob)
        assert c.l == 0.0
        assert not np.any(c.lx) and not np.any(c.lu)

    def test_unit_deviation(self):
        prob = DdpProblem(x0=VehicleState(), N=1, h=1.0, Q=np.eye(5), R=np.eye(2), Qf=np.eye(5),
                          goal=VehicleState())
        c = stage_cost(np.array([1.0, 0, 0, 0, 0]), np.zeros(2), prob)
        assert c.l == pytest.approx(0.5)

    def test_obstacle_penalty_only_inside_radius(self):
        prob = DdpProblem(x0=VehicleState(), N=1, h=1.0, Q=np.zeros((5, 5)), R=np.eye(2), Qf=np.zeros((5, 5)),
                          goal=VehicleState(), obstacles=[ObstacleDisc((0.0, 0.0), 1.0, 3.0)])
        assert stage_cost(np.array([2.0, 0, 0, 0, 0]), np.zeros(2), prob).l == 0.0
        assert stage_cost(np.array([0.5, 0, 0, 0, 0]), np.zeros(2), prob).l == pytest.approx(3.0 * 0.25)

    def test_gradients_match_finite_differences(self, rng):
        eps = 1e-5
        prob = DdpProblem(
            x0=VehicleState(), N=1, h=0.1,
            Q=np.diag([2.0, 2.0, 1.0, 1.0, 0.1]), R=np.diag([0.5, 0.3]), Qf=np.eye(5),
            goal=VehicleState(5.0, -3.0, 0.3, 8.0, 0.0),
            obstacles=[ObstacleDisc((1.0, 1.0), 2.0, 50.0)],
        )
        for _ in range(100):
            x = np.array([*rng.uniform(-3, 5, 2), rng.uniform(-1.0, 1.0), rng.uniform(0, 10), rng.uniform(-1, 1)])
            u = rng.uniform(-3, 3, 2)
            c = stage_cost(x, u, prob)
            for i in range(5):
                dx = np.zeros(5)
                dx[i] = eps
                fd = (stage_cost(x + dx, u, prob).l - stage_cost(x - dx, u, prob).l) / (2 * eps)
                assert fd == pytest.approx(c.lx[i], rel=1e-5, abs=1e-6)
            for j in range(2):
                du = np.zeros(2)
                du[j] = eps
                fd = (stage_cost(x, u + du, prob).l - stage_cost(x, u - du, prob).l) / (2 * eps)
                assert fd == pytest.approx(c.lu[j], rel=1e-5, abs=1e-6)


class TestBackwardPass:
    def test_single_step_matches_riccati(self):
        prob = DdpProblem(
            x0=VehicleState(-4.0, 0.0, 0.0, 1.0, 0.0), N=1, h=H,
            Q=np.zeros((5, 5)), R=np.diag([R_A, R_ALPHA]), Qf=np.diag([QF_PX, 0.0, 0.0, QF_V, 0.0]),
            goal=VehicleState(),
        )
        bp = backward_pass(_initial(prob), prob, mu=0.0)
        A = np.array([[1.0, H], [0.0, 1.0]])
        B = np.array([[0.0], [H]])
        P = np.diag([QF_PX, QF_V])
        K = np.linalg.solve(np.array([[H * R_A]]) + B.T @ P @ B, B.T @ P @ A)
        assert bp.K_fb[0, 0, [0, 3]] == pytest.approx(-K[0], abs=1e-12)
        x0 = np.array([-4.0, 1.0])
        assert bp.k_ff[0, 0] == pytest.approx(-(K @ x0)[0], abs=1e-12)

    def test_zero_feedforward_at_optimum(self):
        prob = _lq_problem(x0=(0.0, 0.0, 0.0, 0.0, 0.0))
        bp = backward_pass(_initial(prob), prob, mu=1e-6)
        assert np.all(bp.k_ff == 0.0)

    def test_feedforward_shrinks_with_regularization(self):
        prob = DdpProblem(
            x0=VehicleState(-4.0, 0.0, 0.0, 1.0, 0.0), N=1, h=H,
            Q=np.zeros((5, 5)), R=np.diag([R_A, R_ALPHA]), Qf=np.diag([QF_PX, 0.0, 0.0, QF_V, 0.0]),
            goal=VehicleState(),
        )
        traj = _initial(prob)
        norms = [np.linalg.norm(backward_pass(traj, prob, mu).k_ff) for mu in (1.0, 10.0, 100.0, 1000.0)]
        assert all(a > b for a, b in zip(norms, norms[1:]))

    def test_indefinite_hessian_reports_mu(self):
        prob = _lq_problem(N=3)
        traj = _initial(prob)
        with pytest.raises(RegularizationError) as err:
            backward_pass(traj, prob, mu=-10.0)
        assert err.value.mu == -10.0


class TestForwardRollout:
    def test_null_step_keeps_trajectory(self):
        prob = _lq_problem()
        traj = _initial(prob)
        bp = backward_pass(traj, prob, mu=1e-6)
        new, cost = forward_rollout(traj, bp, 0.0, prob)
        assert np.array_equal(new.states, traj.states)
        assert cost == pytest.approx(traj.cost, abs=1e-12)

    def test_full_step_reaches_riccati_cost(self):
        prob = _lq_problem()
        traj = _initial(prob)
        bp = backward_pass(traj, prob, mu=0.0)
        _, cost = forward_rollout(traj, bp, 1.0, prob)
        _, optimal_cost, _ = _riccati_reference(prob.N, np.array([-10.0, 2.0]))
        assert cost == pytest.approx(optimal_cost, abs=1e-8)

    def test_line_search_steps_are_finite_and_decreasing(self):
        prob = _lq_problem()
        traj = _initial(prob)
        bp = backward_pass(traj, prob, mu=1e-6)
        costs = [forward_rollout(traj, bp, a, prob)[1] for a in (1.0, 0.5, 0.25)]
        assert all(math.isfinite(c) for c in costs)
        predicted = -(bp.dV[0] + bp.dV[1])
        assert (traj.cost - costs[0]) / predicted > 0.1


class TestPlan:
    def test_lq_instance_matches_lqr_controls(self):
        prob = _lq_problem()
        result = plan(prob, [PlanningControl()] * prob.N, DdpParams(tol_J=1e-12))
        reference, optimal_cost, _ = _riccati_reference(prob.N, np.array([-10.0, 2.0]))
        assert np.max(np.abs(result.controls[:, 0] - reference)) < 1e-6
        assert np.all(result.controls[:, 1] == 0.0)
        assert result.cost == pytest.approx(optimal_cost, abs=1e-8)
        assert result.converged

    def test_goal_start_converges_immediately(self):
        prob = _lq_problem(x0=(0.0, 0.0, 0.0, 0.0, 0.0))
        result = plan(prob, np.zeros((prob.N, 2)))
        assert result.iterations == 1
        assert result.cost == 0.0
        assert result.converged

    def test_returned_trajectory_is_dynamically_consistent(self):
        prob = DdpProblem(
            x0=VehicleState(0.0, 0.0, 0.0, 5.0, 0.0), N=40, h=H,
            Q=np.diag([0.1, 0.1, 0.0, 0.1, 0.0]), R=np.diag([0.5, 0.5]),
            Qf=np.diag([20.0, 20.0, 10.0, 5.0, 1.0]),
            goal=VehicleState(18.0, 4.0, 0.5, 5.0, 0.0),
        )
        result = plan(prob, np.zeros((prob.N, 2)))
        replay = rollout(prob.x0.as_array(), result.controls, prob)
        assert np.array_equal(replay, result.states)
        zero = np.zeros((prob.N, 2))
        assert result.cost < trajectory_cost(rollout(prob.x0.as_array(), zero, prob), zero, prob)

    def test_accepted_costs_never_increase(self):
        prob = DdpProblem(
            x0=VehicleState(0.0, 0.0, 0.0, 5.0, 0.0), N=40, h=H,
            Q=np.diag([0.1, 0.1, 0.0, 0.1, 0.0]), R=np.diag([0.5, 0.5]),
            Qf=np.diag([20.0, 20.0, 10.0, 5.0, 1.0]),
            goal=VehicleState(18.0, 4.0, 0.5, 5.0, 0.0),
        )
        costs = [plan(prob, np.zeros((prob.N, 2)), DdpParams(iter_max=n)).cost for n in (1, 2, 4, 8, 16)]
        assert all(b <= a for a, b in zip(costs, costs[1:]))

    def test_wrong_control_count_rejected(self):
        prob = _lq_problem()
        with pytest.raises(PlannerError):
            plan(prob, np.zeros((prob.N - 1, 2)))

    def test_non_finite_initial_rollout_rejected(self):
        prob = _lq_problem()
        controls = np.zeros((prob.N, 2))
        controls[3, 0] = math.inf
        with pytest.raises(PlannerError):
            plan(prob, controls)

    def test_deterministic(self):
        prob = _lq_problem()
        a = plan(prob, np.zeros((prob.N, 2)))
        b = plan(prob, np.zeros((prob.N, 2)))
        assert np.array_equal(a.states, b.states)


def test_vehicle_limits_default_to_table_values():
    assert _lq_problem().vehicle == VehicleParams()
