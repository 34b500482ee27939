import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanemerge.postopt import (
    LmSettings,
    OptConfig,
    OptProblem,
    build_residuals,
    circle_cover,
    clearances,
    collision_matrix,
    cost_breakdown,
    homotopy_sides,
    jacobian,
    jerk_metric,
    levenberg_marquardt,
    min_clearance,
    pair_clearances,
    post_collision_check,
    rollout_controls,
    solve_lm,
)
from lanemerge.sim import Action, Footprint, VehicleState, load_scenario, reset, step_world

from oracles import sampled_overlap

DT = 0.2
R = circle_cover(Footprint())[1]


def straight_problem(n=20, v0=5.0, others=(), **cfg):
    """Ego cruising along y = 0; reference = its own zero-control rollout."""
    x0 = VehicleState(0.0, 0.0, 0.0, v0)
    a = np.zeros((n, 2))
    ref = rollout_controls(x0, a, DT)
    return OptProblem(ref, a, list(others), x0, DT, OptConfig(**cfg))


def parked_alongside(n, lateral, x=None, v=5.0):
    """Agent moving in lockstep with the straight-line ego at a lateral offset."""
    t = np.arange(n + 1) * DT
    xs = v * t if x is None else np.full(n + 1, x)
    return np.column_stack([xs, np.full(n + 1, lateral), np.zeros(n + 1), np.full(n + 1, v)])


# --- rollout ----------------------------------------------------------------

def test_zero_controls_from_rest_stay_put():
    traj = rollout_controls(VehicleState(1.0, 2.0, 0.3, 0.0), np.zeros((10, 2)), DT)
    assert traj.shape == (11, 4)
    assert np.all(traj == traj[0])


def test_constant_acceleration_is_analytic():
    traj = rollout_controls(VehicleState(0.0, 0.0, 0.0, 0.0), np.tile([0.0, 1.0], (15, 1)), DT)
    t = np.arange(16) * DT
    assert traj[:, 3] == pytest.approx(t, abs=1e-12)
    assert traj[:, 0] == pytest.approx(0.5 * t ** 2, abs=1e-12)


def test_rollout_reproduces_recorded_episode_bitwise():
    sc = load_scenario("two_lane_3v")
    world = reset(sc, 17)
    rng = np.random.default_rng(0)
    while not world.done:
        step_world(world, Action(float(rng.uniform(-0.05, 0.05)), float(rng.uniform(-1, 1))))
    rec = world.record
    traj = rollout_controls(rec.ego_states[0], rec.action_array(), sc.dt, sc.wheelbase)
    assert traj.tobytes() == rec.ego_array().tobytes()


def test_rollout_reports_step_of_non_finite_state():
    a = np.zeros((5, 2))
    a[2, 1] = np.nan
    with pytest.raises(FloatingPointError, match="step 3"):
        rollout_controls(VehicleState(0, 0, 0, 1.0), a, DT)


def test_rollout_needs_a_control():
    with pytest.raises(ValueError):
        rollout_controls(VehicleState(0, 0, 0, 1.0), np.zeros((0, 2)), DT)


# --- residuals ----------------------------------------------------------------

def test_reference_reproduces_itself():
    p = straight_problem(others=[parked_alongside(20, 10.0)])
    rng = np.random.default_rng(0)
    a = rng.uniform(-0.05, 0.05, (20, 2))
    p = OptProblem(rollout_controls(p.x0, a, DT), a, p.others, p.x0, DT)
    parts = cost_breakdown(p, a)
    assert parts["tracking"] == 0.0 and parts["collision"] == 0.0
    assert parts["jerk"] > 0.0


def test_half_squared_residual_norm_is_total_cost():
    p = straight_problem(others=[parked_alongside(20, 2.5)])
    a = np.random.default_rng(1).uniform(-0.3, 0.3, (20, 2))
    r = build_residuals(p, a)
    assert 0.5 * r @ r == pytest.approx(sum(cost_breakdown(p, a).values()), rel=1e-12)


def test_hinge_is_zero_exactly_at_safety_distance():
    d_safe = 1.0
    p = straight_problem(others=[parked_alongside(20, d_safe + 2 * R)], d_safe=d_safe)
    c = clearances(p, p.x_ref)
    assert c == pytest.approx(np.full((20, 1), d_safe), abs=1e-12)
    assert np.max(collision_matrix(p, p.a_init)) == pytest.approx(0.0, abs=1e-9)


def test_hinge_at_half_safety_distance():
    d_safe, w_col = 1.0, 50.0
    p = straight_problem(others=[parked_alongside(20, d_safe / 2 + 2 * R)], d_safe=d_safe, w_col=w_col)
    pairs = pair_clearances(p, p.x_ref)[0]
    assert pairs.min() == pytest.approx(d_safe / 2, abs=1e-12)
    hinge = w_col * np.maximum(0.0, d_safe - pairs)
    assert hinge.max() == pytest.approx(w_col * d_safe / 2, abs=1e-9)
    # three aligned pairs at d_safe/2; four neighbouring pairs one circle spacing apart
    lateral = d_safe / 2 + 2 * R
    neighbour = w_col * (d_safe - (math.hypot(lateral, 4.0 / 3.0) - 2 * R))
    assert np.count_nonzero(hinge[0]) == 7
    expected = math.sqrt(3 * (w_col * d_safe / 2) ** 2 + 4 * neighbour ** 2)
    assert collision_matrix(p, p.a_init)[0, 0] == pytest.approx(expected, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-15, 15), st.floats(-6, 6), st.floats(-math.pi, math.pi))
def test_hinge_consistency(dx, dy, heading):
    n = 5
    agent = np.tile([dx, dy, heading, 0.0], (n + 1, 1))
    p = straight_problem(n=n, v0=0.0, others=[agent])
    c = clearances(p, p.x_ref)
    col = cost_breakdown(p, p.a_init)["collision"]
    assert (col == 0.0) == bool(np.all(c >= p.config.d_safe))


def test_circle_cover_contains_footprint():
    fp = Footprint(4.0, 1.8)
    offsets, r = circle_cover(fp)
    assert len(offsets) == 3 and r == pytest.approx(math.hypot(2 / 3, 0.9))
    u, w = np.meshgrid(np.linspace(-2, 2, 41), np.linspace(-0.9, 0.9, 19))
    pts = np.stack([u.ravel(), w.ravel()], axis=1)
    d = np.min(np.hypot(pts[:, None, 0] - offsets[None], pts[:, None, 1]), axis=1)
    assert np.all(d <= r + 1e-12)


def test_problem_validation():
    p = straight_problem()
    with pytest.raises(ValueError):
        OptProblem(p.x_ref[:-1], p.a_init, [], p.x0, DT)
    with pytest.raises(ValueError):
        OptProblem(p.x_ref, p.a_init, [np.zeros((5, 4))], p.x0, DT)
    with pytest.raises(ValueError):
        OptConfig(d_safe=0.0)
    with pytest.raises(ValueError):
        OptConfig(w_col=-1.0)
    with pytest.raises(ValueError, match="unknown"):
        OptConfig.from_dict({"w_collision": 3})


# --- jacobian ---------------------------------------------------------------

def test_longitudinal_columns_match_double_integrator():
    n = 12
    p = straight_problem(n=n, w_jerk=0.0)
    J = jacobian(p, p.a_init)
    # tracking rows are (x_1, y_1, x_2, y_2, ...); acceleration columns are odd
    for k in range(1, n + 1):
        for j in range(n):
            expected = DT * DT * (k - j - 0.5) if j < k else 0.0
            assert J[2 * (k - 1), 2 * j + 1] == pytest.approx(expected, abs=1e-4)


def test_inactive_hinge_rows_are_zero():
    n = 10
    p = straight_problem(n=n, others=[parked_alongside(n, 8.0)])
    J = jacobian(p, p.a_init)
    start = 2 * n + 2 * (n - 1)
    assert not J[start:start + 9 * n].any()


def test_jacobian_is_causal():
    n = 10
    p = straight_problem(n=n, others=[parked_alongside(n, 2.0 + 2 * R)])
    a = np.random.default_rng(3).uniform(-0.1, 0.1, (n, 2))
    J = jacobian(p, a)
    # tracking block: state at step k must not depend on controls k..N-1
    for k in range(1, n + 1):
        assert not J[2 * (k - 1):2 * k, 2 * k:].any()
    # collision block: 9 circle pairs per step
    start = 2 * n + 2 * (n - 1)
    for k in range(1, n + 1):
        assert not J[start + 9 * (k - 1):start + 9 * k, 2 * k:].any()


def test_forward_difference_matches_central_difference():
    rng = np.random.default_rng(8)
    sc = load_scenario("two_lane_3v")
    for trial in range(5):
        n = 8
        x0 = VehicleState(rng.uniform(0, 30), rng.uniform(-3.5, 0), rng.uniform(-0.1, 0.1), rng.uniform(3, 6))
        a = rng.uniform(-0.1, 0.1, (n, 2))
        ref = rollout_controls(x0, rng.uniform(-0.1, 0.1, (n, 2)), DT)
        agent = rollout_controls(VehicleState(x0.x + rng.uniform(-6, 6), x0.y + rng.uniform(2.5, 4), 0.0, 5.0),
                                 np.zeros((n, 2)), DT)
        p = OptProblem(ref, a, [agent], x0, DT, road=sc.road)
        J = jacobian(p, a)
        h = 1e-6
        central = np.empty_like(J)
        flat = a.ravel()
        for i in range(flat.size):
            e = np.zeros_like(flat)
            e[i] = h
            central[:, i] = (build_residuals(p, flat + e) - build_residuals(p, flat - e)) / (2 * h)
        assert np.max(np.abs(J - central)) / np.max(np.abs(central)) < 1e-4


# --- Levenberg-Marquardt ------------------------------------------------------

def rosenbrock():
    return (lambda x: np.array([1.0 - x[0], 10.0 * (x[1] - x[0] ** 2)]),
            lambda x: np.array([[-1.0, 0.0], [-20.0 * x[0], 10.0]]))


def test_rosenbrock():
    f, j = rosenbrock()
    res = levenberg_marquardt(f, j, [-1.2, 1.0])
    assert res.converged and res.iterations <= 200
    assert np.linalg.norm(res.x - 1.0) < 1e-8


def double_integrator_tracking(n=30, seed=4):
    """Position/velocity tracking for a double integrator: residuals linear in the controls."""
    rng = np.random.default_rng(seed)
    a_true = rng.uniform(-1, 1, n)
    k, j = np.arange(1, n + 1)[:, None], np.arange(n)[None, :]
    pos = np.where(j < k, DT * DT * (k - j - 0.5), 0.0)
    vel = np.where(j < k, DT, 0.0)
    sens = np.vstack([pos, vel])
    return sens, sens @ a_true, a_true


def test_linear_tracking_problem_solved_in_two_iterations():
    sens, ref, a_true = double_integrator_tracking()
    res = levenberg_marquardt(lambda a: sens @ a - ref, lambda a: sens, np.zeros(a_true.size))
    assert res.converged and res.iterations <= 2
    assert np.max(np.abs(res.x - a_true)) < 1e-10


def test_lm_accepted_costs_never_increase():
    f, j = rosenbrock()
    res = levenberg_marquardt(f, j, [-1.2, 1.0])
    assert np.all(np.diff(res.costs) <= 0.0)


def test_lm_reports_non_convergence():
    f, j = rosenbrock()
    res = levenberg_marquardt(f, j, [-1.2, 1.0], LmSettings(max_iterations=3))
    assert not res.converged and res.reason == "max_iterations" and res.iterations == 3


def test_lm_rejects_non_finite_start():
    with pytest.raises(ValueError):
        levenberg_marquardt(lambda x: np.array([np.nan]), lambda x: np.ones((1, 1)), [0.0])


def test_solver_pushes_reference_out_of_safety_band():
    n = 50
    # parked car to the left of the straight reference, passed at 0.5 m clearance
    agent = np.tile([30.0, 0.5 + 2 * R, 0.0, 0.0], (n + 1, 1))
    p = straight_problem(n=n, others=[agent])
    assert min_clearance(p, p.x_ref) == pytest.approx(0.5)
    rep = solve_lm(p)
    assert rep.converged
    assert min_clearance(p, rep.trajectory) >= p.config.d_safe - 1e-3
    assert rep.final_cost < rep.initial_cost
    assert rep.post_check
    assert np.all(np.diff(rep.costs) <= 0.0)
    # controls are re-integrated exactly
    assert rollout_controls(p.x0, rep.controls, DT).tobytes() == rep.trajectory.tobytes()
    assert rep.initial_cost == pytest.approx(sum(rep.initial_breakdown.values()))
    assert homotopy_sides(rep.trajectory, p.others) == homotopy_sides(p.x_ref, p.others)
    assert "converged: true" in rep.to_text()


def test_safety_push_can_add_jerk_to_a_jerk_free_reference():
    # the reference has constant controls, so any evasive change raises the jerk metric
    n = 50
    agent = np.tile([30.0, 0.5 + 2 * R, 0.0, 0.0], (n + 1, 1))
    p = straight_problem(n=n, others=[agent])
    rep = solve_lm(p)
    assert rep.converged
    assert jerk_metric(p.a_init, DT) == 0.0
    assert jerk_metric(rep.controls, DT) > 0.0


def test_solver_smooths_a_noisy_reference_without_agents():
    n = 40
    x0 = VehicleState(0.0, 0.0, 0.0, 5.0)
    a = np.column_stack([np.zeros(n), 0.5 * (-1.0) ** np.arange(n)])
    p = OptProblem(rollout_controls(x0, a, DT), a, [], x0, DT)
    rep = solve_lm(p)
    assert rep.converged
    assert jerk_metric(rep.controls, DT) < 0.5 * jerk_metric(a, DT)
    assert np.max(np.abs(rep.trajectory[:, :2] - p.x_ref[:, :2])) < 0.5


def test_final_controls_respect_limits():
    n = 20
    x0 = VehicleState(0.0, 0.0, 0.0, 3.0)
    a = np.column_stack([np.zeros(n), np.ones(n)])
    ref = rollout_controls(x0, np.column_stack([np.zeros(n), np.full(n, 1.5)]), DT)
    rep = solve_lm(OptProblem(ref, a, [], x0, DT))
    assert np.all(rep.controls[:, 1] <= 1.0)


# --- checks and metrics -----------------------------------------------------

def test_post_check_far_and_through():
    n = 10
    far = straight_problem(n=n, others=[parked_alongside(n, 20.0)])
    assert post_collision_check(far.x_ref, far)
    through = straight_problem(n=n, others=[parked_alongside(n, 0.0, x=6.0, v=0.0)])
    assert not post_collision_check(through.x_ref, through)


def test_post_check_agrees_with_point_sampling():
    rng = np.random.default_rng(21)
    fp = Footprint()
    for _ in range(60):
        ego = np.array([[0.0, 0.0, rng.uniform(-np.pi, np.pi), 0.0]] * 2)
        agent = np.array([[rng.uniform(-5, 5), rng.uniform(-4, 4), rng.uniform(-np.pi, np.pi), 0.0]] * 2)
        p = OptProblem(ego, np.zeros((1, 2)), [agent], VehicleState(*ego[0]), DT)
        expect = not sampled_overlap(ego[0, :3], agent[0, :3], (fp.length, fp.width), (fp.length, fp.width))
        assert post_collision_check(ego, p) == expect


def test_jerk_metric_examples():
    assert jerk_metric(np.full(10, 0.7), DT) == 0.0
    alt = (-1.0) ** np.arange(10)
    assert jerk_metric(alt, DT) == pytest.approx((2 / DT) ** 2)
    assert jerk_metric(np.column_stack([np.zeros(10), alt]), DT) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        jerk_metric(np.zeros(2), DT)


def test_homotopy_side_flips_with_passing_side():
    n = 30
    t = np.arange(n + 1) * DT
    ego = np.column_stack([5.0 * t, np.zeros(n + 1), np.zeros(n + 1), np.full(n + 1, 5.0)])
    agent_left = np.column_stack([np.full(n + 1, 15.0), np.full(n + 1, 3.0), np.zeros(n + 1), np.zeros(n + 1)])
    agent_right = agent_left * [1, -1, 1, 1]
    assert homotopy_sides(ego, [agent_left, agent_right]) == [1, -1]


def test_homotopy_side_is_stable_at_matched_speed():
    # side-by-side at equal speed: small heading wiggles must not flip the side
    n = 30
    t = np.arange(n + 1) * DT
    agent = np.column_stack([5.0 * t, np.full(n + 1, -3.5), np.zeros(n + 1), np.full(n + 1, 5.0)])
    for wiggle in (-0.02, 0.0, 0.02):
        ego = np.column_stack([5.0 * t, np.zeros(n + 1), np.full(n + 1, wiggle), np.full(n + 1, 5.0)])
        assert homotopy_sides(ego, [agent]) == [-1]


def test_homotopy_side_is_zero_for_an_agent_in_line():
    n = 30
    t = np.arange(n + 1) * DT
    agent = np.column_stack([12.0 + 5.0 * t, np.zeros(n + 1), np.zeros(n + 1), np.full(n + 1, 5.0)])
    for offset in (-0.05, 0.05):
        ego = np.column_stack([5.0 * t, np.full(n + 1, offset), np.zeros(n + 1), np.full(n + 1, 5.0)])
        assert homotopy_sides(ego, [agent]) == [0]
