import numpy as np
import pytest

from stridelab import rotations as rot
from stridelab.errors import ParameterError, SimulationFault
from stridelab.humanoid import rest_state
from stridelab.simulator import Action, SimConfig, check_fall, step
from stridelab.terrain import generate_terrain, sample_height


@pytest.fixture(scope="module")
def flat():
    return generate_terrain("flat", seed=0)


def zero_action(skel):
    return Action(
        root_accel=np.zeros(2), yaw_accel=np.asarray(0.0), pd_targets=np.zeros((14, 3))
    )


def test_sim_config_consistency():
    with pytest.raises(ParameterError):
        SimConfig(control_hz=30, sim_hz=90, substeps_per_control=2)


def test_equilibrium_state_unchanged(skel, flat):
    cfg = SimConfig()
    st = rest_state(skel)
    out = step(st, zero_action(skel), flat, cfg, skel)
    assert np.allclose(out.root_pos, st.root_pos, atol=1e-12)
    assert np.allclose(out.joint_rot, st.joint_rot, atol=1e-12)
    assert np.allclose(out.joint_ang_vel, 0.0)
    assert np.isclose(out.time - st.time, 1.0 / cfg.control_hz)


def test_root_accel_closed_form(skel, flat):
    # 1 m/s^2 forward for 1 s of sim time (30 control steps = 60 substeps
    # at dt=1/60): v = 1.0 exactly, x = a dt^2 n(n+1)/2 = 0.5083333...
    cfg = SimConfig()
    st = rest_state(skel)
    act = Action(np.array([1.0, 0.0]), np.asarray(0.0), np.zeros((14, 3)))
    for _ in range(30):
        st = step(st, act, flat, cfg, skel)
    n = 60
    dt = 1.0 / 60.0
    expect_x = dt * dt * n * (n + 1) / 2.0
    assert abs(st.root_lin_vel[0] - 1.0) < 1e-9
    assert abs(st.root_pos[0] - expect_x) < 1e-9
    assert abs(st.root_pos[0] - 0.5083333333333333) < 1e-9


def test_substep_oracle_recursion(skel, flat, rng):
    # Scripted per-substep recursion for the root, random accelerations.
    cfg = SimConfig()
    st = rest_state(skel)
    accels = rng.uniform(-2, 2, size=(20, 2))
    xy = np.zeros(2)
    v = np.zeros(2)
    cur = st
    for a in accels:
        act = Action(np.array(a), np.asarray(0.0), np.zeros((14, 3)))
        cur = step(cur, act, flat, cfg, skel)
        for _ in range(2):
            v = v + a / 60.0
            sp = np.linalg.norm(v)
            if sp > cfg.max_speed:
                v = v * cfg.max_speed / sp
            xy = xy + v / 60.0
    assert np.allclose(cur.root_pos[:2], xy, atol=1e-9)
    assert np.allclose(cur.root_lin_vel[:2], v, atol=1e-9)


def test_overdamped_pd_no_overshoot(skel, flat):
    # kd^2 > 4 kp I for the default limb gains (25 > ... not true); use a
    # reference scalar ODE integration instead of an analytic bound.
    cfg = SimConfig()
    st = rest_state(skel)
    target = np.zeros((14, 3))
    j = skel.index("head") - 1
    target[j, 0] = 0.5
    act = Action(np.zeros(2), np.asarray(0.0), target)

    # scripted scalar recursion at dt=1/60 with the same clamping
    kp, kd, inertia, tq = (
        skel.kp[j],
        skel.kd[j],
        skel.inertia[j],
        skel.torque_max[j],
    )
    th, thd = 0.0, 0.0
    traj_ref = []
    for _ in range(120):
        for _ in range(2):
            tau = np.clip(kp * (0.5 - th) - kd * thd, -tq, tq)
            thd += tau / inertia / 60.0
            th += thd / 60.0
        traj_ref.append(th)

    traj_sim = []
    for _ in range(120):
        st = step(st, act, flat, cfg, skel)
        traj_sim.append(rot.quat_log(st.joint_rot)[j, 0])
    assert np.allclose(traj_sim, traj_ref, atol=1e-9)
    assert abs(traj_sim[-1] - 0.5) < 1e-3


def test_critically_damped_monotone_approach(skel, flat):
    # Overdamped per-axis dynamics approach the target without overshoot.
    cfg = SimConfig()
    from stridelab.skeleton import JointSpec, Skeleton, default_skeleton

    base = default_skeleton()
    joints = list(base.joints)
    # kd^2 >= 4 kp I: kp=4, kd=10, I=1
    j = 2  # head
    joints[j] = JointSpec("head", 1, (0.0, 0.0, 0.35),
                          joints[j].dof_limits, kp=4.0, kd=10.0, inertia=1.0, torque_max=50.0)
    sk = Skeleton(joints=tuple(joints), body_part_groups=base.body_part_groups)
    st = rest_state(sk)
    target = np.zeros((14, 3))
    target[j - 1, 0] = 0.5
    act = Action(np.zeros(2), np.asarray(0.0), target)
    prev = 0.0
    for _ in range(60):  # 2 s
        st = step(st, act, flat, cfg, sk)
        cur = rot.quat_log(st.joint_rot)[j - 1, 0]
        assert cur >= prev - 1e-12
        assert cur <= 0.5 + 1e-9
        prev = cur


def test_determinism_bit_identical(skel, flat, rng):
    cfg = SimConfig()
    st = rest_state(skel)
    act = Action(rng.uniform(-1, 1, 2), np.asarray(0.3), rng.uniform(-0.5, 0.5, (14, 3)))
    a = step(st, act, flat, cfg, skel)
    b = step(st, act, flat, cfg, skel)
    for f in ("root_pos", "root_yaw", "root_lin_vel", "joint_rot", "joint_ang_vel"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_joint_limits_respected(skel, flat, rng):
    cfg = SimConfig()
    st = rest_state(skel)
    act = Action(np.zeros(2), np.asarray(0.0), np.full((14, 3), 10.0))
    for _ in range(200):
        st = step(st, act, flat, cfg, skel)
        theta = rot.quat_log(st.joint_rot)
        assert np.all(theta <= skel.dof_high + 1e-9)
        assert np.all(theta >= skel.dof_low - 1e-9)


def test_speed_cap(skel, flat):
    cfg = SimConfig()
    st = rest_state(skel)
    act = Action(np.array([3.0, 0.0]), np.asarray(0.0), np.zeros((14, 3)))
    for _ in range(120):
        st = step(st, act, flat, cfg, skel)
    assert np.linalg.norm(st.root_lin_vel[:2]) <= cfg.max_speed + 1e-9


def test_uphill_slope_slows_top_speed(skel):
    cfg = SimConfig()
    hm = generate_terrain("slope", {"grade": 0.4}, seed=0)
    st = rest_state(skel)
    act = Action(np.array([3.0, 0.0]), np.asarray(0.0), np.zeros((14, 3)))
    for _ in range(120):
        st = step(st, act, hm, cfg, skel)
    # 0.4 grade with coeff 0.5 costs 20% of top speed
    assert np.linalg.norm(st.root_lin_vel[:2]) <= 0.8 * cfg.max_speed + 1e-6


def test_root_height_clamped_to_terrain(skel, rng):
    cfg = SimConfig()
    hm = generate_terrain("rough", {"amplitude": 0.3}, seed=4)
    st = rest_state(skel)
    for i in range(50):
        act = Action(rng.uniform(-3, 3, 2), np.asarray(rng.uniform(-2, 2)), np.zeros((14, 3)))
        st = step(st, act, hm, cfg, skel)
        h = sample_height(hm, st.root_pos[0], st.root_pos[1])
        assert abs(st.root_pos[2] - h - cfg.hip_height) < 1e-9


def test_non_finite_action_raises(skel, flat):
    cfg = SimConfig()
    st = rest_state(skel)
    act = Action(np.array([np.nan, 0.0]), np.asarray(0.0), np.zeros((14, 3)))
    with pytest.raises(SimulationFault, match="root_accel"):
        step(st, act, flat, cfg, skel)


def test_check_fall_always_false(skel, flat, rng):
    cfg = SimConfig()
    st = rest_state(skel)
    assert check_fall(st, flat) is False
    for _ in range(200):
        act = Action(rng.uniform(-3, 3, 2), np.asarray(rng.uniform(-4, 4)),
                     rng.uniform(-2.6, 2.6, (14, 3)))
        st = step(st, act, flat, cfg, skel)
        assert check_fall(st, flat) is False
