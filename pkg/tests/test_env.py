import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from quadnav.dynamics import BodyCommand, QuadParams, QuadState
from quadnav.env import (
    ActionDelayQueue,
    EnvConfig,
    QuadEnv,
    RewardEvents,
    compute_reward,
    esdf_ring_observe,
    kgp_observe,
    obs_dim,
    obs_layout,
    obs_layout_hash,
    obs_slices,
    point_in_fov,
    segment_column_entry,
    select_policy_model,
)
from quadnav.gridmap import OccupancyGrid, build_esdf, esdf_at


def make_state(p=(0, 0, 1), v=(0, 0, 0), a=(0, 0, 0), theta=(0, 0, 0), omega=(0, 0, 0)):
    return QuadState(np.array(p, float), np.array(v, float), np.array(a, float),
                     np.array(theta, float), np.array(omega, float))


def free_esdf(extent=10.0, res=0.1):
    n = int(2 * extent / res)
    return build_esdf(OccupancyGrid.empty(n, n, res, origin=(-extent, -extent)))


def events_toward(cp, cp2=None, collision=False, finished=False):
    cp = np.asarray(cp, float)
    cp2 = cp if cp2 is None else np.asarray(cp2, float)
    return RewardEvents(cp_progress=cp, fov_cp1=cp, fov_cp2=cp2,
                        collision=collision, finished=finished)


CFG = EnvConfig()


class TestComputeReward:
    def test_hover_far_from_cp(self):
        s = make_state(p=(0, 0, 1), theta=(0, 0, 0))
        ev = events_toward((5.0, 0.0, 1.0))
        reward, bd = compute_reward(s, s, ev, CFG)
        assert bd["r_p"] == pytest.approx(-1.5, abs=1e-12)
        assert reward == pytest.approx(2.0 * -1.5, abs=1e-9)

    def test_full_speed_progress(self):
        prev = make_state(p=(0, 0, 1))
        cur = make_state(p=(0.06, 0, 1))
        ev = events_toward((2.0, 0.0, 1.0))
        _, bd = compute_reward(prev, cur, ev, CFG)
        assert bd["r_p"] == pytest.approx(1.0 - 1.5, abs=1e-9)
        assert CFG.k_p * bd["r_p"] == pytest.approx(-1.0, abs=1e-9)

    def test_two_dynamic_violations(self):
        cur = make_state(p=(0, 0, 1), v=(3.5, 0, 0), theta=(0, 1.3, 0))
        ev = events_toward((5.0, 0.0, 1.0))
        _, bd = compute_reward(cur, cur, ev, CFG)
        assert bd["r_d"] == -2.0
        assert CFG.k_d * bd["r_d"] == pytest.approx(-10.0)

    def test_cps_behind_cost_fov(self):
        cur = make_state(p=(0, 0, 1), theta=(0, 0, 0))
        ev = events_toward((-5.0, 0.0, 1.0))
        _, bd = compute_reward(cur, cur, ev, CFG)
        assert bd["r_v"] == -1.0
        assert CFG.k_v * bd["r_v"] == pytest.approx(-5.0)

    def test_collision_and_completion_terms(self):
        cur = make_state()
        ev = events_toward((1.0, 0.0, 1.0), collision=True)
        reward, bd = compute_reward(cur, cur, ev, CFG)
        assert bd["collision"] == -600.0
        ev2 = events_toward((1.0, 0.0, 1.0), finished=True)
        _, bd2 = compute_reward(cur, cur, ev2, CFG)
        assert bd2["r_f"] == 300.0

    def test_reward_equals_weighted_breakdown(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            prev = make_state(p=rng.normal(0, 2, 3), v=rng.normal(0, 2, 3),
                              a=rng.normal(0, 4, 3),
                              theta=rng.uniform(-1.3, 1.3, 3), omega=rng.normal(0, 2, 3))
            cur = make_state(p=prev.p_w + rng.normal(0, 0.05, 3), v=rng.normal(0, 2, 3),
                             a=rng.normal(0, 4, 3),
                             theta=rng.uniform(-1.3, 1.3, 3), omega=rng.normal(0, 2, 3))
            ev = events_toward(rng.normal(0, 3, 3), rng.normal(0, 3, 3),
                               collision=rng.random() < 0.1, finished=rng.random() < 0.1)
            reward, bd = compute_reward(prev, cur, ev, CFG)
            total = (CFG.k_p * bd["r_p"] + bd["collision"] + CFG.k_d * bd["r_d"]
                     + CFG.k_v * bd["r_v"] + bd["smooth"] + bd["r_f"])
            assert reward == pytest.approx(total, abs=1e-12)

    def test_progress_bound(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            prev = make_state(p=rng.normal(0, 2, 3))
            cur = make_state(p=prev.p_w + rng.normal(0, 0.1, 3))
            ev = events_toward(rng.normal(0, 3, 3))
            _, bd = compute_reward(prev, cur, ev, CFG)
            bound = np.linalg.norm(cur.p_w - prev.p_w) / (CFG.v_max * CFG.dt)
            assert abs(bd["r_p"] - CFG.r_t) <= bound + 1e-9

    def test_progress_telescopes_on_straight_runs(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            p0 = np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), 1.0])
            bearing = rng.uniform(0, 2 * math.pi)
            d0 = rng.uniform(1.0, 4.0)
            u = np.array([math.cos(bearing), math.sin(bearing), 0.0])
            cp = p0 + d0 * u
            s_enter = d0 - CFG.d_hor
            cuts = np.sort(rng.uniform(0, s_enter, rng.integers(3, 25)))
            arcs = np.concatenate([[0.0], cuts, [s_enter]])
            total = 0.0
            for a, b in zip(arcs[:-1], arcs[1:]):
                prev = make_state(p=p0 + a * u)
                cur = make_state(p=p0 + b * u)
                _, bd = compute_reward(prev, cur, events_toward(cp), CFG)
                total += bd["r_p"] - CFG.r_t
            assert total == pytest.approx(s_enter / (CFG.v_max * CFG.dt), abs=1e-6)


class TestFov:
    @staticmethod
    def oracle_in_fov(theta, p_w, point, half_h, half_v):
        R = Rotation.from_euler("ZYX", [theta[2], theta[1], theta[0]]).as_matrix()
        rel = R.T @ (np.asarray(point) - np.asarray(p_w))
        return bool(rel[0] > 0 and abs(math.atan2(rel[1], rel[0])) <= half_h
                    and abs(math.atan2(rel[2], rel[0])) <= half_v)

    def test_matches_direct_cone_test(self):
        rng = np.random.default_rng(77)
        agree = 0
        for _ in range(1000):
            theta = rng.uniform(-1.2, 1.2, 3)
            p = rng.normal(0, 2, 3)
            target = p + rng.normal(0, 3, 3)
            s = make_state(p=p, theta=theta)
            got = point_in_fov(s, target, CFG.fov_half_h, CFG.fov_half_v)
            want = self.oracle_in_fov(theta, p, target, CFG.fov_half_h, CFG.fov_half_v)
            assert got == want
            agree += 1
        assert agree == 1000

    def test_rv_zero_when_cp1_visible(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            s = make_state(p=rng.normal(0, 1, 3), theta=rng.uniform(-0.5, 0.5, 3))
            cp = rng.normal(0, 4, 3)
            ev = events_toward(cp, rng.normal(0, 4, 3))
            _, bd = compute_reward(s, s, ev, CFG)
            if point_in_fov(s, cp, CFG.fov_half_h, CFG.fov_half_v):
                assert bd["r_v"] == 0.0


class TestSegmentColumn:
    def test_against_dense_sampling(self):
        rng = np.random.default_rng(9)
        for _ in range(500):
            p0 = rng.normal(0, 1.5, 3)
            p1 = p0 + rng.normal(0, 1.0, 3)
            c = rng.normal(0, 1.5, 3)
            t = segment_column_entry(p0, p1, c, 0.5, 0.2)
            ts = np.linspace(0, 1, 2001)
            pts = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
            inside = ((np.linalg.norm(pts[:, :2] - c[None, :2], axis=1) <= 0.5)
                      & (np.abs(pts[:, 2] - c[2]) <= 0.2))
            if t is None:
                # no sampled point may be strictly inside (boundary grazing
                # can go either way at sampling resolution)
                assert not inside.any() or \
                    np.all(np.abs(np.linalg.norm(pts[inside][:, :2] - c[:2], axis=1) - 0.5) < 2e-3) or \
                    np.all(np.abs(np.abs(pts[inside][:, 2] - c[2]) - 0.2) < 2e-3)
            else:
                first = np.argmax(inside) if inside.any() else None
                if first is not None:
                    assert t <= ts[first] + 1e-3
                p_ent = p0 + t * (p1 - p0)
                assert np.linalg.norm(p_ent[:2] - c[:2]) <= 0.5 + 1e-9
                assert abs(p_ent[2] - c[2]) <= 0.2 + 1e-9

    def test_start_inside_returns_zero(self):
        t = segment_column_entry((0, 0, 1), (1, 0, 1), (0.1, 0, 1), 0.5, 0.2)
        assert t == 0.0


class TestKgpObserve:
    def test_no_obstacles_sentinels(self):
        m = free_esdf()
        o_cp, o_vcp, d_vel = kgp_observe(m, (0, 0, 1), (1, 0, 0), (3, 0, 1), 5.0)
        np.testing.assert_allclose(o_cp, [5.0, 0.0, 5.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(o_vcp, o_cp, atol=1e-9)
        assert d_vel == 5.0

    def test_wall_distance_along_velocity(self):
        n = 200
        g = OccupancyGrid.empty(n, n, 0.1, origin=(-10, -10))
        # wall at x = 2.0 .. 2.1, spanning all y
        g.cells[:, 120] = True
        m = build_esdf(g, 0.0)
        _, _, d_vel = kgp_observe(m, (0, 0, 1), (2.0, 0, 0), (4.0, 0.0, 1.0), 5.0)
        # dense-march oracle at a tenth of the step
        s = 0.0
        oracle = 5.0
        while s < 5.0:
            s += 0.01
            c = m.cell_of((s, 0.0))
            if m.occupied[c[1], c[0]]:
                oracle = s
                break
        assert abs(d_vel - oracle) <= 0.1 + 1e-9
        assert abs(d_vel - 2.05) <= 0.1  # wall cells span x in [2.0, 2.1]

    def test_velocity_toward_cp_degeneracy(self):
        n = 200
        g = OccupancyGrid.empty(n, n, 0.1, origin=(-10, -10))
        g.cells[95:105, 115:125] = True
        m = build_esdf(g, 0.0)
        p = (0.0, 0.0, 1.0)
        cp = (2.0, 0.0, 1.0)
        o_cp, o_vcp, _ = kgp_observe(m, p, (1.7, 0.0, 0.0), cp, 5.0)
        np.testing.assert_array_equal(o_cp, o_vcp)

    def test_slow_speed_reuses_cp_direction(self):
        m = free_esdf()
        o_cp, o_vcp, d_vel = kgp_observe(m, (0, 0, 1), (0.01, -0.02, 0.0), (0, 3, 1), 5.0)
        np.testing.assert_array_equal(o_cp, o_vcp)

    def test_edge_points_near_block_edges(self):
        n = 200
        g = OccupancyGrid.empty(n, n, 0.1, origin=(-10, -10))
        g.cells[95:106, 115:126] = True  # block 1.1 m wide centered ahead
        m = build_esdf(g, 0.0)
        o_cp, _, _ = kgp_observe(m, (0, 0, 1), (1, 0, 0), (4, 0, 1), 5.0)
        pts = o_cp.reshape(2, 2)
        for rel in pts:
            assert np.linalg.norm(rel) <= 5.0 + 1e-9
        # nearest edge point must sit on the front face of the block
        assert abs(pts[0][0] - 1.55) < 0.15


class TestEsdfRing:
    def test_free_map_reads_horizon(self):
        m = free_esdf()
        np.testing.assert_allclose(esdf_ring_observe(m, (0, 0, 1), 5.0), 5.0)

    def test_wall_half_meter_left(self):
        n = 200
        g = OccupancyGrid.empty(n, n, 0.1, origin=(-10, -10))
        g.cells[:, 94] = True  # wall cells centered at x = -0.55
        m = build_esdf(g, 0.0)
        out = esdf_ring_observe(m, (0.0, 0.0, 1.0), 5.0)
        # sample k=4 points at (-0.5, 0): brute-force distance is 0.05
        ys = np.arange(n)
        centers_x = -10 + (94 + 0.5) * 0.1
        brute = np.min(np.hypot(centers_x - (-0.5), (-10 + (ys + 0.5) * 0.1) - 0.0))
        assert out[5] == pytest.approx(brute, abs=0.1 + 1e-9)
        assert out[5] < 0.2

    def test_clearing_radius(self):
        n = 100
        g = OccupancyGrid.empty(n, n, 0.1, origin=(-5, -5))
        ys, xs = np.mgrid[0:n, 0:n]
        cx = -5 + (xs + 0.5) * 0.1
        cy = -5 + (ys + 0.5) * 0.1
        g.cells = (cx ** 2 + cy ** 2) >= 1.0  # free disk of radius 1 m
        m = build_esdf(g, 0.0)
        out = esdf_ring_observe(m, (0.0, 0.0, 1.0), 5.0)
        assert out[0] == pytest.approx(1.0, abs=0.1 + 1e-9)


class TestDelayQueue:
    def test_zero_delay_identity(self):
        q = ActionDelayQueue(0, BodyCommand(16.0, np.zeros(3)))
        cmd = BodyCommand(10.0, np.array([1.0, 0, 0]))
        assert q.push(cmd) is cmd

    def test_shift_by_k(self):
        hover = BodyCommand(16.0, np.zeros(3))
        q = ActionDelayQueue(3, hover)
        sent = [BodyCommand(float(i), np.zeros(3)) for i in range(6)]
        got = [q.push(c) for c in sent]
        assert [g.f_T for g in got[:3]] == [16.0, 16.0, 16.0]
        assert [g.f_T for g in got[3:]] == [0.0, 1.0, 2.0]


class TestSelectPolicyModel:
    def test_empty_map_free(self):
        m = free_esdf()
        chain = np.array([[0, 0, 1], [4, 0, 1]], float)
        assert select_policy_model(m, (0, 0, 1), chain) == "free"

    def test_obstacle_near_path(self):
        n = 200
        g = OccupancyGrid.empty(n, n, 0.1, origin=(-10, -10))
        g.cells[98:103, 118:123] = True  # block ~2 m ahead, 0.5 m off axis
        m = build_esdf(g, 0.0)
        chain = np.array([[0, 0, 1], [4, 0, 1]], float)
        assert select_policy_model(m, (0, 0, 1), chain) == "obstacle"

    def test_obstacle_outside_horizon(self):
        n = 400
        g = OccupancyGrid.empty(n, n, 0.1, origin=(-20, -20))
        g.cells[195:206, 295:306] = True  # block ~10 m ahead
        m = build_esdf(g, 0.0)
        chain = np.array([[0, 0, 1], [3, 0, 1]], float)
        assert select_policy_model(m, (0, 0, 1), chain, horizon=5.0) == "free"


def quiet_config(**kw):
    base = dict(action_delay_steps=0, domain_rand_enabled=False,
                scenario_pos_noise=0.0, scenario_vel_noise=0.0,
                scenario_yaw_noise=0.0)
    base.update(kw)
    return EnvConfig(**base)


class TestQuadEnv:
    def test_obs_layout(self):
        assert obs_dim() == 36
        assert len(obs_layout_hash()) == 16
        sl = obs_slices()
        assert sl["v_w"] == slice(0, 3)
        assert sl["o_sdf"] == slice(27, 36)

    def test_reset_deterministic(self):
        env = QuadEnv(EnvConfig(obstacle_count_min=1, obstacle_count_max=4))
        o1 = env.reset(seed=123)
        env2 = QuadEnv(EnvConfig(obstacle_count_min=1, obstacle_count_max=4))
        o2 = env2.reset(seed=123)
        np.testing.assert_array_equal(o1, o2)

    def test_obstacle_free_reset_sentinels(self):
        env = QuadEnv(EnvConfig(obstacle_count_min=0, obstacle_count_max=0))
        obs = env.reset(seed=1)
        sl = obs_slices()
        assert obs[sl["d_vel"]][0] == env.config.sensing_horizon
        assert np.all(np.linalg.norm(obs[sl["o_cp"]].reshape(2, 2), axis=1)
                      == pytest.approx(env.config.sensing_horizon))
        assert np.isfinite(obs).all() and obs.shape == (36,)

    def test_scene_channel_audit(self):
        cfg = EnvConfig(obstacle_count_min=1, obstacle_count_max=6)
        env = QuadEnv(cfg)
        for seed in range(60):
            env.reset(seed=seed)
            chain = np.vstack([[0.0, 0.0], env.control_points[:, :2]])
            for center, radius in env.scene_obstacles:
                for i in range(len(chain) - 1):
                    a, b = chain[i], chain[i + 1]
                    seg = b - a
                    L2 = seg @ seg
                    t = np.clip((center - a) @ seg / L2, 0, 1) if L2 > 0 else 0.0
                    d = np.linalg.norm(a + t * seg - center)
                    assert d - radius >= cfg.inflation_radius + cfg.channel_clearance - 1e-9
            # discretized chain stays free
            for i in range(len(chain) - 1):
                for t in np.linspace(0, 1, 40):
                    p = chain[i] + t * (chain[i + 1] - chain[i])
                    assert esdf_at(env.map, p) > 0.0

    def test_hover_step_reward(self):
        env = QuadEnv(quiet_config())
        m = free_esdf()
        cps = np.array([[6.0, 0.0, 1.0]])
        env.reset_scenario(m, cps, np.array([0.0, 0.0, 1.0]), seed=0)
        hover = env.base_params.m * env.base_params.g
        a0 = hover / (2.0 * env.base_params.f_rotor_max) - 1.0
        res = env.step(np.array([a0, 0.0, 0.0, 0.0]))
        assert res.reward == pytest.approx(2.0 * -1.5, abs=1e-6)
        assert not res.terminated

    def test_pass_event_fires_on_column_crossing(self):
        env = QuadEnv(quiet_config())
        m = free_esdf()
        cps = np.array([[1.0, 0.0, 1.0], [3.0, 0.0, 1.0]])
        env.reset_scenario(m, cps, np.array([0.0, 0.0, 1.0]), seed=0)
        env.state.v_w = np.array([3.0, 0.0, 0.0])
        hover = env.base_params.m * env.base_params.g
        a0 = hover / (2.0 * env.base_params.f_rotor_max) - 1.0
        passed_at = None
        prev_p = env.state.p_w.copy()
        for k in range(40):
            res = env.step(np.array([a0, 0.0, 0.0, 0.0]))
            cur_p = env.state.p_w.copy()
            if res.info["cp_passes"] > 0 and passed_at is None:
                passed_at = k
                t = segment_column_entry(prev_p, cur_p, cps[0], env.config.d_hor,
                                         env.config.d_hgt)
                assert t is not None
                break
            assert segment_column_entry(prev_p, cur_p, cps[0], env.config.d_hor,
                                        env.config.d_hgt) is None
            prev_p = cur_p
        assert passed_at is not None

    def test_final_cp_terminates_with_bonus(self):
        env = QuadEnv(quiet_config())
        m = free_esdf()
        cps = np.array([[0.8, 0.0, 1.0]])
        env.reset_scenario(m, cps, np.array([0.0, 0.0, 1.0]), seed=0)
        env.state.v_w = np.array([2.0, 0.0, 0.0])
        hover = env.base_params.m * env.base_params.g
        a0 = hover / (2.0 * env.base_params.f_rotor_max) - 1.0
        for _ in range(60):
            res = env.step(np.array([a0, 0.0, 0.0, 0.0]))
            if res.terminated:
                assert res.info["finished"]
                assert res.info["r_f"] == 300.0
                assert env.finished
                return
        pytest.fail("never reached the final control point")

    def test_collision_reward_and_termination(self):
        n = 200
        g = OccupancyGrid.empty(n, n, 0.1, origin=(-10, -10))
        g.cells[:, 110:] = True  # solid wall from x = 1.0
        m = build_esdf(g, 0.0)
        env = QuadEnv(quiet_config())
        env.reset_scenario(m, np.array([[3.0, 0.0, 1.0]]), np.array([0.0, 0.0, 1.0]), seed=0)
        env.state.v_w = np.array([3.0, 0.0, 0.0])
        hover = env.base_params.m * env.base_params.g
        a0 = hover / (2.0 * env.base_params.f_rotor_max) - 1.0
        for _ in range(80):
            res = env.step(np.array([a0, 0.0, 0.0, 0.0]))
            if res.terminated:
                assert res.info["collision_event"]
                assert res.info["collision"] == -600.0
                assert res.reward <= -600.0 + 50.0
                return
        pytest.fail("never collided")

    def test_rel_cp2_duplicates_final(self):
        env = QuadEnv(quiet_config())
        m = free_esdf()
        obs = env.reset_scenario(m, np.array([[2.0, 1.0, 1.0]]), np.array([0.0, 0.0, 1.0]))
        sl = obs_slices()
        np.testing.assert_array_equal(obs[sl["rel_cp1"]], obs[sl["rel_cp2"]])

    def test_nonfinite_action_rejected(self):
        env = QuadEnv(quiet_config())
        env.reset_scenario(free_esdf(), np.array([[2.0, 0.0, 1.0]]), np.array([0.0, 0.0, 1.0]))
        with pytest.raises(ValueError):
            env.step(np.array([np.nan, 0, 0, 0]))

    def test_out_of_range_action_clipped_and_flagged(self):
        env = QuadEnv(quiet_config())
        env.reset_scenario(free_esdf(), np.array([[2.0, 0.0, 1.0]]), np.array([0.0, 0.0, 1.0]))
        res = env.step(np.array([2.0, 0.0, 0.0, 0.0]))
        assert res.info["action_clipped"]

    def test_step_after_done_raises(self):
        env = QuadEnv(quiet_config(max_episode_steps=1))
        env.reset_scenario(free_esdf(), np.array([[5.0, 0.0, 1.0]]), np.array([0.0, 0.0, 1.0]))
        res = env.step(np.zeros(4))
        assert res.truncated
        with pytest.raises(RuntimeError):
            env.step(np.zeros(4))

    def test_sequence_determinism(self):
        cfg = EnvConfig(obstacle_count_min=1, obstacle_count_max=3)
        rng = np.random.default_rng(0)
        actions = rng.uniform(-1, 1, (50, 4))

        def run():
            env = QuadEnv(cfg)
            obs = [env.reset(seed=7)]
            rewards = []
            for a in actions:
                res = env.step(a)
                obs.append(res.obs)
                rewards.append(res.reward)
                if res.terminated or res.truncated:
                    break
            return np.array(rewards), np.vstack(obs)

        r1, o1 = run()
        r2, o2 = run()
        np.testing.assert_array_equal(r1, r2)
        np.testing.assert_array_equal(o1, o2)

    def test_delay_queue_identity_when_zero(self):
        # delay 0 must match an implementation with no queue at all:
        # compare against delay 1 primed with the same command stream shifted.
        cfg0 = quiet_config()
        env = QuadEnv(cfg0)
        env.reset_scenario(free_esdf(), np.array([[3.0, 0.0, 1.0]]),
                           np.array([0.0, 0.0, 1.0]), seed=0)
        states = []
        for _ in range(10):
            env.step(np.array([0.1, 0.05, -0.02, 0.01]))
            states.append(env.state.p_w.copy())
        # manual no-queue reference: identical env, same constant action
        env2 = QuadEnv(cfg0)
        env2.reset_scenario(free_esdf(), np.array([[3.0, 0.0, 1.0]]),
                            np.array([0.0, 0.0, 1.0]), seed=0)
        for i in range(10):
            env2.step(np.array([0.1, 0.05, -0.02, 0.01]))
            np.testing.assert_array_equal(env2.state.p_w, states[i])

    def test_violation_census_on_random_states(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            cur = make_state(p=rng.normal(0, 2, 3), v=rng.normal(0, 2.5, 3),
                             a=rng.normal(0, 4, 3), theta=rng.uniform(-1.5, 1.5, 3),
                             omega=rng.normal(0, 2, 3))
            _, bd = compute_reward(cur, cur, events_toward(rng.normal(0, 3, 3)), CFG)
            census = int(np.linalg.norm(cur.v_w) > 3.0) \
                + int(np.linalg.norm(cur.a_w) > 6.0) \
                + int(max(abs(cur.theta[0]), abs(cur.theta[1])) > 1.2)
            assert bd["r_d"] == -census
