"""Environment tests: dynamics hand-evaluations, rendering audits,
seed discipline, and the random-policy sanity band."""

import dataclasses

import numpy as np
import pytest

from miro import envs
from miro.errors import ConfigError, ContractError


def make(task="pendulum", **kw):
    return envs.EnvConfig(task=task, **kw)


class TestConfig:
    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            envs.EnvConfig(task="cartpole")

    def test_negative_distractors(self):
        with pytest.raises(ConfigError):
            envs.EnvConfig(distractors=-1)


class TestReset:
    def test_same_seeds_identical_first_frame(self):
        cfg = make("pointmass", distractors=2, dynamics_seed=4, distractor_seed=9)
        _, obs1 = envs.reset(cfg)
        _, obs2 = envs.reset(cfg)
        assert np.array_equal(obs1, obs2)

    def test_no_distractors_background_black(self):
        cfg = make("pointmass", distractors=0, dynamics_seed=1)
        env, obs = envs.reset(cfg)
        # Remove agent and goal footprints; everything else must be zero.
        state = env.true_state()
        bare = envs.render(cfg, state, [])
        sprite_mask = bare.sum(axis=0) > 0
        goalless = obs.copy()
        goalless[:, sprite_mask] = 0.0
        assert float(np.abs(goalless).sum()) == 0.0

    def test_pendulum_initial_state(self):
        for seed in range(20):
            env, _ = envs.reset(make("pendulum", dynamics_seed=seed))
            s = env.true_state()
            assert abs(s.vec[0]) <= 0.1
            assert s.vec[1] == 0.0

    def test_pointmass_initial_state(self):
        env, _ = envs.reset(make("pointmass", dynamics_seed=3))
        s = env.true_state()
        assert 0.0 <= s.vec[0] <= 1.0 and 0.0 <= s.vec[1] <= 1.0
        assert s.vec[2] == 0.0 and s.vec[3] == 0.0

    def test_two_distractors_present(self):
        cfg = make("pointmass", distractors=2, dynamics_seed=2, distractor_seed=5)
        env, obs = envs.reset(cfg)
        plain = envs.render(cfg, env.true_state(), [])
        diff = np.any(obs != plain, axis=0)
        # Differing pixels must lie inside the two recorded sprite
        # footprints, and each sprite must contribute at least one pixel.
        assert len(env.last_distractor_positions) == 2
        footprint = np.zeros_like(diff)
        s = cfg.image_size
        side = max(2, round(s / 8))
        rr, cc = np.ogrid[:s, :s]
        per_sprite_px = []
        for i, (px, py) in enumerate(env.last_distractor_positions):
            if i % 2 == 0:
                m = (np.abs(rr - py) <= side / 2) & (np.abs(cc - px) <= side / 2)
            else:
                m = (rr - py) ** 2 + (cc - px) ** 2 <= (side / 2) ** 2
            footprint |= m
            per_sprite_px.append(int(m.sum()))
        assert not np.any(diff & ~footprint)
        assert all(n > 0 for n in per_sprite_px)


class TestStep:
    def test_pendulum_equilibrium(self):
        state = envs.TrueState("pendulum", np.array([0.0, 0.0]))
        assert envs.state_reward(state) == 1.0
        nxt = envs.transition(state, [0.0])
        np.testing.assert_array_equal(nxt.vec, state.vec)

    def test_pointmass_reward_at_goal(self):
        state = envs.TrueState("pointmass", np.array([0.75, 0.5, 0.0, 0.0]))
        assert envs.state_reward(state) == 1.0

    def test_pointmass_velocity_hand_evaluation(self):
        # v = (0 + 1 * 0.05) * 0.95 = 0.0475 exactly, then x += v * dt
        state = envs.TrueState("pointmass", np.array([0.2, 0.2, 0.0, 0.0]))
        nxt = envs.transition(state, [1.0, 0.0])
        np.testing.assert_allclose(nxt.vec[2:], [0.0475, 0.0], atol=1e-12)
        np.testing.assert_allclose(nxt.vec[:2], [0.2 + 0.0475 * 0.05, 0.2], atol=1e-12)

    def test_true_state_unaffected_by_rendering(self):
        env, _ = envs.reset(make("pendulum", dynamics_seed=8))
        before = env.true_state().vec.copy()
        envs.render(env.config, env.true_state(), [])
        envs.render(env.config, env.true_state(), [(3.0, 4.0)])
        np.testing.assert_array_equal(env.true_state().vec, before)

    def test_episode_terminates_exactly_at_episode_len(self):
        cfg = make("pendulum", episode_len=7)
        env, _ = envs.reset(cfg)
        for t in range(7):
            res = env.step([0.0])
            assert res.done == (t == 6)
        with pytest.raises(ContractError):
            env.step([0.0])

    def test_action_dim_checked(self):
        env, _ = envs.reset(make("pendulum"))
        with pytest.raises(ContractError):
            env.step([0.0, 1.0])

    def test_rewards_bounded_over_random_steps(self):
        rng = np.random.default_rng(0)
        for task in ("pointmass", "pendulum"):
            cfg = make(task, episode_len=2500, distractors=1, dynamics_seed=1)
            env, _ = envs.reset(cfg)
            for _ in range(2500):
                res = env.step(rng.uniform(-2, 2, envs.action_dim(task)))
                assert 0.0 <= res.reward <= 1.0
                assert res.observation.min() >= 0.0 and res.observation.max() <= 1.0

    def test_dynamics_independent_of_distractors(self):
        rng = np.random.default_rng(42)
        actions = rng.uniform(-1, 1, size=(30, 1))
        trajectories = []
        for nd in (0, 2, 4):
            cfg = make("pendulum", distractors=nd, dynamics_seed=11, distractor_seed=nd + 1)
            env, _ = envs.reset(cfg)
            tr = [env.true_state().vec.copy()]
            for a in actions:
                env.step(a)
                tr.append(env.true_state().vec.copy())
            trajectories.append(np.stack(tr))
        np.testing.assert_array_equal(trajectories[0], trajectories[1])
        np.testing.assert_array_equal(trajectories[0], trajectories[2])

    def test_frames_differ_only_in_distractor_footprints(self):
        # Static pointmass (velocity 0, zero action) with 2 distractors:
        # consecutive frames may differ only where old or new sprites sit.
        cfg = make("pointmass", distractors=2, dynamics_seed=5, distractor_seed=3)
        env, obs0 = envs.reset(cfg)
        pos_old = list(env.last_distractor_positions)
        res = env.step([0.0, 0.0])
        pos_new = list(env.last_distractor_positions)
        diff = np.any(res.observation != obs0, axis=0)
        s = cfg.image_size
        side = max(2, round(s / 8))
        rr, cc = np.ogrid[:s, :s]
        allowed = np.zeros((s, s), dtype=bool)
        for i, (px, py) in enumerate(pos_old + pos_new):
            allowed |= (np.abs(rr - py) <= side / 2 + 0.5) & (np.abs(cc - px) <= side / 2 + 0.5)
        assert not np.any(diff & ~allowed)


class TestRender:
    def test_deterministic(self):
        cfg = make("pendulum")
        state = envs.TrueState("pendulum", np.array([0.4, 0.0]))
        a = envs.render(cfg, state, [(5.0, 6.0), (20.0, 10.0)])
        b = envs.render(cfg, state, [(5.0, 6.0), (20.0, 10.0)])
        assert np.array_equal(a, b)

    def test_pixels_in_unit_interval(self):
        cfg = make("pointmass", distractors=4)
        env, obs = envs.reset(cfg)
        assert obs.min() >= 0.0 and obs.max() <= 1.0

    def test_agent_centroid_tracks_state(self):
        # Centroid-extraction oracle: mean position of pure-white pixels.
        rng = np.random.default_rng(17)
        cfg = make("pointmass")
        s = cfg.image_size - 1
        for _ in range(25):
            x, y = rng.uniform(0.2, 0.8, size=2)
            state = envs.TrueState("pointmass", np.array([x, y, 0.0, 0.0]))
            img = envs.render(cfg, state, [])
            white = (img[0] == 1.0) & (img[1] == 1.0) & (img[2] == 1.0)
            rows, cols = np.nonzero(white)
            assert len(rows) > 0
            assert abs(rows.mean() - (1.0 - y) * s) <= 1.0
            assert abs(cols.mean() - x * s) <= 1.0

    def test_pendulum_bob_centroid(self):
        cfg = make("pendulum")
        for theta in (-1.2, 0.0, 0.7, 2.5):
            state = envs.TrueState("pendulum", np.array([theta, 0.0]))
            img = envs.render(cfg, state, [])
            white = (img[0] == 1.0) & (img[1] == 1.0) & (img[2] == 1.0)
            rows, cols = np.nonzero(white)
            center = (cfg.image_size - 1) / 2.0
            radius = 0.35 * cfg.image_size
            assert abs(rows.mean() - (center - radius * np.cos(theta))) <= 1.0
            assert abs(cols.mean() - (center + radius * np.sin(theta))) <= 1.0


class TestPpm:
    def test_roundtrip(self, tmp_path):
        cfg = make("pointmass", distractors=2, distractor_seed=1)
        _, obs = envs.reset(cfg)
        path = tmp_path / "frame.ppm"
        envs.write_ppm(obs, path)
        raw = path.read_bytes()
        header, rest = raw.split(b"\n", 1)
        assert header == b"P6"
        dims, rest = rest.split(b"\n", 1)
        w, h = map(int, dims.split())
        maxval, pixels = rest.split(b"\n", 1)
        assert (w, h, maxval) == (32, 32, b"255")
        arr = np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)
        np.testing.assert_array_equal(arr, np.clip(np.rint(obs * 255), 0, 255).transpose(1, 2, 0))

    def test_bad_shape_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            envs.write_ppm(np.zeros((32, 32)), tmp_path / "x.ppm")


def test_random_policy_sanity_band():
    """Mean random-policy return on pendulum sits inside the headroom band
    [0.2, 0.8] * episode_len over 100 episodes."""
    rng = np.random.default_rng(2024)
    returns = []
    for ep in range(100):
        cfg = envs.derive_env_config(make("pendulum", dynamics_seed=100, distractor_seed=7), ep)
        env, _ = envs.reset(cfg)
        total = 0.0
        done = False
        while not done:
            res = env.step(rng.uniform(-1, 1, size=1))
            total += res.reward
            done = res.done
        returns.append(total)
    mean = float(np.mean(returns))
    assert 0.2 * 100 <= mean <= 0.8 * 100


def test_derived_configs_vary_but_reproduce():
    base = make("pendulum", dynamics_seed=5, distractor_seed=6)
    a0 = envs.derive_env_config(base, 0)
    a1 = envs.derive_env_config(base, 1)
    assert a0.dynamics_seed != a1.dynamics_seed
    assert a0 == envs.derive_env_config(base, 0)
