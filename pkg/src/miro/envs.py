"""Toy pixel-observation control tasks with per-step randomized distractors.

Two tasks with analytically known dynamics:

* ``pointmass``: a 2-d point with velocity and drag inside the unit square,
  dense reward for proximity to a fixed goal, reflecting walls.
* ``pendulum``: torque-limited pendulum starting near upright (angle
  measured from upright), dense reward for staying up.

Observations are rendered images; the true low-dimensional state is hidden
from the agent but exposed here for tests and oracles.  Distractor sprites
are redrawn at fresh uniform positions every step from a random stream
that is independent of the dynamics stream, so the physics trajectory for
a fixed ``dynamics_seed`` does not depend on distractor settings.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

__all__ = [
    "EnvConfig",
    "TrueState",
    "StepResult",
    "reset",
    "render",
    "write_ppm",
    "action_dim",
    "transition",
    "state_reward",
]

TASKS = ("pointmass", "pendulum")

DT = 0.05
POINTMASS_DRAG = 0.95
POINTMASS_GOAL = (0.75, 0.5)
PENDULUM_GRAVITY = 10.0
PENDULUM_MAX_TORQUE = 2.0

# Distractor palette; sprites alternate square/disc by index.
DISTRACTOR_COLORS = (
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
    (1.0, 1.0, 0.0),
)
GOAL_COLOR = (1.0, 0.0, 1.0)
AGENT_COLOR = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class EnvConfig:
    task: str = "pendulum"
    image_size: int = 32
    channels: int = 3
    episode_len: int = 100
    distractors: int = 0
    dynamics_seed: int = 0
    distractor_seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.channels != 3:
            raise ConfigError("only 3-channel rendering is supported")
        if self.image_size < 8:
            raise ConfigError(f"image_size must be >= 8, got {self.image_size}")
        if self.episode_len < 1:
            raise ConfigError(f"episode_len must be >= 1, got {self.episode_len}")
        if self.distractors < 0:
            raise ConfigError(f"distractors must be >= 0, got {self.distractors}")


def action_dim(task: str) -> int:
    return 2 if task == "pointmass" else 1


@dataclass
class TrueState:
    """Hidden physical state; pointmass [x, y, vx, vy], pendulum [theta, theta_dot]."""

    task: str
    vec: np.ndarray

    def copy(self) -> "TrueState":
        return TrueState(self.task, self.vec.copy())


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool


def state_reward(state: TrueState) -> float:
    """Reward emitted when acting from ``state``; always in [0, 1]."""
    if state.task == "pointmass":
        pos = state.vec[:2]
        dist = float(np.hypot(pos[0] - POINTMASS_GOAL[0], pos[1] - POINTMASS_GOAL[1]))
        return max(0.0, 1.0 - dist / np.sqrt(2.0))
    return (float(np.cos(state.vec[0])) + 1.0) / 2.0


def transition(state: TrueState, action) -> TrueState:
    """One dynamics step (dt = 0.05, semi-implicit Euler); pure."""
    action = np.asarray(action, dtype=np.float64).reshape(-1)
    vec = state.vec.copy()
    if state.task == "pointmass":
        vel = vec[2:]
        vel += action * DT
        vel *= POINTMASS_DRAG
        pos = vec[:2] + vel * DT
        # Reflecting walls; loop in case a reflection lands outside again.
        for k in range(2):
            while pos[k] < 0.0 or pos[k] > 1.0:
                if pos[k] < 0.0:
                    pos[k] = -pos[k]
                    vel[k] = -vel[k]
                else:
                    pos[k] = 2.0 - pos[k]
                    vel[k] = -vel[k]
        vec[:2] = pos
        vec[2:] = vel
    else:
        theta, theta_dot = vec
        torque = PENDULUM_MAX_TORQUE * float(action[0])
        # theta measured from upright; upright is an unstable equilibrium
        theta_acc = 1.5 * PENDULUM_GRAVITY * np.sin(theta) + 3.0 * torque
        theta_dot = theta_dot + theta_acc * DT
        theta = theta + theta_dot * DT
        theta = (theta + np.pi) % (2.0 * np.pi) - np.pi
        vec[0] = theta
        vec[1] = theta_dot
    return TrueState(state.task, vec)


class Env:
    """Live environment handle; create via ``reset``."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self._dyn_rng = np.random.default_rng(config.dynamics_seed)
        self._dis_rng = np.random.default_rng(config.distractor_seed)
        self._steps = 0
        self._done = False
        if config.task == "pointmass":
            pos = self._dyn_rng.uniform(0.0, 1.0, size=2)
            self._state = TrueState("pointmass", np.array([pos[0], pos[1], 0.0, 0.0]))
        else:
            theta = self._dyn_rng.uniform(-0.1, 0.1)
            self._state = TrueState("pendulum", np.array([theta, 0.0]))
        self.last_distractor_positions = self._draw_distractors()
        self.observation = render(config, self._state, self.last_distractor_positions)

    def _draw_distractors(self) -> list[tuple[float, float]]:
        s = self.config.image_size - 1
        return [
            (float(self._dis_rng.uniform(0.0, s)), float(self._dis_rng.uniform(0.0, s)))
            for _ in range(self.config.distractors)
        ]

    def step(self, action) -> StepResult:
        if self._done:
            raise ContractError("step() called after the episode finished")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
        expected = action_dim(self.config.task)
        if a.shape != (expected,):
            raise ContractError(f"action has {a.shape[0]} dims, task {self.config.task!r} needs {expected}")
        reward = state_reward(self._state)
        self._state = transition(self._state, a)
        self._steps += 1
        self._done = self._steps >= self.config.episode_len
        self.last_distractor_positions = self._draw_distractors()
        self.observation = render(self.config, self._state, self.last_distractor_positions)
        return StepResult(self.observation, reward, self._done)

    def true_state(self) -> TrueState:
        return self._state.copy()


def reset(config: EnvConfig) -> tuple[Env, np.ndarray]:
    """Create a fresh environment and return it with the first frame."""
    env = Env(config)
    return env, env.observation


# ---------------------------------------------------------------------------
# rendering


def _paint_disc(img, row, col, radius, color):
    s = img.shape[1]
    rr, cc = np.ogrid[:s, :s]
    mask = (rr - row) ** 2 + (cc - col) ** 2 <= radius**2
    for ch in range(3):
        img[ch][mask] = color[ch]


def _paint_square(img, row, col, half, color):
    s = img.shape[1]
    rr, cc = np.ogrid[:s, :s]
    mask = (np.abs(rr - row) <= half) & (np.abs(cc - col) <= half)
    for ch in range(3):
        img[ch][mask] = color[ch]


def _agent_pixel(config: EnvConfig, state: TrueState) -> tuple[float, float]:
    s = config.image_size - 1
    if state.task == "pointmass":
        x, y = state.vec[0], state.vec[1]
        return (1.0 - y) * s, x * s
    theta = state.vec[0]
    center = s / 2.0
    radius = 0.35 * config.image_size
    return center - radius * np.cos(theta), center + radius * np.sin(theta)


def render(config: EnvConfig, state: TrueState, distractor_positions) -> np.ndarray:
    """Rasterize one frame: background, distractors, goal, then agent.

    Deterministic; all pixels in [0, 1].  Distractor positions are pixel
    coordinates (row, col is derived from the tuple's (x, y) = (col, row)
    ordering used by the env).
    """
    s = config.image_size
    img = np.zeros((3, s, s), dtype=np.float32)
    side = max(2, round(s / 8))
    for i, (px, py) in enumerate(distractor_positions):
        color = DISTRACTOR_COLORS[i % len(DISTRACTOR_COLORS)]
        if i % 2 == 0:
            _paint_square(img, py, px, side / 2.0, color)
        else:
            _paint_disc(img, py, px, side / 2.0, color)
    if state.task == "pointmass":
        gs = config.image_size - 1
        goal_row, goal_col = (1.0 - POINTMASS_GOAL[1]) * gs, POINTMASS_GOAL[0] * gs
        _paint_square(img, goal_row, goal_col, max(1.0, s / 16.0), GOAL_COLOR)
    row, col = _agent_pixel(config, state)
    _paint_disc(img, row, col, max(1.6, s / 16.0), AGENT_COLOR)
    return img


def write_ppm(image: np.ndarray, path) -> None:
    """Dump one observation as a binary PPM (P6) file."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractError(f"expected a (3,H,W) image, got shape {image.shape}")
    h, w = image.shape[1], image.shape[2]
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.transpose(1, 2, 0).tobytes())


def derive_env_config(config: EnvConfig, *key: int) -> EnvConfig:
    """Seeds derived from the base seeds and an index key (e.g. run seed,
    episode index); keeps episodes distinct but fully reproducible."""
    dyn = np.random.SeedSequence(entropy=config.dynamics_seed, spawn_key=tuple(key))
    dis = np.random.SeedSequence(entropy=config.distractor_seed, spawn_key=tuple(key))
    return dataclasses.replace(
        config,
        dynamics_seed=int(dyn.generate_state(1)[0]),
        distractor_seed=int(dis.generate_state(1)[0]),
    )
