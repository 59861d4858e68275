"""Outer training loop: replay storage, chunk sampling, gradient updates,
and the alternation between model learning and data collection.

A run is: a seed phase of random-policy episodes, then repeated rounds of
gradient steps on replayed chunks followed by one MPC episode collected
with exploration noise.  Everything is driven by explicit seeds; an
identical configuration reproduces the metrics stream bit for bit.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import envs
from .errors import DataError, NumericError
from .model import (
    LossBreakdown,
    ModelDims,
    ModelParams,
    SequenceBatch,
    init_params,
    initial_belief,
    miro_loss,
    recon_loss,
    save_params,
)
from .planner import CEMConfig, mpc_act

__all__ = [
    "Episode",
    "ReplayBuffer",
    "OptimizerState",
    "TrainSchedule",
    "StepMetrics",
    "init_optimizer",
    "clip_gradients",
    "adam_update",
    "train_step",
    "collect_episode",
    "sample_chunks",
    "run_training",
]

RANDOM_POLICY = math.inf  # explore_std sentinel: act uniformly at random
GRAD_CLIP_NORM = 100.0


@dataclass
class Episode:
    """T+1 observations, T actions, T rewards; rewards in [0, 1]."""

    observations: list
    actions: list
    rewards: list

    def __post_init__(self):
        if len(self.observations) != len(self.actions) + 1 or len(self.actions) != len(self.rewards):
            raise DataError(
                f"inconsistent episode lengths: {len(self.observations)} obs, "
                f"{len(self.actions)} actions, {len(self.rewards)} rewards"
            )

    @property
    def length(self) -> int:
        return len(self.actions)

    def episode_return(self) -> float:
        return float(sum(self.rewards))


class ReplayBuffer:
    """Append-only episode store; sampling never mutates contents."""

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self.episodes: list[Episode] = []

    def add(self, episode: Episode) -> None:
        self.episodes.append(episode)
        if self.capacity is not None and len(self.episodes) > self.capacity:
            self.episodes.pop(0)

    def __len__(self) -> int:
        return len(self.episodes)


def sample_chunks(buffer: ReplayBuffer, batch_size: int, chunk_len: int, seed: int) -> SequenceBatch:
    """Uniformly random (episode, start offset) pairs of contiguous chunks.

    A chunk is L consecutive (observation, action, reward) triples; the
    last action/reward of an episode can appear only as a chunk's tail.
    """
    eligible = [ep for ep in buffer.episodes if ep.length >= chunk_len]
    if not eligible:
        raise DataError(f"no stored episode has at least {chunk_len} steps")
    rng = np.random.default_rng(seed)
    obs, acts, rews = [], [], []
    for _ in range(batch_size):
        ep = eligible[int(rng.integers(len(eligible)))]
        start = int(rng.integers(ep.length - chunk_len + 1))
        obs.append(np.stack(ep.observations[start : start + chunk_len]))
        acts.append(np.stack(ep.actions[start : start + chunk_len]))
        rews.append(np.asarray(ep.rewards[start : start + chunk_len], dtype=np.float64))
    return SequenceBatch(np.stack(obs), np.stack(acts), np.stack(rews))


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class OptimizerState:
    """Adaptive-moment estimation state (first/second moments per parameter)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_optimizer(store: dc.ParamStore, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    opt = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, t in store.items():
        opt.m[name] = np.zeros_like(t.data)
        opt.v[name] = np.zeros_like(t.data)
    return opt


def clip_gradients(store: dc.ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``;
    returns the pre-clip norm."""
    total = 0.0
    for _, t in store.items():
        total += float(np.sum(np.square(t.grad, dtype=np.float64)))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for _, t in store.items():
            t.grad *= scale
    return norm


def adam_update(store: dc.ParamStore, opt: OptimizerState) -> None:
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for name, t in store.items():
        g = t.grad
        m = opt.m[name]
        v = opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * np.square(g)
        update = (opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)).astype(t.data.dtype)
        t.data -= update


@dataclass
class StepMetrics:
    total: float
    nce: dict
    kl_filter: float
    reward_nll: float
    recon: float | None
    grad_norm: float

    def nce_sum(self) -> float:
        return float(sum(self.nce.values())) if self.nce else 0.0


def train_step(params: ModelParams, opt: OptimizerState, batch: SequenceBatch,
               variant: str, lam1: float, lam2: float, horizons=None, rng=None) -> StepMetrics:
    """One gradient step: loss, backward, norm clip at 100, Adam update."""
    params.store.zero_grads()
    if variant == "miro":
        bd = miro_loss(params, batch, lam1, lam2, horizons=horizons, rng=rng)
    elif variant == "recon":
        bd = recon_loss(params, batch, lam1, lam2, rng=rng)
    else:
        raise DataError(f"unknown variant {variant!r}; expected 'miro' or 'recon'")
    _ensure_finite_breakdown(bd)
    dc.backward(bd.total, params.store)
    norm = clip_gradients(params.store, GRAD_CLIP_NORM)
    adam_update(params.store, opt)
    return StepMetrics(
        total=bd.total_value(),
        nce=dict(bd.nce),
        kl_filter=bd.kl_filter,
        reward_nll=bd.reward_nll,
        recon=bd.recon,
        grad_norm=norm,
    )


def _ensure_finite_breakdown(bd: LossBreakdown) -> None:
    parts = {"total": bd.total_value(), "kl_filter": bd.kl_filter, "reward_nll": bd.reward_nll}
    parts.update({f"nce_h{h}": v for h, v in bd.nce.items()})
    if bd.recon is not None:
        parts["recon"] = bd.recon
    if not all(math.isfinite(v) for v in parts.values()):
        raise NumericError(f"non-finite loss breakdown: {parts}")


# ---------------------------------------------------------------------------
# data collection


def collect_episode(env: envs.Env, params: ModelParams | None, planner_config: CEMConfig | None,
                    explore_std: float, seed: int) -> Episode:
    """Roll one full episode and record raw observations/actions/rewards.

    With ``explore_std == RANDOM_POLICY`` actions are uniform in [-1, 1]
    and the model is not consulted (seed-phase behaviour).  Otherwise the
    MPC controller plans each step and Gaussian noise of the given std is
    added to the action before clamping; the belief is advanced with the
    action actually executed.
    """
    rng = np.random.default_rng(seed)
    da = envs.action_dim(env.config.task)
    observations = [env.observation.copy()]
    actions: list[np.ndarray] = []
    rewards: list[float] = []
    random_mode = explore_std == RANDOM_POLICY
    belief = None if random_mode else initial_belief(params, env.observation)
    prev_obs = None
    done = False
    while not done:
        if random_mode:
            action = rng.uniform(-1.0, 1.0, size=da)
        else:
            plan_seed = int(rng.integers(2**63))
            action, belief = mpc_act(params, belief, prev_obs, planner_config, plan_seed)
            if explore_std > 0:
                action = np.clip(action + rng.normal(0.0, explore_std, size=action.shape), -1.0, 1.0)
            belief = dataclasses.replace(belief, pending_action=action)
        res = env.step(action)
        observations.append(res.observation.copy())
        actions.append(np.asarray(action, dtype=np.float64).copy())
        rewards.append(res.reward)
        prev_obs = res.observation
        done = res.done
    return Episode(observations, actions, rewards)


# ---------------------------------------------------------------------------
# the full schedule


@dataclass(frozen=True)
class TrainSchedule:
    seed_episodes: int = 5
    collect_episodes: int = 50
    steps_per_episode: int = 100
    batch_size: int = 16
    chunk_len: int = 16
    explore_std: float = 0.3
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    replay_capacity: int | None = None


def _derive(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)).generate_state(1)[0])


def run_training(env_config: envs.EnvConfig, dims: ModelDims, planner_config: CEMConfig,
                 schedule: TrainSchedule, variant: str, lam1: float, lam2: float,
                 seed: int, sink=None, checkpoint_path=None, clock=None) -> list[dict]:
    """Execute the full schedule for one seed; returns the event log.

    Events are dicts with ``event`` in {"train", "episode"}; ``sink`` (if
    given) receives each event as it happens so partial logs survive an
    abort.  ``clock`` supplies wall-time milliseconds; the default reports
    zero so reruns of the same configuration are byte-identical.
    """
    events: list[dict] = []
    clock = clock or (lambda: 0.0)

    def emit(row: dict) -> None:
        events.append(row)
        if sink is not None:
            sink(row)

    params = init_params(dims, seed=_derive(seed, 0), dtype=np.float32)
    opt = init_optimizer(params.store, lr=schedule.learning_rate, beta1=schedule.adam_beta1,
                         beta2=schedule.adam_beta2, eps=schedule.adam_eps)
    buffer = ReplayBuffer(capacity=schedule.replay_capacity)

    episode_idx = 0
    for i in range(schedule.seed_episodes):
        env, _ = envs.reset(envs.derive_env_config(env_config, seed, episode_idx))
        ep = collect_episode(env, None, None, RANDOM_POLICY, seed=_derive(seed, 1, i))
        buffer.add(ep)
        emit({"event": "episode", "step": 0, "episode_idx": episode_idx,
              "return": ep.episode_return(), "wall_ms": clock()})
        episode_idx += 1

    global_step = 0
    for it in range(schedule.collect_episodes):
        for j in range(schedule.steps_per_episode):
            batch = sample_chunks(buffer, schedule.batch_size, schedule.chunk_len,
                                  seed=_derive(seed, 2, it, j))
            rng = np.random.default_rng(_derive(seed, 3, it, j))
            sm = train_step(params, opt, batch, variant, lam1, lam2,
                            horizons=dims.nce_horizons, rng=rng)
            emit({"event": "train", "step": global_step, "episode_idx": episode_idx,
                  "total": sm.total, "nce": sm.nce_sum(), "kl_filter": sm.kl_filter,
                  "reward_nll": sm.reward_nll, "recon": sm.recon, "wall_ms": clock()})
            global_step += 1
        env, _ = envs.reset(envs.derive_env_config(env_config, seed, episode_idx))
        ep = collect_episode(env, params, planner_config, schedule.explore_std,
                             seed=_derive(seed, 4, it))
        buffer.add(ep)
        emit({"event": "episode", "step": global_step, "episode_idx": episode_idx,
              "return": ep.episode_return(), "wall_ms": clock()})
        episode_idx += 1

    if checkpoint_path is not None:
        save_params(params.store, checkpoint_path)
    return events
