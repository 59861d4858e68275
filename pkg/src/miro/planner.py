"""Cross-entropy-method trajectory optimisation wrapped in MPC.

The planner works against a small batched model interface (``step`` /
``reward``, see ``model.PlanningModel``), so it can optimise over the
learned latent model or over synthetic test models interchangeably.
Rollouts propagate distribution means by default; sampled rollouts are a
config switch.

Candidate returns are undiscounted sums of the reward head over the
rolled-out states (the start state's reward is the same for every
candidate and is omitted).  Each refit keeps the previous elites in the
candidate pool, which makes the elite mean return non-decreasing across
iterations for any fixed deterministic model.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from . import diffcore as dc
from .model import LatentBelief, ModelParams, advance_belief, as_planning_model

__all__ = [
    "CEMConfig",
    "ActionSequence",
    "PlanDistribution",
    "evaluate_sequences",
    "select_elites",
    "cem_plan",
    "mpc_act",
]


@dataclass(frozen=True)
class CEMConfig:
    horizon: int = 12
    population: int = 100
    elites: int = 10
    iterations: int = 5
    init_std: float = 1.0
    action_low: float = -1.0
    action_high: float = 1.0
    std_floor: float = 1e-3
    sampled_rollouts: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not (1 <= self.elites <= self.population):
            raise ConfigError(f"need 1 <= elites <= population, got {self.elites}/{self.population}")
        if self.std_floor <= 0:
            raise ConfigError("std_floor must be positive")


@dataclass
class ActionSequence:
    actions: np.ndarray  # (horizon, action_dim), within bounds


@dataclass
class PlanDistribution:
    mean: np.ndarray  # (horizon, action_dim)
    std: np.ndarray   # (horizon, action_dim), floored away from zero


def _as_stack(seqs) -> np.ndarray:
    if isinstance(seqs, np.ndarray):
        stack = seqs
    else:
        rows = [s.actions if isinstance(s, ActionSequence) else np.asarray(s) for s in seqs]
        if not rows:
            raise ContractError("evaluate_sequences needs at least one sequence")
        stack = np.stack(rows)
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ContractError(f"expected (N, horizon, action_dim) candidates, got shape {stack.shape}")
    return np.asarray(stack, dtype=np.float64)


def evaluate_sequences(model, s0, seqs, rng=None) -> np.ndarray:
    """Return of every action sequence from the same start state.

    Rolls the model open loop and sums the predicted reward over the
    horizon's successor states, gamma = 1.  ``rng`` switches to sampled
    rollouts; None propagates means.  A non-finite return raises
    ``NumericError`` naming the offending candidate.
    """
    stack = _as_stack(seqs)
    n, horizon, _ = stack.shape
    s = np.tile(np.asarray(s0, dtype=np.float64).reshape(1, -1), (n, 1))
    returns = np.zeros(n)
    with dc.finite_checks(False):
        for t in range(horizon):
            noise = rng.standard_normal((n, s.shape[1])) if rng is not None else None
            s = np.asarray(model.step(s, stack[:, t], noise), dtype=np.float64)
            returns += np.asarray(model.reward(s), dtype=np.float64).reshape(n)
    bad = np.flatnonzero(~np.isfinite(returns))
    if bad.size:
        raise NumericError(f"non-finite return for candidate {int(bad[0])}")
    return returns


def select_elites(candidates: np.ndarray, returns: np.ndarray, count: int) -> np.ndarray:
    """Top candidates by return; ties resolved toward the lower index."""
    order = np.argsort(-returns, kind="stable")
    return candidates[order[:count]]


def cem_plan(model, s0, config: CEMConfig, seed: int) -> tuple[ActionSequence, PlanDistribution]:
    """Iteratively refit a per-timestep Gaussian to the best sequences.

    Deterministic given (model, s0, config, seed).  The previous elites
    join each new population, so the best-so-far set can only improve.
    Returns the final elite-mean sequence and the refit distribution.
    """
    rng = np.random.default_rng(seed)
    da = model.action_dim
    mean = np.zeros((config.horizon, da))
    std = np.full((config.horizon, da), float(config.init_std))
    carried = np.empty((0, config.horizon, da))
    for _ in range(config.iterations):
        eps = rng.standard_normal((config.population, config.horizon, da))
        fresh = np.clip(mean + std * eps, config.action_low, config.action_high)
        pool = np.concatenate([fresh, carried]) if carried.size else fresh
        sample_rng = np.random.default_rng(rng.integers(2**63)) if config.sampled_rollouts else None
        returns = evaluate_sequences(model, s0, pool, rng=sample_rng)
        elite = select_elites(pool, returns, config.elites)
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), config.std_floor)
        carried = elite
    return ActionSequence(mean.copy()), PlanDistribution(mean, std)


def mpc_act(params: ModelParams, belief: LatentBelief, obs_next, config: CEMConfig,
            seed: int) -> tuple[np.ndarray, LatentBelief]:
    """Plan from the current belief and return only the first action.

    When ``obs_next`` (the frame that followed the previously executed
    action) is given, the belief is first advanced: predict through the
    pending action, then filter the new encoding.  The returned belief
    records the planned action as pending; callers that perturb the action
    before executing it (exploration) should overwrite ``pending_action``
    with what they actually applied.
    """
    if obs_next is not None:
        if belief.pending_action is None:
            raise ContractError("belief has no pending action to advance through")
        belief = advance_belief(params, belief, belief.pending_action, obs_next)
    plan, _ = cem_plan(as_planning_model(params), belief.sample.data, config, seed)
    action = plan.actions[0].copy()
    new_belief = dataclasses.replace(belief, pending_action=action)
    return action, new_belief
