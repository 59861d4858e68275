"""Latent world model and its two training objectives.

The model is four learned functions plus a set of bilinear critics:

* encoder: image -> deterministic feature vector z (no distributional
  assumption on z),
* dynamics: (latent state, action) -> Gaussian over the next latent,
* filter: (encoding, prior belief) -> Gaussian posterior belief,
* reward head: latent state -> scalar mean of a unit-variance Gaussian,
* critics: one bilinear score matrix per prediction horizon, pairing an
  open-loop latent prediction with an encoding.

The contrastive objective scores each sequence's own future encoding
against the time-aligned encodings of the other sequences in the batch
and is combined with a filter-consistency KL term and a reward
log-likelihood term.  The reconstruction baseline swaps the contrastive
term for a pixel decoder under the same KL/reward structure.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import DiagGaussian, ParamStore, Tensor
from .errors import ConfigError, ContractError, InvariantError, ShapeError

__all__ = [
    "ModelDims",
    "ModelParams",
    "LatentBelief",
    "SequenceBatch",
    "LossBreakdown",
    "init_params",
    "encode",
    "predict",
    "filter_belief",
    "predict_reward",
    "open_loop_rollout",
    "nce_term",
    "miro_loss",
    "decode",
    "recon_loss",
    "initial_belief",
    "advance_belief",
    "as_planning_model",
    "save_params",
    "load_params",
]

LOG_STD_LO = -5.0
LOG_STD_HI = 2.0


@dataclass(frozen=True)
class ModelDims:
    """Architecture hyper-parameters; every extent the model math needs."""

    image_size: int = 32
    channels: int = 3
    action_dim: int = 1
    n_z: int = 30
    n_s: int = 30
    hidden: int = 64
    conv_channels: tuple = (32, 64, 64)
    kernel: int = 4
    conv_stride: int = 2
    nce_horizons: tuple = (1, 2, 3)
    decoder: bool = False
    # Decoder stage widths; None derives a thinned mirror of the encoder
    # stack (full encoder widths at decoder resolutions are CPU-hostile).
    decoder_widths: tuple | None = None

    def conv_output_side(self) -> int:
        side = self.image_size
        for _ in self.conv_channels:
            side = (side - self.kernel) // self.conv_stride + 1
            if side < 1:
                raise ConfigError(
                    f"conv stack collapses a {self.image_size}px image below 1px; "
                    f"reduce conv_channels or kernel"
                )
        return side

    def encoder_flat(self) -> int:
        return self.conv_channels[-1] * self.conv_output_side() ** 2

    def decoder_base_side(self) -> int:
        factor = 2 ** len(self.conv_channels)
        if self.image_size % factor != 0:
            raise ConfigError(
                f"decoder needs image_size divisible by {factor} "
                f"(one 2x resolution gain per conv stage), got {self.image_size}"
            )
        return self.image_size // factor

    def decoder_channels(self) -> list:
        # Last stage emits 4x the image channels for the sub-pixel rearrange.
        if self.decoder_widths is not None:
            chain = list(self.decoder_widths)
        else:
            chain = [max(4, c // 4) for c in list(reversed(self.conv_channels))[1:]]
        return chain + [self.channels * 4]

    def __post_init__(self):
        if not self.nce_horizons:
            raise ConfigError("nce_horizons must be non-empty")
        if any(h < 1 for h in self.nce_horizons):
            raise ConfigError(f"nce horizons must be >= 1, got {self.nce_horizons}")
        self.conv_output_side()
        if self.decoder:
            self.decoder_base_side()
            if len(self.decoder_channels()) != len(self.conv_channels):
                raise ConfigError(
                    f"decoder needs {len(self.conv_channels)} stage widths including the "
                    f"output channels, got {self.decoder_channels()}"
                )


@dataclass
class ModelParams:
    dims: ModelDims
    store: ParamStore

    @property
    def dtype(self):
        return self.store.dtype


@dataclass
class LatentBelief:
    """Filtered belief: the posterior distribution and a concrete sample
    drawn from it.  ``pending_action`` carries the most recently executed
    action so the next observation can advance the belief."""

    dist: DiagGaussian
    sample: Tensor
    pending_action: np.ndarray | None = None


@dataclass
class SequenceBatch:
    """B contiguous subsequences of length L of (observation, action, reward)."""

    obs: np.ndarray      # (B, L, C, S, S)
    actions: np.ndarray  # (B, L, action_dim)
    rewards: np.ndarray  # (B, L)

    def __post_init__(self):
        if self.obs.ndim != 5 or self.actions.ndim != 3 or self.rewards.ndim != 2:
            raise ShapeError(
                f"batch arrays have wrong ranks: obs {self.obs.shape}, "
                f"actions {self.actions.shape}, rewards {self.rewards.shape}"
            )
        if not (self.obs.shape[:2] == self.actions.shape[:2] == self.rewards.shape[:2]):
            raise ShapeError("batch leading (B, L) extents disagree")

    @property
    def batch_size(self) -> int:
        return self.obs.shape[0]

    @property
    def seq_len(self) -> int:
        return self.obs.shape[1]


@dataclass
class LossBreakdown:
    """One loss evaluation: the minimized scalar node plus its parts.

    ``total`` stays a graph node so callers can run backward on it; the
    component fields are plain floats for logging.  The bookkeeping
    identity holds: total = -sum(nce.values()) + lam1 * kl_filter
    + lam2 * reward_nll (+ recon in baseline mode, where nce is empty).
    """

    total: Tensor
    nce: dict = field(default_factory=dict)
    kl_filter: float = 0.0
    reward_nll: float = 0.0
    recon: float | None = None

    def total_value(self) -> float:
        return float(self.total.data)

    def nce_sum(self) -> float:
        return float(sum(self.nce.values())) if self.nce else 0.0


# ---------------------------------------------------------------------------
# initialisation


def init_params(dims: ModelDims, seed: int = 0, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)

    def dense(name, fan_in, fan_out):
        store.add(f"{name}.w", rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
        store.add(f"{name}.b", np.zeros(fan_out))

    c_in = dims.channels
    for i, c_out in enumerate(dims.conv_channels):
        fan = c_in * dims.kernel * dims.kernel
        store.add(f"enc.conv{i}.w", rng.standard_normal((c_out, c_in, dims.kernel, dims.kernel)) / np.sqrt(fan))
        store.add(f"enc.conv{i}.b", np.zeros(c_out))
        c_in = c_out
    dense("enc.fc", dims.encoder_flat(), dims.n_z)

    dense("dyn.h", dims.n_s + dims.action_dim, dims.hidden)
    dense("dyn.out", dims.hidden, 2 * dims.n_s)
    dense("fil.h", dims.n_z + 2 * dims.n_s, dims.hidden)
    dense("fil.out", dims.hidden, 2 * dims.n_s)
    dense("rew.h", dims.n_s, dims.hidden)
    dense("rew.out", dims.hidden, 1)

    for h in dims.nce_horizons:
        store.add(f"critic.h{h}.w", rng.standard_normal((dims.n_s, dims.n_z)) / np.sqrt(dims.n_s))

    if dims.decoder:
        base = dims.decoder_base_side()
        c0 = dims.conv_channels[-1]
        dense("dec.fc", dims.n_s, c0 * base * base)
        c_in = c0
        for i, c_out in enumerate(dims.decoder_channels()):
            fan = c_in * 9
            store.add(f"dec.conv{i}.w", rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(fan))
            store.add(f"dec.conv{i}.b", np.zeros(c_out))
            c_in = c_out

    return ModelParams(dims, store)


# ---------------------------------------------------------------------------
# forward pieces


def _as_rows(x, dtype, width, what) -> tuple[Tensor, bool]:
    t = x if isinstance(x, Tensor) else dc.constant(np.asarray(x), dtype)
    if t.ndim == 1:
        if t.shape[0] != width:
            raise ShapeError(f"{what} has length {t.shape[0]}, expected {width}")
        return dc.reshape(t, (1, width)), True
    if t.ndim != 2 or t.shape[1] != width:
        raise ShapeError(f"{what} has shape {t.shape}, expected (B, {width})")
    return t, False


def _dense(store, name, x):
    return dc.add(dc.matmul(x, store[f"{name}.w"]), store[f"{name}.b"])


def _mlp(store, prefix, x):
    h = dc.elu(_dense(store, f"{prefix}.h", x))
    return _dense(store, f"{prefix}.out", h)


def _dist_head(out: Tensor, n: int) -> DiagGaussian:
    mean = dc.narrow(out, 1, 0, n)
    log_std = dc.clamp(dc.narrow(out, 1, n, n), LOG_STD_LO, LOG_STD_HI)
    return DiagGaussian(mean, dc.exp(log_std))


def _maybe_squeeze_gaussian(g: DiagGaussian, single: bool) -> DiagGaussian:
    if not single:
        return g
    n = g.mean.shape[1]
    return DiagGaussian(dc.reshape(g.mean, (n,)), dc.reshape(g.std, (n,)))


def encode(params: ModelParams, obs) -> Tensor:
    """Deterministic feature vector z for one image or a batch of images."""
    dims = params.dims
    t = obs if isinstance(obs, Tensor) else dc.constant(np.asarray(obs), params.dtype)
    single = t.ndim == 3
    expected = (dims.channels, dims.image_size, dims.image_size)
    if (single and t.shape != expected) or (not single and (t.ndim != 4 or t.shape[1:] != expected)):
        raise ShapeError(f"observation shape {t.shape} does not match configured {expected}")
    x = dc.reshape(t, (1,) + expected) if single else t
    for i in range(len(dims.conv_channels)):
        w = params.store[f"enc.conv{i}.w"]
        b = params.store[f"enc.conv{i}.b"]
        x = dc.elu(dc.conv2d(x, w, stride=dims.conv_stride, bias=b))
    flat = dc.reshape(x, (x.shape[0], dims.encoder_flat()))
    z = _dense(params.store, "enc.fc", flat)
    return dc.reshape(z, (dims.n_z,)) if single else z


def predict(params: ModelParams, s, a) -> DiagGaussian:
    """Prior over the next latent from the dynamics model."""
    dims = params.dims
    s_t, single = _as_rows(s, params.dtype, dims.n_s, "latent state")
    a_t, a_single = _as_rows(a, params.dtype, dims.action_dim, "action")
    if single != a_single:
        raise ShapeError("latent state and action must both be single or both batched")
    out = _mlp(params.store, "dyn", dc.concat([s_t, a_t], axis=1))
    return _maybe_squeeze_gaussian(_dist_head(out, dims.n_s), single)


def filter_belief(params: ModelParams, z, prior: DiagGaussian) -> DiagGaussian:
    """Posterior belief from an encoding and the prior's (mean, std)."""
    dims = params.dims
    z_t, single = _as_rows(z, params.dtype, dims.n_z, "encoding")
    mean_t, m_single = _as_rows(prior.mean, params.dtype, dims.n_s, "prior mean")
    std_t, _ = _as_rows(prior.std, params.dtype, dims.n_s, "prior std")
    if single != m_single:
        raise ShapeError("encoding and prior must both be single or both batched")
    out = _mlp(params.store, "fil", dc.concat([z_t, mean_t, std_t], axis=1))
    return _maybe_squeeze_gaussian(_dist_head(out, dims.n_s), single)


def predict_reward(params: ModelParams, s) -> Tensor:
    """Mean of the unit-variance reward Gaussian; the negative
    log-likelihood of an observed reward r reduces to 0.5 * (r - r_hat)^2
    plus a constant that is dropped."""
    s_t, single = _as_rows(s, params.dtype, params.dims.n_s, "latent state")
    out = _mlp(params.store, "rew", s_t)
    return dc.reshape(out, ()) if single else dc.reshape(out, (out.shape[0],))


def open_loop_rollout(params: ModelParams, s, actions, noise=None) -> list[LatentBelief]:
    """Iterate dynamics + reparameterised sampling, no filtering.

    ``actions`` is (h, action_dim) or (B, h, action_dim); ``noise`` is an
    array of matching latent shape per step, or None for zero noise
    (a rollout of distribution means).  Beliefs come back in time order.
    """
    dims = params.dims
    acts = np.asarray(actions)
    single = acts.ndim == 2
    if single:
        acts = acts[None]
    if acts.ndim != 3 or acts.shape[2] != dims.action_dim:
        raise ShapeError(f"actions shape {np.asarray(actions).shape} is not (h, {dims.action_dim}) or (B, h, {dims.action_dim})")
    B, h = acts.shape[0], acts.shape[1]
    if h < 1:
        raise ContractError("open_loop_rollout needs a horizon of at least 1 step")
    if noise is None:
        noise_arr = np.zeros((B, h, dims.n_s))
    else:
        noise_arr = np.asarray(noise)
        if single and noise_arr.ndim == 2:
            noise_arr = noise_arr[None]
        if noise_arr.shape != (B, h, dims.n_s):
            raise ShapeError(f"noise shape {np.asarray(noise).shape} does not match (h, n_s) for this rollout")

    cur, _ = _as_rows(s, params.dtype, dims.n_s, "latent state")
    if cur.shape[0] == 1 and B > 1:
        raise ShapeError("batched actions with a single start state are not supported")
    beliefs = []
    for k in range(h):
        g = predict(params, cur, dc.constant(acts[:, k], params.dtype))
        cur = dc.reparam_sample(g, dc.constant(noise_arr[:, k], params.dtype))
        beliefs.append(LatentBelief(_maybe_squeeze_gaussian(g, single), dc.reshape(cur, (dims.n_s,)) if single else cur))
    return beliefs


def nce_term(params: ModelParams, s_pred, z_pos, h: int) -> Tensor:
    """Noise-contrastive score for one horizon.

    Rows of ``s_pred`` are open-loop predictions, rows of ``z_pos`` the
    matching true encodings; each row's candidate set is the whole batch
    (its own encoding plus the other rows as negatives).  Returns the mean
    of log softmax probabilities assigned to the true pairs, which is
    always <= 0 and equals -log(B) when all scores coincide.
    """
    name = f"critic.h{h}.w"
    if name not in params.store:
        raise ConfigError(f"no critic configured for horizon {h}")
    s_t, _ = _as_rows(s_pred, params.dtype, params.dims.n_s, "predictions")
    z_t, _ = _as_rows(z_pos, params.dtype, params.dims.n_z, "encodings")
    if s_t.shape[0] != z_t.shape[0]:
        raise ShapeError(f"prediction rows {s_t.shape[0]} != encoding rows {z_t.shape[0]}")
    scores = dc.matmul(dc.matmul(s_t, params.store[name]), dc.transpose(z_t))
    eye = dc.constant(np.eye(scores.shape[0]), params.dtype)
    diag = dc.reduce_sum(dc.mul(scores, eye), axis=1)
    return dc.mean(dc.sub(diag, dc.logsumexp(scores, axis=-1)))


# ---------------------------------------------------------------------------
# training losses


def _sum_nodes(nodes: Sequence[Tensor]) -> Tensor:
    total = nodes[0]
    for n in nodes[1:]:
        total = dc.add(total, n)
    return total


def _nce_all_starts(params: ModelParams, preds: Tensor, z_all: Tensor,
                    B: int, L: int, h: int) -> Tensor:
    """Mean contrastive score for horizon ``h`` over every start step.

    ``preds`` stacks the step-h rollout states as rows t*B+b; the first
    (L-h)*B rows have a real target encoding z_{t+h}.  Equivalent to
    averaging ``nce_term`` over the valid start steps, but batched: one
    (T, B, B) score tensor instead of T separate matrices.
    """
    T = L - h
    n_s, n_z = params.dims.n_s, params.dims.n_z
    valid = dc.narrow(preds, 0, 0, T * B)
    proj = dc.matmul(valid, params.store[f"critic.h{h}.w"])         # (T*B, n_z)
    z_idx = (np.arange(B)[None, :] * L + (np.arange(T) + h)[:, None]).reshape(-1)
    z_pos = dc.reshape(dc.take_rows(z_all, z_idx), (T, B, n_z))
    scores = dc.bmm(dc.reshape(proj, (T, B, n_z)), dc.transpose_last2(z_pos))
    eye = dc.constant(np.eye(B)[None], params.dtype)
    diag = dc.reduce_sum(dc.mul(scores, eye), axis=2)               # (T, B)
    return dc.mean(dc.reshape(dc.sub(diag, dc.logsumexp(scores, axis=-1)), (T * B,)))


def _filtered_pass(params: ModelParams, batch: SequenceBatch, rng):
    """Encode every frame, then run the filter through the sequence.

    Returns (per-step posterior samples, all encodings flattened to
    (B*L, n_z) in sequence-major order, mean KL node, mean reward-NLL
    node).  The belief at t=0 filters the first encoding against a
    standard-normal prior; later priors come from the dynamics model.
    """
    dims = params.dims
    B, L = batch.batch_size, batch.seq_len
    dtype = params.dtype
    flat_obs = batch.obs.reshape(B * L, *batch.obs.shape[2:])
    z_all = encode(params, dc.constant(flat_obs, dtype))

    prior = DiagGaussian(
        dc.constant(np.zeros((B, dims.n_s)), dtype),
        dc.constant(np.ones((B, dims.n_s)), dtype),
    )
    samples = []
    kl_nodes = []
    s_prev = None
    for t in range(L):
        z_t = dc.take_rows(z_all, np.arange(B) * L + t)
        if t > 0:
            prior = predict(params, s_prev, dc.constant(batch.actions[:, t - 1], dtype))
        post = filter_belief(params, z_t, prior)
        kl_nodes.append(dc.kl_diag_gaussian(post, prior))
        s_t = dc.reparam_sample(post, dc.constant(rng.standard_normal((B, dims.n_s)), dtype))
        samples.append(s_t)
        s_prev = s_t
    kl_mean = dc.mul(_sum_nodes(kl_nodes), 1.0 / (B * L))

    s_stack = dc.concat(samples, axis=0)  # row t*B + b
    r_hat = predict_reward(params, s_stack)
    r_tgt = dc.constant(batch.rewards.T.reshape(-1), dtype)
    diff = dc.sub(r_hat, r_tgt)
    reward_nll = dc.mean(dc.mul(dc.mul(diff, diff), 0.5))
    return samples, z_all, kl_mean, reward_nll


def miro_loss(params: ModelParams, batch: SequenceBatch, lam1: float, lam2: float,
              horizons: Sequence[int] | None = None, rng=None) -> LossBreakdown:
    """Minimized objective: -sum_h nce(h) + lam1 * KL(posterior || prior)
    + lam2 * reward NLL, over a batch of sequences.

    Open-loop predictions start from every filtered sample; positives are
    the same sequence's future encodings, negatives the time-aligned
    encodings of the other sequences in the batch.
    """
    dims = params.dims
    horizons = tuple(horizons) if horizons is not None else dims.nce_horizons
    if rng is None:
        rng = np.random.default_rng(0)
    B, L = batch.batch_size, batch.seq_len
    hmax = max(horizons)
    if L <= hmax:
        raise ContractError(f"sequence length {L} must exceed the largest horizon {hmax}")
    for h in horizons:
        if f"critic.h{h}.w" not in params.store:
            raise ConfigError(f"no critic configured for horizon {h}")

    samples, z_all, kl_mean, reward_nll = _filtered_pass(params, batch, rng)
    dtype = params.dtype

    # Stack rollout sources: row t*B + b holds sequence b's sample at t.
    sources = dc.concat(samples[: L - 1], axis=0)
    n_rows = (L - 1) * B
    rollout_noise = rng.standard_normal((hmax, n_rows, dims.n_s))

    nce_nodes: dict[int, Tensor] = {}
    cur = sources
    for k in range(1, hmax + 1):
        # Action for row (t, b) at rollout step k is a[b, t+k-1]; rows whose
        # rollout has run past the chunk reuse the last action and their
        # predictions are simply never scored.
        t_idx = np.minimum(np.arange(L - 1) + k - 1, L - 1)
        acts = batch.actions[:, t_idx, :].transpose(1, 0, 2).reshape(n_rows, dims.action_dim)
        g = predict(params, cur, dc.constant(acts, dtype))
        cur = dc.reparam_sample(g, dc.constant(rollout_noise[k - 1], dtype))
        if k in horizons:
            nce_nodes[k] = _nce_all_starts(params, cur, z_all, B, L, k)

    nce_total = _sum_nodes(list(nce_nodes.values()))
    total = dc.add(
        dc.neg(nce_total),
        dc.add(dc.mul(kl_mean, float(lam1)), dc.mul(reward_nll, float(lam2))),
    )
    return LossBreakdown(
        total=total,
        nce={h: float(n.data) for h, n in nce_nodes.items()},
        kl_filter=float(kl_mean.data),
        reward_nll=float(reward_nll.data),
    )


def decode(params: ModelParams, s) -> Tensor:
    """Predicted image from a latent state; raw outputs, no squashing.

    Mirrors the encoder as a stack of upsampling convolutions; the final
    stage emits 4x the output channels at half resolution, rearranged to
    full resolution sub-pixel style (every conv stays at or below half the
    image side, which is what keeps the baseline trainable on a CPU).
    """
    dims = params.dims
    if not dims.decoder or "dec.fc.w" not in params.store:
        raise ConfigError("decode requires decoder parameters (baseline mode)")
    s_t, single = _as_rows(s, params.dtype, dims.n_s, "latent state")
    base = dims.decoder_base_side()
    c0 = dims.conv_channels[-1]
    x = _dense(params.store, "dec.fc", s_t)
    x = dc.elu(x)
    x = dc.reshape(x, (s_t.shape[0], c0, base, base))
    chain = dims.decoder_channels()
    for i, _ in enumerate(chain):
        last = i == len(chain) - 1
        if not last:
            x = dc.upsample2x(x)
        x = dc.pad2d(x, 1)
        w = params.store[f"dec.conv{i}.w"]
        b = params.store[f"dec.conv{i}.b"]
        x = dc.conv2d(x, w, stride=1, bias=b)
        if last:
            x = dc.depth_to_space(x, 2)
        else:
            x = dc.elu(x)
    if single:
        return dc.reshape(x, (dims.channels, dims.image_size, dims.image_size))
    return x


def recon_loss(params: ModelParams, batch: SequenceBatch, lam1: float, lam2: float,
               rng=None) -> LossBreakdown:
    """Baseline objective: mean over steps of 0.5 * ||o - decode(s)||^2
    (summed over pixels) + the same KL and reward terms."""
    if not params.dims.decoder:
        raise ConfigError("recon_loss requires decoder parameters (baseline mode)")
    if rng is None:
        rng = np.random.default_rng(0)
    B, L = batch.batch_size, batch.seq_len
    samples, _, kl_mean, reward_nll = _filtered_pass(params, batch, rng)
    s_stack = dc.concat(samples, axis=0)  # row t*B + b
    pred = decode(params, s_stack)
    # targets in the same t-major order as the stacked samples
    tgt = batch.obs.transpose(1, 0, 2, 3, 4).reshape(B * L, *batch.obs.shape[2:])
    err = dc.sub(pred, dc.constant(tgt, params.dtype))
    recon = dc.mul(dc.reduce_sum(dc.mul(err, err)), 0.5 / (B * L))
    total = dc.add(
        recon,
        dc.add(dc.mul(kl_mean, float(lam1)), dc.mul(reward_nll, float(lam2))),
    )
    return LossBreakdown(
        total=total,
        nce={},
        kl_filter=float(kl_mean.data),
        reward_nll=float(reward_nll.data),
        recon=float(recon.data),
    )


# ---------------------------------------------------------------------------
# belief tracking (used by the planner and data collection)


def initial_belief(params: ModelParams, obs) -> LatentBelief:
    """Filter the first encoding against a standard-normal prior; the
    belief sample is the posterior mean (zero reparameterisation noise)."""
    dims = params.dims
    with dc.no_grad():
        z = encode(params, obs)
        prior = DiagGaussian(
            dc.constant(np.zeros(dims.n_s), params.dtype),
            dc.constant(np.ones(dims.n_s), params.dtype),
        )
        post = filter_belief(params, z, prior)
        sample = dc.reparam_sample(post, np.zeros(dims.n_s, dtype=params.dtype))
    return LatentBelief(post, sample)


def advance_belief(params: ModelParams, belief: LatentBelief, action, obs) -> LatentBelief:
    """predict through the executed action, then filter the new encoding."""
    with dc.no_grad():
        prior = predict(params, belief.sample, np.asarray(action, dtype=params.dtype))
        z = encode(params, obs)
        post = filter_belief(params, z, prior)
        sample = dc.reparam_sample(post, np.zeros(params.dims.n_s, dtype=params.dtype))
    return LatentBelief(post, sample)


class PlanningModel:
    """Batched no-graph view of the model for trajectory optimisation."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.action_dim = params.dims.action_dim
        self.n_s = params.dims.n_s

    def step(self, s: np.ndarray, a: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
        """Next latent batch; distribution means unless noise is given."""
        with dc.no_grad():
            g = predict(self.params, dc.constant(s, self.params.dtype), dc.constant(a, self.params.dtype))
            if noise is None:
                return g.mean.data
            return dc.reparam_sample(g, dc.constant(noise, self.params.dtype)).data

    def reward(self, s: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            return predict_reward(self.params, dc.constant(s, self.params.dtype)).data


def as_planning_model(params: ModelParams) -> PlanningModel:
    return PlanningModel(params)


# ---------------------------------------------------------------------------
# checkpointing


_MAGIC = b"MIROPRM1"


def save_params(store: ParamStore, path) -> None:
    """Flat binary checkpoint: magic, then per tensor a u64 length-prefixed
    name, u64 element size, u64 rank, u64 extents, raw little-endian
    elements.  Loading restores bytes exactly."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        for name, t in store.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", t.data.dtype.itemsize))
            fh.write(struct.pack("<Q", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data).astype(t.data.dtype.newbyteorder("<"), copy=False).tobytes())


def load_params(store: ParamStore, path) -> None:
    """Fill an existing store in place; names, shapes and precision must
    match exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise InvariantError(f"{path} is not a parameter checkpoint")
    off = len(_MAGIC)
    seen = set()
    while off < len(blob):
        (nlen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        itemsize, ndim = struct.unpack_from("<QQ", blob, off)
        off += 16
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = count * itemsize
        dtype = np.dtype(f"<f{itemsize}")
        values = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape)
        off += nbytes
        if name not in store:
            raise InvariantError(f"checkpoint has unknown parameter {name!r}")
        t = store[name]
        if t.data.shape != tuple(shape):
            raise InvariantError(f"checkpoint shape {tuple(shape)} != model shape {t.data.shape} for {name!r}")
        if t.data.dtype.itemsize != itemsize:
            raise InvariantError(f"checkpoint precision f{itemsize} != store precision for {name!r}")
        t.data[...] = values
        seen.add(name)
    missing = [n for n in store.names() if n not in seen]
    if missing:
        raise InvariantError(f"checkpoint is missing parameters: {missing}")
