"""End-to-end training of the index network through the transport layer.

Per gradient step: sample a batch of cohort state vectors, encode, run the
network to index scores, relax to a transport plan with Sinkhorn, score the
plan with either the divergence-to-oracle loss or the expected-reward
surrogate, and chain the gradient back (d loss / d plan -> d plan / d index
-> d index / d parameters) into one parameter update.

Per-epoch randomness is derived from (seed, epoch, stream) so a run resumed
from a checkpoint continues bit-for-bit identically to an uninterrupted one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import evaluation, transport
from .errors import DataError, TrainingDivergedError
from .instances import RmabInstance, step
from .network import IndexNetwork, encode, save_checkpoint
from .occupancy import OccupancyMeasure, extract_policy
from .textio import format_real, write_document

LOSS_KINDS = ("kl", "reward", "kl+reward")

# Sub-stream tags for per-epoch generators.
_STREAM_TRAIN = 0
_STREAM_VAL = 1
_STREAM_EVAL = 2


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 0.05
    epsilon: float = 0.1
    loss: str = "kl"
    kl_weight: float = 1.0
    rollout_horizon: int = 10
    seed: int = 0
    sinkhorn_max_iter: int = transport.DEFAULT_MAX_ITER
    sinkhorn_tol: float = transport.DEFAULT_TOL
    validation_size: int = 8
    eval_every: int = 0          # 0: never evaluate the reward gap during training
    eval_batches: int = 10
    eval_horizon: int = 50
    checkpoint_every: int = 0    # 0: only the final checkpoint
    checkpoint_path: str | None = None

    def validate(self, has_oracle: bool) -> None:
        if self.loss not in LOSS_KINDS:
            raise DataError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.loss in ("kl", "kl+reward") and not has_oracle:
            raise DataError("loss kind requires an occupancy measure but none was given")
        for name in ("epochs", "batch_size", "rollout_horizon", "validation_size"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be nonnegative")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise DataError("learning_rate and epsilon must be positive")


@dataclass
class TrainLog:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    reward_gap_pct: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, epoch, train, val, gap, secs) -> None:
        self.epochs.append(int(epoch))
        self.train_loss.append(float(train))
        self.val_loss.append(float(val))
        self.reward_gap_pct.append(float(gap))
        self.seconds.append(float(secs))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("epoch,train_loss,val_loss,reward_gap_pct,seconds\n")
            for i, e in enumerate(self.epochs):
                gap = self.reward_gap_pct[i]
                gap_txt = "" if np.isnan(gap) else format_real(gap)
                fh.write(
                    f"{e},{format_real(self.train_loss[i])},{format_real(self.val_loss[i])},"
                    f"{gap_txt},{self.seconds[i]:.3f}\n"
                )


def kl_target(om: OccupancyMeasure, states: np.ndarray) -> np.ndarray:
    """Target rows for the divergence loss: oracle policy at each arm's state.

    Row n is the conditional oracle policy of arm n in its current state
    (rows sum to 1, matching the plan's row marginals).  The raw occupancy
    table itself is normalized per arm over all states and actions, so its
    slices are not comparable to plan rows without this conditioning.
    """
    pi = extract_policy(om)
    states = np.asarray(states, dtype=np.int64)
    return pi[np.arange(pi.shape[0]), states]


def kl_loss(gamma: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Divergence sum_(n,a) t*(log t - log G) and its gradient -t/G.

    Entries with zero target contribute nothing and get zero gradient.  A
    negative plan entry under positive target mass means the upstream plan
    was not an interior entropic solution and is rejected; entries that
    merely underflowed to zero are clamped so the gradient stays finite
    (downstream it is multiplied by the plan again, so the product is
    bounded regardless).
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if gamma.shape != target.shape:
        raise DataError(f"plan shape {gamma.shape} != target shape {target.shape}")
    support = target > 0.0
    if np.any(gamma[support] < 0.0):
        raise DataError("transport plan has negative entries under target support")
    safe = np.maximum(gamma, 1e-300)
    loss = float(
        np.sum(target[support] * (np.log(target[support]) - np.log(safe[support])))
    )
    grad = np.zeros_like(gamma)
    grad[support] = -target[support] / safe[support]
    return loss, grad


def reward_loss(
    inst: RmabInstance, gamma: np.ndarray, states: np.ndarray
) -> tuple[float, np.ndarray]:
    """Expected one-step reward surrogate: loss -sum r_n(s_n,a)*G_na.

    The gradient is simply the negated reward table gathered at the current
    states; nothing flows through the state distribution.
    """
    states = np.asarray(states, dtype=np.int64)
    r = inst.rewards[np.arange(inst.n_arms), states]     # (N, A)
    loss = -float((r * gamma).sum())
    return loss, -r


def _sample_states(inst: RmabInstance, count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, inst.n_states, size=(count, inst.n_arms), dtype=np.int64)


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, stream])


def _batch_losses(
    inst: RmabInstance,
    om: OccupancyMeasure | None,
    net: IndexNetwork,
    config: TrainConfig,
    states_batch: np.ndarray,
    rng: np.random.Generator,
    accumulate: bool,
) -> float:
    """Loss averaged over the batch; optionally accumulates parameter grads.

    With the reward surrogate each batch element is a short rollout: the
    per-step loss is summed along the trajectory (gradients flow through
    each step's plan only) and the trajectory advances by sampling the
    current plan.
    """
    batch = states_batch.shape[0]
    scale = 1.0 / batch
    total = 0.0
    use_kl = config.loss in ("kl", "kl+reward")
    use_reward = config.loss in ("reward", "kl+reward")
    horizon = max(config.rollout_horizon, 1) if use_reward else 1

    for b in range(batch):
        states = states_batch[b]
        for k in range(horizon):
            value = _element_loss(
                inst, om, net, config, states, use_kl, use_reward, accumulate, scale
            )
            total += value * scale
            if k + 1 < horizon:
                states = _advance(inst, net, config, states, rng)
    return total


def _element_loss(inst, om, net, config, states, use_kl, use_reward, accumulate, scale):
    feats = encode(inst, states)
    index, tape = net.forward(feats)
    plan = transport.sinkhorn_forward(
        index,
        inst.budgets,
        config.epsilon,
        max_iter=config.sinkhorn_max_iter,
        tol=config.sinkhorn_tol,
        record_tape=accumulate,
    )
    loss = 0.0
    d_gamma = np.zeros_like(plan.gamma)
    if use_kl:
        value, grad = kl_loss(plan.gamma, kl_target(om, states))
        loss += config.kl_weight * value
        d_gamma += config.kl_weight * grad
    if use_reward:
        value, grad = reward_loss(inst, plan.gamma, states)
        loss += value
        d_gamma += grad
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss!r}")
    if accumulate:
        d_index = transport.sinkhorn_backward(plan, scale * d_gamma)
        net.backward(tape, d_index)
    return loss


def _advance(inst, net, config, states, rng):
    feats = encode(inst, states)
    index, _ = net.forward(feats)
    plan = transport.sinkhorn_forward(
        index, inst.budgets, config.epsilon,
        max_iter=config.sinkhorn_max_iter, tol=config.sinkhorn_tol, record_tape=False,
    )
    actions = transport.plan_to_actions(plan, "sample", rng)
    next_states, _ = step(inst, states, actions, rng)
    return next_states


def _diagnostic_dump(inst, net, config, states, path) -> None:
    feats = encode(inst, states)
    index, _ = net.forward(feats)
    plan = transport.sinkhorn_forward(
        index, inst.budgets, config.epsilon,
        max_iter=config.sinkhorn_max_iter, tol=config.sinkhorn_tol, record_tape=False,
    )
    write_document(
        path,
        "diagnostic-dump",
        {
            "states": states.astype(np.int64),
            "index": index,
            "gamma": plan.gamma,
            "parameters": net.get_parameters(),
        },
    )


def train(
    inst: RmabInstance,
    om: OccupancyMeasure | None,
    net: IndexNetwork,
    config: TrainConfig,
    start_epoch: int = 0,
    dump_dir=None,
) -> TrainLog:
    """Run the training loop; mutates ``net`` in place and returns the log.

    ``start_epoch`` resumes a checkpointed run: epochs before it are skipped
    and, because every epoch derives its randomness from (seed, epoch), the
    continuation matches an uninterrupted run exactly.
    """
    config.validate(has_oracle=om is not None)
    log = TrainLog()
    t0 = time.perf_counter()

    for epoch in range(start_epoch, config.epochs):
        rng = _epoch_rng(config.seed, epoch, _STREAM_TRAIN)
        states_batch = _sample_states(inst, max(config.batch_size, 1), rng)
        net.zero_grad()
        try:
            train_value = _batch_losses(inst, om, net, config, states_batch, rng, accumulate=True)
        except TrainingDivergedError:
            if dump_dir is not None:
                _diagnostic_dump(inst, net, config, states_batch[0],
                                 f"{dump_dir}/diagnostic_dump.txt")
            raise
        net.sgd_step(config.learning_rate)

        val_rng = _epoch_rng(config.seed, epoch, _STREAM_VAL)
        val_states = _sample_states(inst, max(config.validation_size, 1), val_rng)
        val_value = _batch_losses(inst, om, net, config, val_states, val_rng, accumulate=False)

        gap = np.nan
        if config.eval_every and (epoch + 1) % config.eval_every == 0:
            report = evaluation.evaluate(
                inst,
                om,
                net,
                batches=config.eval_batches,
                horizon=config.eval_horizon,
                seed=config.seed,
                epsilon=config.epsilon,
                include_random=False,
            )
            gap = report.gap_pct

        log.append(epoch, train_value, val_value, gap, time.perf_counter() - t0)

        if (
            config.checkpoint_path
            and config.checkpoint_every
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(net, config.checkpoint_path, extra=_resume_info(config, epoch + 1))

    if config.checkpoint_path:
        save_checkpoint(net, config.checkpoint_path, extra=_resume_info(config, config.epochs))
    return log


def _resume_info(config: TrainConfig, next_epoch: int) -> dict:
    return {"next_epoch": int(next_epoch), "seed": int(config.seed)}
