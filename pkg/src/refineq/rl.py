"""Policy-gradient fine-tuning: REINFORCE with a sampled baseline, and PPO
with clipped surrogate, GAE advantages, a linear value head, and old-policy
snapshots.

Both loops share one harness shape: pick a batch, roll out trajectories,
score them with the reward stack, update, log one metrics row per episode
(schema: episode, mean_reward, mean_return, bleu1_dev, policy_loss,
value_loss, entropy).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import TokenSeq, Triple
from .nn import (Parameter, Tape, Tensor, adam_step, add_n, add_scalar, clip,
                 clip_global_norm, dot, exp, log, minimum, mul, no_tape, pick,
                 scale, sub, tsum, uniform_init, zero_grads)
from .reward import RewardStack, discounted_returns
from .seq2seq import Policy, MixerConfig, Trajectory, mixer_schedule

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["episode", "mean_reward", "mean_return", "bleu1_dev",
                   "policy_loss", "value_loss", "entropy"]


@dataclass
class ReinforceConfig:
    episodes: int = 30
    batch_size: int = 64
    lr: float = 0.001
    entropy_weight: float = 0.01     # weight on the entropy bonus
    baseline_samples: int = 4        # rollouts used to estimate B(x)
    grad_clip: float = 5.0
    lr_decay: float = 1.0            # per-episode learning-rate multiplier
    mixer: MixerConfig = field(default_factory=MixerConfig)

    def validate(self) -> None:
        if self.baseline_samples < 1:
            raise ValueError(f"baseline_samples must be >= 1, got {self.baseline_samples}")
        if self.entropy_weight < 0:
            raise ValueError(f"entropy_weight must be >= 0, got {self.entropy_weight}")
        if self.episodes < 1 or self.batch_size < 1:
            raise ValueError("episodes and batch_size must be >= 1")
        self.mixer.validate()


@dataclass
class PPOConfig:
    episodes: int = 30
    batch_size: int = 64
    lr: float = 0.001
    clip_eps: float = 0.2            # grid {0.1, 0.2, 0.3}
    gae_lambda: float = 0.95
    c2: float = 0.1                  # entropy bonus coefficient, grid {0.1, 1}
    inner_epochs: int = 4
    ratio_tolerance: float = 1e-3    # early-stop when mean |ratio-1| drops below
    ratio_overflow: float = 20.0     # skip an update when |logp - logp_old| exceeds
    grad_clip: float = 5.0
    lr_decay: float = 1.0            # per-episode learning-rate multiplier
    # exposure-bias annealing; initial_prefix=0 disables it (pure RL from episode 0)
    mixer: MixerConfig = field(default_factory=lambda: MixerConfig(initial_prefix=0))

    def validate(self) -> None:
        if self.clip_eps <= 0:
            raise ValueError(f"clip_eps must be > 0, got {self.clip_eps}")
        if not 0.0 <= self.gae_lambda < 1.0:
            raise ValueError(f"gae_lambda must be in [0,1), got {self.gae_lambda}")
        if self.inner_epochs < 1:
            raise ValueError(f"inner_epochs must be >= 1, got {self.inner_epochs}")
        if self.c2 < 0:
            raise ValueError(f"c2 must be >= 0, got {self.c2}")
        if self.episodes < 1 or self.batch_size < 1:
            raise ValueError("episodes and batch_size must be >= 1")
        self.mixer.validate()


class ValueHead:
    """Linear map from a decoder state to a scalar state-value estimate."""

    def __init__(self, d_hidden: int, rng: np.random.Generator):
        self.w = Parameter("value.w", uniform_init(rng, (d_hidden,)))
        self.b = Parameter("value.b", np.zeros(()))

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def value_t(self, state: np.ndarray) -> Tensor:
        return dot(self.w.t, Tensor(state)) + self.b.t

    def value(self, state: np.ndarray) -> float:
        return float(self.w.data @ state + self.b.data)

    def values(self, traj: Trajectory) -> list[float]:
        """Per-step V(k_t) plus the terminal zero entry."""
        return [self.value(s) for s in traj.states] + [0.0]


def estimate_baseline(x: TokenSeq, rollout_return, n_samples: int,
                      rng: np.random.Generator) -> float:
    """Mean total return over independent sampled rollouts of the current policy.

    ``rollout_return(x, rng) -> float`` must sample a fresh trajectory and
    return its total (discounted) return.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    return float(np.mean([rollout_return(x, rng) for _ in range(n_samples)]))


def entropy_term(dists: list[Tensor]) -> Tensor:
    """Summed Shannon entropy -sum p log p over steps (positive for spread-out
    distributions; the optimized objective adds it as an exploration bonus)."""
    if not dists:
        raise ValueError("entropy_term: no distributions")
    parts = [tsum(mul(d, log(d))) for d in dists]
    return scale(add_n(parts), -1.0)


def gae_advantages(rewards: list[float], values: list[float],
                   gamma: float, gae_lambda: float) -> list[float]:
    """Generalized advantage estimates from TD residuals, truncated at the end.

    ``values`` must carry one extra terminal entry (0 after EOS).
    """
    if len(values) != len(rewards) + 1:
        raise ValueError(
            f"values must have len(rewards)+1 entries, got {len(values)} vs {len(rewards)}")
    adv = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        acc = delta + gamma * gae_lambda * acc
        adv[t] = acc
    return adv


def ppo_clip_loss(ratio, advantage: float, clip_eps: float) -> Tensor:
    """Clipped surrogate min(ratio*A, clip(ratio, 1-eps, 1+eps)*A) to ascend."""
    r = ratio if isinstance(ratio, Tensor) else Tensor(float(ratio))
    unclipped = scale(r, advantage)
    clipped = scale(clip(r, 1.0 - clip_eps, 1.0 + clip_eps), advantage)
    return minimum(unclipped, clipped)


@dataclass
class Rollout:
    x: TokenSeq
    answer: TokenSeq
    traj: Trajectory
    baseline: float = 0.0


def reinforce_update(policy: Policy, trainables: list[Parameter],
                     rollouts: list[Rollout], cfg: ReinforceConfig,
                     lr: float | None = None) -> dict:
    """One REINFORCE ascent step over a scored batch.

    Sampled steps contribute -logp * (R_t - B(x)); teacher-forced prefix steps
    (exposure-bias schedule) contribute plain cross-entropy; the entropy of the
    sampled steps enters as a bonus.
    """
    zero_grads(trainables)
    policy_terms = []
    entropies = []
    with Tape() as tape, policy.embedder.batch_cache():
        for ro in rollouts:
            scored = policy.score_actions(ro.x, ro.traj.actions)
            for t, logp in enumerate(scored.logps):
                if t < ro.traj.forced_steps:
                    policy_terms.append(scale(logp, -1.0))  # cross-entropy on gold
                else:
                    adv = ro.traj.returns[t] - ro.baseline
                    policy_terms.append(scale(logp, -adv))
            sampled = scored.dists[ro.traj.forced_steps:]
            if sampled:
                entropies.append(entropy_term(sampled))
        loss = scale(add_n(policy_terms), 1.0 / len(rollouts))
        if entropies and cfg.entropy_weight > 0:
            loss = sub(loss, scale(add_n(entropies),
                                   cfg.entropy_weight / len(rollouts)))
    tape.backward(loss)
    clip_global_norm(trainables, cfg.grad_clip)
    adam_step(trainables, lr=cfg.lr if lr is None else lr)
    ent = float(np.mean([e.item() for e in entropies])) if entropies else 0.0
    return {"policy_loss": loss.item(), "value_loss": 0.0, "entropy": ent}


def ppo_update(policy: Policy, value_head: ValueHead, rollouts: list[Rollout],
               cfg: PPOConfig, trainables: list[Parameter],
               lr: float | None = None) -> dict:
    """Inner PPO epochs on one sampled batch (trajectories from the snapshot).

    Each inner epoch rescoring the actions under the current policy, forming
    ratios against the stored sampling log-probs, ascending the clipped
    surrogate plus entropy bonus, and regressing the value head on returns.
    Teacher-forced prefix steps (annealing schedule) take plain cross-entropy
    instead of the surrogate. Stops early once the policy stops moving (mean
    |ratio-1| below tolerance); skips the update if any ratio overflows.
    """
    value_params = value_head.params()
    metrics = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "inner_epochs": 0}
    for inner in range(cfg.inner_epochs):
        zero_grads(trainables)
        zero_grads(value_params)
        surrogates = []
        forced_ces = []
        entropies = []
        value_terms = []
        ratio_gap = 0.0
        steps = 0
        overflow = False
        with Tape() as tape, policy.embedder.batch_cache():
            for ro in rollouts:
                scored = policy.score_actions(ro.x, ro.traj.actions)
                for t, logp in enumerate(scored.logps):
                    if t < ro.traj.forced_steps:
                        forced_ces.append(scale(logp, -1.0))
                        continue
                    delta_logp = logp.item() - ro.traj.logps[t]
                    if abs(delta_logp) > cfg.ratio_overflow:
                        overflow = True
                    ratio = exp(add_scalar(logp, -ro.traj.logps[t]))
                    ratio_gap += abs(ratio.item() - 1.0)
                    steps += 1
                    surrogates.append(ppo_clip_loss(ratio, ro.traj.advantages[t], cfg.clip_eps))
                    diff = add_scalar(value_head.value_t(ro.traj.states[t]),
                                      -ro.traj.returns[t])
                    value_terms.append(mul(diff, diff))
                sampled_dists = scored.dists[ro.traj.forced_steps:]
                if sampled_dists:
                    entropies.append(entropy_term(sampled_dists))
            if steps:
                policy_loss = scale(add_n(surrogates), -1.0 / steps)
                if cfg.c2 > 0 and entropies:
                    # entropy bonus averaged per step, same normalization as the surrogate
                    policy_loss = sub(policy_loss, scale(add_n(entropies), cfg.c2 / steps))
                value_loss = scale(add_n(value_terms), 1.0 / steps)
            else:
                policy_loss = Tensor(0.0)
                value_loss = Tensor(0.0)
            if forced_ces:
                # same per-trajectory normalization as the REINFORCE loop's anchor
                policy_loss = policy_loss + scale(add_n(forced_ces), 1.0 / len(rollouts))
            total = policy_loss + value_loss
        if overflow:
            logger.warning("ppo_update: ratio overflow (|dlogp| > %.0f), skipping update",
                           cfg.ratio_overflow)
            break
        if inner > 0 and ratio_gap / max(1, steps) < cfg.ratio_tolerance:
            break
        tape.backward(total)
        clip_global_norm(trainables, cfg.grad_clip)
        clip_global_norm(value_params, cfg.grad_clip)
        step_lr = cfg.lr if lr is None else lr
        adam_step(trainables, lr=step_lr)
        adam_step(value_params, lr=step_lr)
        metrics = {"policy_loss": policy_loss.item(), "value_loss": value_loss.item(),
                   "entropy": float(np.mean([e.item() for e in entropies])) if entropies else 0.0,
                   "inner_epochs": inner + 1}
    return metrics


def _dev_bleu1(policy: Policy, dev: list[Triple]) -> float:
    from .evaluation import bleu_n
    if not dev:
        return float("nan")
    with no_tape():
        return float(np.mean([bleu_n(policy.greedy_decode(t.ill), t.well, 1)
                              for t in dev]))


def _gold_prefix(policy: Policy, well: TokenSeq, prefix_len: int) -> tuple[int, ...]:
    """First prefix_len actions of the gold target (EOS included at the end,
    so a full-length prefix forces the whole trajectory)."""
    from .corpus import EOS_ID
    target = policy.vocab.encode(well) + [EOS_ID]
    return tuple(target[:prefix_len])


def _episode_row(episode: int, rollouts: list[Rollout], bleu1: float, upd: dict) -> dict:
    rewards = [r for ro in rollouts for r in ro.traj.rewards]
    returns = [ro.traj.returns[0] for ro in rollouts]
    return {
        "episode": episode,
        "mean_reward": float(np.mean(rewards)),
        "mean_return": float(np.mean(returns)),
        "bleu1_dev": bleu1,
        "policy_loss": upd["policy_loss"],
        "value_loss": upd["value_loss"],
        "entropy": upd["entropy"],
    }


def train_loop_reinforce(train: list[Triple], dev: list[Triple], policy: Policy,
                         rewards: RewardStack, cfg: ReinforceConfig,
                         seed: int, keep_best: bool = True) -> list[dict]:
    """REINFORCE fine-tuning with sampled baselines and the annealed
    teacher-forced prefix; returns one metrics row per episode.

    With ``keep_best`` the weights with the highest dev BLEU-1 are restored
    at the end (the per-episode metrics log is unaffected).
    """
    cfg.validate()
    policy.embedder.freeze()
    rng = np.random.default_rng(seed)
    trainables = policy.trainable_params()
    rows = []
    best = (-np.inf, None)
    for episode in range(cfg.episodes):
        prefix_len = mixer_schedule(episode, cfg.mixer)
        batch_idx = rng.choice(len(train), size=min(cfg.batch_size, len(train)),
                               replace=False)
        rollouts = []
        for ti in batch_idx:
            t = train[ti]
            prefix = _gold_prefix(policy, t.well, prefix_len)
            traj = policy.sample_decode(t.ill, rng, forced_prefix=prefix)
            rewards.score(t.ill, t.answer, traj)

            def rollout_return(x, r, _t=t, _prefix=prefix):
                smp = policy.sample_decode(x, r, forced_prefix=_prefix)
                rewards.score(x, _t.answer, smp)
                return smp.returns[0]

            baseline = estimate_baseline(t.ill, rollout_return,
                                         cfg.baseline_samples, rng)
            rollouts.append(Rollout(x=t.ill, answer=t.answer, traj=traj,
                                    baseline=baseline))
        upd = reinforce_update(policy, trainables, rollouts, cfg,
                               lr=cfg.lr * cfg.lr_decay ** episode)
        bleu1 = _dev_bleu1(policy, dev)
        if keep_best and dev and bleu1 > best[0]:
            best = (bleu1, policy.state_arrays())
        rows.append(_episode_row(episode, rollouts, bleu1, upd))
    if keep_best and best[1] is not None:
        policy.load_state_arrays(best[1])
    return rows


def train_loop_ppo(train: list[Triple], dev: list[Triple], policy: Policy,
                   rewards: RewardStack, cfg: PPOConfig, seed: int,
                   value_head: ValueHead | None = None,
                   keep_best: bool = True) -> list[dict]:
    """PPO fine-tuning: sample under the old-policy snapshot, estimate GAE
    advantages with the value head, run inner clipped-surrogate epochs, then
    sync the snapshot. Returns one metrics row per episode.

    With ``keep_best`` the weights with the highest dev BLEU-1 are restored
    at the end (the per-episode metrics log is unaffected).
    """
    cfg.validate()
    policy.embedder.freeze()
    rng = np.random.default_rng(seed)
    trainables = policy.trainable_params()
    if value_head is None:
        value_head = ValueHead(policy.cfg.d_hidden, rng)
    snapshot = policy.clone()
    rows = []
    best = (-np.inf, None)
    for episode in range(cfg.episodes):
        prefix_len = mixer_schedule(episode, cfg.mixer)
        batch_idx = rng.choice(len(train), size=min(cfg.batch_size, len(train)),
                               replace=False)
        rollouts = []
        for ti in batch_idx:
            t = train[ti]
            prefix = _gold_prefix(policy, t.well, prefix_len)
            traj = snapshot.sample_decode(t.ill, rng, forced_prefix=prefix)
            rewards.score(t.ill, t.answer, traj)
            traj.values = value_head.values(traj)
            traj.advantages = gae_advantages(traj.rewards, traj.values,
                                             rewards.cfg.gamma, cfg.gae_lambda)
            rollouts.append(Rollout(x=t.ill, answer=t.answer, traj=traj))
        upd = ppo_update(policy, value_head, rollouts, cfg, trainables,
                         lr=cfg.lr * cfg.lr_decay ** episode)
        snapshot = policy.clone()
        bleu1 = _dev_bleu1(policy, dev)
        if keep_best and dev and bleu1 > best[0]:
            best = (bleu1, policy.state_arrays())
        rows.append(_episode_row(episode, rollouts, bleu1, upd))
    if keep_best and best[1] is not None:
        policy.load_state_arrays(best[1])
    return rows
