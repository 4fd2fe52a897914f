"""Reward stack for RL fine-tuning.

Two signals drive training: a per-word wording reward (masked-LM probability
of each generated token plus a frozen pretrained decoder's probability of the
following token) and a question-level answer-correlation reward from a
bilinear QA similarity model trained with a hinge ranking loss and then
frozen. The combined per-step reward adds the answer term only at the final
step; discounted returns propagate it backward over the sequence.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, TokenSeq, Triple, Vocabulary
from .embedding import ContextualEncoder
from .nn import (Parameter, Tape, Tensor, adam_step, add_scalar, clip, init_lstm,
                 lstm_run, matmul, no_tape, sub, take_row, uniform_init, zero_grads)
from .seq2seq import Policy, Trajectory


@dataclass
class RewardConfig:
    """Weights for combining rewards; c1=0 disables the answer term entirely."""

    c1: float = 1.0
    gamma: float = 0.95

    def validate(self) -> None:
        if self.c1 < 0:
            raise ValueError(f"c1 must be >= 0, got {self.c1}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0,1], got {self.gamma}")


class FrozenModelError(RuntimeError):
    pass


class RewardModel:
    """Twin LSTM encoders with a bilinear similarity, hinge-trained then frozen.

    The question encoder is shared between ill-formed and generated questions;
    sim(q, a) = enc_q(q) @ W_sim @ enc_a(a).
    """

    def __init__(self, vocab: Vocabulary, d_emb: int, d_hidden: int, margin: float,
                 rng: np.random.Generator):
        if margin < 0:
            raise ValueError(f"margin must be >= 0, got {margin}")
        self.vocab = vocab
        self.margin = margin
        self.d_hidden = d_hidden
        self.emb = Parameter("rm.emb", uniform_init(rng, (len(vocab), d_emb)))
        self.lstm_q = init_lstm(rng, "rm.q", d_emb, d_hidden)
        self.lstm_a = init_lstm(rng, "rm.a", d_emb, d_hidden)
        self.w_sim = Parameter("rm.w_sim", uniform_init(rng, (d_hidden, d_hidden)))
        self.frozen = False

    def params(self) -> list[Parameter]:
        return [self.emb] + self.lstm_q.params() + self.lstm_a.params() + [self.w_sim]

    def _encode(self, s: TokenSeq, weights) -> Tensor:
        ids = self.vocab.encode(s)
        if not ids:
            return Tensor(np.zeros(self.d_hidden))
        xs = [take_row(self.emb.t, i) for i in ids]
        hs, _ = lstm_run(xs, weights)
        return hs[-1]

    def encode_question(self, s: TokenSeq) -> Tensor:
        return self._encode(s, self.lstm_q)

    def encode_answer(self, s: TokenSeq) -> Tensor:
        return self._encode(s, self.lstm_a)

    def sim(self, q: TokenSeq, a: TokenSeq) -> Tensor:
        """Bilinear similarity as a taped scalar (training path)."""
        return matmul(matmul(self.encode_question(q), self.w_sim.t),
                      self.encode_answer(a))

    def similarity(self, q: TokenSeq, a: TokenSeq) -> float:
        """Forward-only similarity (scoring path)."""
        with no_tape():
            return self.sim(q, a).item()

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for p in self.params():
            digest.update(p.name.encode())
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.params()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.params():
            if p.name not in arrays:
                raise KeyError(f"checkpoint missing parameter {p.name!r}")
            p.t.data = arrays[p.name].astype(np.float64).copy()


def qa_similarity(q: TokenSeq, a: TokenSeq, model: RewardModel) -> float:
    return model.similarity(q, a)


def train_reward_model(triples: list[Triple], vocab: Vocabulary,
                       d_emb: int, d_hidden: int, margin: float,
                       epochs: int, lr: float, seed: int) -> tuple[RewardModel, list[float]]:
    """Hinge-train the similarity model (well-formed positive, ill-formed negative).

    Minimizes max(0, margin - sim(well, a) + sim(ill, a)) per triple, then
    freezes the model. Returns (model, per-epoch mean loss).
    """
    rng = np.random.default_rng(seed)
    model = RewardModel(vocab, d_emb, d_hidden, margin, rng)
    params = model.params()
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for ti in order:
            t = triples[ti]
            zero_grads(params)
            with Tape() as tape:
                gap = sub(model.sim(t.ill, t.answer), model.sim(t.well, t.answer))
                loss = clip(add_scalar(gap, margin), 0.0, None)
            tape.backward(loss)
            adam_step(params, lr=lr)
            total += loss.item()
        losses.append(total / max(1, len(triples)))
    model.frozen = True
    return model, losses


def ranking_accuracy(model: RewardModel, triples: list[Triple]) -> float:
    """Fraction of triples where the well-formed question out-scores the ill-formed."""
    if not triples:
        return 0.0
    wins = sum(1 for t in triples
               if model.similarity(t.well, t.answer) > model.similarity(t.ill, t.answer))
    return wins / len(triples)


def answer_correlation_reward(x: TokenSeq, y: TokenSeq, a: TokenSeq,
                              model: RewardModel) -> float:
    """max(0, margin - sim(x,a) + sim(y,a)): larger when the generated question
    is more answer-similar than the ill-formed original; floored at zero."""
    if not model.frozen:
        raise FrozenModelError("reward model must be trained and frozen before scoring")
    return max(0.0, model.margin - model.similarity(x, a) + model.similarity(y, a))


class WordingScorer:
    """Per-word fluency reward from the masked LM and a frozen pretrained decoder.

    For step t (1-based) of a generated sequence: masked-LM probability of the
    token at its own (masked) position, plus the frozen decoder's probability
    of the next token given the state so far; the final step uses EOS as its
    continuation.
    """

    def __init__(self, frozen_policy: Policy, ctx_encoder: ContextualEncoder):
        self.policy = frozen_policy
        self.ctx = ctx_encoder

    def wording_rewards(self, x: TokenSeq, actions: list[int]) -> list[float]:
        if not actions:
            return []
        dists = self.policy.next_token_dists(x, actions)  # D_0 .. D_M
        rewards = []
        last = len(actions) - 1
        for t, action in enumerate(actions):
            r_ctx = self.ctx.masked_token_prob(actions, t)
            nxt = actions[t + 1] if t < last else EOS_ID
            r_lm = float(dists[t + 1][nxt])
            rewards.append(r_ctx + r_lm)
        return rewards


def combined_reward(wording: list[float], r_ac: float, cfg: RewardConfig) -> list[float]:
    """Per-step reward: wording everywhere, plus c1 * r_ac at the final step only."""
    if not wording:
        return []
    out = list(wording)
    out[-1] += cfg.c1 * r_ac
    return out


def discounted_returns(rewards: list[float], gamma: float) -> list[float]:
    """R_t = sum_j gamma^j r_{t+j}, truncated at the sequence end."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0,1], got {gamma}")
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


class RewardStack:
    """Everything needed to score a trajectory: fills rewards and returns."""

    def __init__(self, wording: WordingScorer | None, model: RewardModel,
                 cfg: RewardConfig, vocab: Vocabulary):
        cfg.validate()
        self.wording = wording
        self.model = model
        self.cfg = cfg
        self.vocab = vocab

    def generated_seq(self, traj: Trajectory) -> TokenSeq:
        words = [self.vocab.word(a) for a in traj.actions if a != EOS_ID]
        return TokenSeq(tuple(words))

    def score(self, x: TokenSeq, answer: TokenSeq, traj: Trajectory) -> None:
        if self.wording is not None:
            wording = self.wording.wording_rewards(x, traj.actions)
        else:
            wording = [0.0] * len(traj.actions)
        r_ac = 0.0
        if self.cfg.c1 > 0.0:
            r_ac = answer_correlation_reward(x, self.generated_seq(traj), answer, self.model)
        traj.rewards = combined_reward(wording, r_ac, self.cfg)
        traj.returns = discounted_returns(traj.rewards, self.cfg.gamma)
