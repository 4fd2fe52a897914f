"""Attentive encoder-decoder policy over the multi-grain embeddings.

The encoder is a BiLSTM whose per-position states are linearly projected to
the decoder width; attention is dot-product between encoder states and the
current decoder state; the output layer is softmax(W_o tanh(U_h k + W_h c)).
Decoding is greedy at inference time and sampled during RL, with an optional
teacher-forced prefix for the exposure-bias annealing schedule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .corpus import EOS_ID, SOS_ID, TokenSeq, Vocabulary
from .embedding import CharEncoder, ContextualEncoder, MultiGrainEmbedder
from .nn import (Parameter, Tensor, add, add_n, affine, bilstm, concat,
                 cross_entropy, init_lstm, log, lstm_cell, matmul, no_tape, pick,
                 scale, softmax, stack, tanh, uniform_init)
from .nn.rnn import LstmWeights


@dataclass
class PolicyConfig:
    d_word: int = 300
    d_char: int = 50
    d_char_hidden: int = 100
    d_ctx: int = 64
    d_hidden: int = 500
    decoder_layers: int = 1
    max_len: int = 20
    max_src_len: int = 40

    def validate(self) -> None:
        for name in ("d_word", "d_char", "d_char_hidden", "d_ctx", "d_hidden",
                     "decoder_layers", "max_len", "max_src_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_ctx % 2:
            raise ValueError(f"d_ctx must be even, got {self.d_ctx}")


@dataclass
class EncoderStates:
    matrix: Tensor          # (N, d) projected per-source-position states
    init_h: Tensor          # decoder start state, from the final encoder states
    length: int


@dataclass
class DecoderState:
    layers: list[tuple[Tensor, Tensor]]  # (h, c) per decoder layer
    step: int

    @property
    def top(self) -> Tensor:
        return self.layers[-1][0]


@dataclass
class Trajectory:
    """One sampled generation and everything RL needs to learn from it."""

    actions: list[int]
    logps: list[float]               # log-prob at draw time, generating policy
    states: list[np.ndarray]         # top decoder state per step (detached)
    forced_steps: int = 0            # leading teacher-forced steps
    rewards: list[float] | None = None
    values: list[float] | None = None
    returns: list[float] | None = None
    advantages: list[float] | None = None

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class ScoredActions:
    """Tape-tracked rescoring of a fixed action sequence under the current policy."""

    logps: list[Tensor]
    dists: list[Tensor]
    states: list[Tensor]


def attention(enc: EncoderStates, k: Tensor) -> tuple[Tensor, Tensor]:
    """Dot-product attention: weights over source positions and their context."""
    scores = matmul(enc.matrix, k)
    alpha = softmax(scores)
    context = matmul(alpha, enc.matrix)
    return alpha, context


def sample_from(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from a probability vector (inverse CDF; one-hot -> argmax)."""
    idx = int(np.searchsorted(np.cumsum(dist), rng.random() * dist.sum(), side="right"))
    return min(idx, len(dist) - 1)


class Policy:
    """Seq2Seq refinement policy: per-step action distributions over the vocabulary."""

    def __init__(self, embedder: MultiGrainEmbedder, cfg: PolicyConfig,
                 rng: np.random.Generator):
        cfg.validate()
        self.embedder = embedder
        self.vocab: Vocabulary = embedder.vocab
        self.cfg = cfg
        d = cfg.d_hidden
        self.enc_fwd = init_lstm(rng, "enc.fwd", embedder.d_out, d)
        self.enc_bwd = init_lstm(rng, "enc.bwd", embedder.d_out, d)
        self.w_proj = Parameter("enc.w_proj", uniform_init(rng, (d, 2 * d)))
        self.b_proj = Parameter("enc.b_proj", np.zeros(d))
        self.w_init = Parameter("dec.w_init", uniform_init(rng, (d, 2 * d)))
        self.b_init = Parameter("dec.b_init", np.zeros(d))
        self.dec_layers = [
            init_lstm(rng, f"dec.l{i}", embedder.d_token if i == 0 else d, d)
            for i in range(cfg.decoder_layers)
        ]
        v = len(self.vocab)
        self.w_o = Parameter("out.w_o", uniform_init(rng, (v, d)))
        self.u_h = Parameter("out.u_h", uniform_init(rng, (d, d)))
        self.w_h = Parameter("out.w_h", uniform_init(rng, (d, d)))

    # ----- parameter bookkeeping -------------------------------------------------

    def own_params(self) -> list[Parameter]:
        ps = (self.enc_fwd.params() + self.enc_bwd.params()
              + [self.w_proj, self.b_proj, self.w_init, self.b_init])
        for layer in self.dec_layers:
            ps += layer.params()
        return ps + [self.w_o, self.u_h, self.w_h]

    def all_params(self) -> list[Parameter]:
        return self.embedder.params() + self.own_params()

    def trainable_params(self, include_embedder: bool = True) -> list[Parameter]:
        if include_embedder and not self.embedder.frozen:
            return self.embedder.trainable_params() + self.own_params()
        return self.own_params()

    def clone(self) -> "Policy":
        """Frozen-weight copy sharing the (frozen) embedder; used for snapshots."""
        if not self.embedder.frozen:
            raise RuntimeError("clone() requires a frozen embedder")
        twin = object.__new__(Policy)
        twin.embedder = self.embedder
        twin.vocab = self.vocab
        twin.cfg = self.cfg
        twin.enc_fwd = LstmWeights(*(p.copy() for p in self.enc_fwd.params()))
        twin.enc_bwd = LstmWeights(*(p.copy() for p in self.enc_bwd.params()))
        twin.w_proj = self.w_proj.copy()
        twin.b_proj = self.b_proj.copy()
        twin.w_init = self.w_init.copy()
        twin.b_init = self.b_init.copy()
        twin.dec_layers = [LstmWeights(*(p.copy() for p in layer.params()))
                           for layer in self.dec_layers]
        twin.w_o = self.w_o.copy()
        twin.u_h = self.u_h.copy()
        twin.w_h = self.w_h.copy()
        return twin

    # ----- encoder ----------------------------------------------------------------

    def encode(self, x: TokenSeq) -> EncoderStates:
        if not x:
            raise ValueError("encode: empty source sequence")
        if len(x) > self.cfg.max_src_len:
            warnings.warn(f"source length {len(x)} truncated to {self.cfg.max_src_len}")
            x = TokenSeq(x.words[:self.cfg.max_src_len])
        reps = self.embedder.represent(x)
        outs, (hf, hb) = bilstm(reps, self.enc_fwd, self.enc_bwd)
        states = [affine(self.w_proj.t, o, self.b_proj.t) for o in outs]
        init_h = affine(self.w_init.t, concat([hf, hb]), self.b_init.t)
        return EncoderStates(matrix=stack(states), init_h=init_h, length=len(states))

    def init_decoder_state(self, enc: EncoderStates) -> DecoderState:
        d = self.cfg.d_hidden
        layers = [(enc.init_h, Tensor(np.zeros(d)))]
        for _ in range(1, self.cfg.decoder_layers):
            layers.append((Tensor(np.zeros(d)), Tensor(np.zeros(d))))
        return DecoderState(layers=layers, step=0)

    # ----- decoder ----------------------------------------------------------------

    def decode_step(self, state: DecoderState, token_id: int, enc: EncoderStates
                    ) -> tuple[DecoderState, Tensor]:
        """Consume one token; return the new state and the next-token distribution."""
        inp = self.embedder.token_embedding(self.vocab.word(token_id), token_id)
        new_layers = []
        for layer, (h_prev, c_prev) in zip(self.dec_layers, state.layers):
            h, c = lstm_cell(inp, h_prev, c_prev, layer)
            new_layers.append((h, c))
            inp = h
        k = new_layers[-1][0]
        _, context = attention(enc, k)
        logits = matmul(self.w_o.t,
                        tanh(add(matmul(self.u_h.t, k), matmul(self.w_h.t, context))))
        return DecoderState(new_layers, state.step + 1), softmax(logits)

    # ----- decoding modes ---------------------------------------------------------

    def greedy_decode(self, x: TokenSeq, max_len: int | None = None) -> TokenSeq:
        """Argmax decoding (first index wins ties); stops at EOS or the cap.

        The returned sequence excludes the terminating EOS marker.
        """
        max_len = max_len or self.cfg.max_len
        words: list[str] = []
        with no_tape():
            enc = self.encode(x)
            state = self.init_decoder_state(enc)
            token = SOS_ID
            for _ in range(max_len):
                state, dist = self.decode_step(state, token, enc)
                token = int(np.argmax(dist.data))
                if token == EOS_ID:
                    break
                words.append(self.vocab.word(token))
        return TokenSeq(tuple(words))

    def sample_decode(self, x: TokenSeq, rng: np.random.Generator,
                      max_len: int | None = None,
                      forced_prefix: tuple[int, ...] = ()) -> Trajectory:
        """Sample a trajectory; log-probs and decoder states recorded at draw time.

        ``forced_prefix`` pins the first actions to the given ids (teacher
        forcing for the annealing schedule); their log-probs are still read
        off the step distributions.
        """
        max_len = max_len or self.cfg.max_len
        if max_len < 1:
            raise ValueError("sample_decode: max_len must be >= 1")
        actions: list[int] = []
        logps: list[float] = []
        states: list[np.ndarray] = []
        with no_tape():
            enc = self.encode(x)
            state = self.init_decoder_state(enc)
            token = SOS_ID
            for m in range(max_len):
                state, dist = self.decode_step(state, token, enc)
                if m < len(forced_prefix):
                    action = int(forced_prefix[m])
                else:
                    action = sample_from(dist.data, rng)
                actions.append(action)
                logps.append(float(np.log(max(dist.data[action], 1e-9))))
                states.append(state.top.data.copy())
                if action == EOS_ID:
                    break
                token = action
        return Trajectory(actions=actions, logps=logps, states=states,
                          forced_steps=min(len(forced_prefix), len(actions)))

    def score_actions(self, x: TokenSeq, actions: list[int]) -> ScoredActions:
        """Teacher-force a fixed action sequence, tape-tracked, for RL updates."""
        enc = self.encode(x)
        state = self.init_decoder_state(enc)
        logps, dists, states = [], [], []
        token = SOS_ID
        for action in actions:
            state, dist = self.decode_step(state, token, enc)
            logps.append(log(pick(dist, action)))
            dists.append(dist)
            states.append(state.top)
            token = action
        return ScoredActions(logps=logps, dists=dists, states=states)

    def next_token_dists(self, x: TokenSeq, actions: list[int]) -> list[np.ndarray]:
        """Distributions D_0..D_M: D_j predicts the token after consuming j actions.

        Forward-only; used by the frozen-decoder fluency scorer.
        """
        with no_tape():
            enc = self.encode(x)
            state = self.init_decoder_state(enc)
            out = []
            token = SOS_ID
            for action in actions:
                state, dist = self.decode_step(state, token, enc)
                out.append(dist.data)
                token = action
            state, dist = self.decode_step(state, token, enc)
            out.append(dist.data)
        return out

    # ----- supervised objective ----------------------------------------------------

    def supervised_loss(self, x: TokenSeq, y: TokenSeq) -> Tensor:
        """Mean teacher-forced cross-entropy of the gold sequence plus EOS."""
        if len(y) == 0:
            raise ValueError("supervised_loss: empty target")
        targets = self.vocab.encode(y) + [EOS_ID]
        enc = self.encode(x)
        state = self.init_decoder_state(enc)
        token = SOS_ID
        ces = []
        for target in targets:
            state, dist = self.decode_step(state, token, enc)
            ces.append(cross_entropy(dist, target))
            token = target
        return scale(add_n(ces), 1.0 / len(ces))

    # ----- serialization -------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.all_params()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = {p.name: p for p in self.all_params()}
        missing = set(own) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
        for name, p in own.items():
            if arrays[name].shape != p.data.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {arrays[name].shape} vs model {p.data.shape}")
            p.t.data = arrays[name].astype(np.float64).copy()
        self.embedder.clear_caches()


@dataclass
class MixerConfig:
    """Annealing from full teacher forcing to full RL."""

    initial_prefix: int = 12
    decrement: int = 3
    interval: int = 2

    def validate(self) -> None:
        if self.initial_prefix < 0 or self.decrement < 0 or self.interval < 1:
            raise ValueError(f"bad mixer schedule {self}")


def mixer_schedule(epoch: int, cfg: MixerConfig) -> int:
    """Teacher-forced prefix length for a training epoch (monotone to zero)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return max(0, cfg.initial_prefix - cfg.decrement * (epoch // cfg.interval))


def build_policy(vocab: Vocabulary, char_vocab, cfg: PolicyConfig, seed: int,
                 use_contextual: bool = True) -> Policy:
    """Assemble embedder + policy with deterministic parameter initialization."""
    rng = np.random.default_rng(seed)
    word_table = Parameter("embed.word_table", uniform_init(rng, (len(vocab), cfg.d_word)))
    char_enc = CharEncoder(char_vocab, cfg.d_char, cfg.d_char_hidden, rng)
    ctx_enc = ContextualEncoder(len(vocab), cfg.d_ctx, cfg.d_ctx, rng)
    embedder = MultiGrainEmbedder(vocab, word_table, char_enc, ctx_enc,
                                  use_contextual=use_contextual)
    return Policy(embedder, cfg, rng)


def pretrain_policy(policy: Policy, train, dev, epochs: int, batch_size: int,
                    lr: float, rng: np.random.Generator,
                    grad_clip: float = 5.0, lr_decay: float = 1.0) -> list[dict]:
    """Teacher-forced supervised training; keeps the best-dev-loss weights.

    ``lr_decay`` multiplies the learning rate once per epoch. Returns one
    history row per epoch: {"epoch", "train_loss", "dev_loss"}.
    """
    from .nn import Tape, adam_step, clip_global_norm, zero_grads

    params = policy.trainable_params()
    history = []
    best = (np.inf, None)
    for epoch in range(epochs):
        epoch_lr = lr * lr_decay ** epoch
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), batch_size):
            batch = [train[i] for i in order[start:start + batch_size]]
            zero_grads(params)
            with Tape() as tape, policy.embedder.batch_cache():
                losses = [policy.supervised_loss(t.ill, t.well) for t in batch]
                loss = scale(add_n(losses), 1.0 / len(losses))
            tape.backward(loss)
            clip_global_norm(params, grad_clip)
            adam_step(params, lr=epoch_lr)
            total += loss.item() * len(batch)
        with no_tape():
            dev_loss = float(np.mean([policy.supervised_loss(t.ill, t.well).item()
                                      for t in dev])) if dev else float("nan")
        history.append({"epoch": epoch, "train_loss": total / len(train),
                        "dev_loss": dev_loss})
        if dev and dev_loss < best[0]:
            best = (dev_loss, policy.state_arrays())
    if best[1] is not None:
        policy.load_state_arrays(best[1])
    return history
