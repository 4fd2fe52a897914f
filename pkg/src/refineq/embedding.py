"""Multi-grain token representation.

Each token is represented as the concatenation of three granularities:
a context-free word-table row, a character BiLSTM read of its spelling
(so misspelled/UNK words still carry signal), and a contextual vector from
a small bidirectional recurrent encoder trained as a masked language model
on the corpus. The contextual encoder is pretrained once and then treated
as fixed features; its per-position output distributions double as the
fluency scorer used by the reward stack.
"""

from __future__ import annotations

import numpy as np

from .corpus import CharVocabulary, TokenSeq, Vocabulary
from .nn import (Parameter, Tape, Tensor, adam_step, add_n, affine, bilstm,
                 concat, cross_entropy, init_lstm, no_tape, scale, softmax,
                 take_row, uniform_init, zero_grads)


class CharEncoder:
    """Character embedding table + BiLSTM; a word becomes [h_fwd_last ; h_bwd_last]."""

    def __init__(self, char_vocab: CharVocabulary, d_char: int, d_hidden: int,
                 rng: np.random.Generator, prefix: str = "char"):
        self.char_vocab = char_vocab
        self.d_hidden = d_hidden
        self.table = Parameter(f"{prefix}.table",
                               uniform_init(rng, (len(char_vocab), d_char)))
        self.fwd = init_lstm(rng, f"{prefix}.fwd", d_char, d_hidden)
        self.bwd = init_lstm(rng, f"{prefix}.bwd", d_char, d_hidden)

    @property
    def d_out(self) -> int:
        return 2 * self.d_hidden

    def params(self) -> list[Parameter]:
        return [self.table] + self.fwd.params() + self.bwd.params()

    def embed_word(self, surface: str) -> Tensor:
        if not surface:
            raise ValueError("char encoder: empty word")
        xs = [take_row(self.table.t, cid) for cid in self.char_vocab.encode(surface)]
        _, (hf, hb) = bilstm(xs, self.fwd, self.bwd)
        return concat([hf, hb])


class ContextualEncoder:
    """Two-layer bidirectional recurrent MLM over vocabulary ids.

    ``encode`` yields one vector per position conditioned on the whole
    sequence; ``dist_at`` puts the output softmax head on one position,
    optionally with that position's input masked (the scoring mode used for
    the fluency reward).
    """

    def __init__(self, vocab_size: int, d_token: int, d_ctx: int,
                 rng: np.random.Generator, prefix: str = "ctx"):
        if d_ctx % 2:
            raise ValueError(f"d_ctx must be even, got {d_ctx}")
        self.vocab_size = vocab_size
        self.d_ctx = d_ctx
        u = d_ctx // 2
        self.table = Parameter(f"{prefix}.table", uniform_init(rng, (vocab_size, d_token)))
        self.mask_vec = Parameter(f"{prefix}.mask", uniform_init(rng, (d_token,)))
        self.l1_fwd = init_lstm(rng, f"{prefix}.l1f", d_token, u)
        self.l1_bwd = init_lstm(rng, f"{prefix}.l1b", d_token, u)
        self.l2_fwd = init_lstm(rng, f"{prefix}.l2f", 2 * u, u)
        self.l2_bwd = init_lstm(rng, f"{prefix}.l2b", 2 * u, u)
        self.w_out = Parameter(f"{prefix}.w_out", uniform_init(rng, (vocab_size, d_ctx)))
        self.b_out = Parameter(f"{prefix}.b_out", np.zeros(vocab_size))

    def params(self) -> list[Parameter]:
        return ([self.table, self.mask_vec, self.w_out, self.b_out]
                + self.l1_fwd.params() + self.l1_bwd.params()
                + self.l2_fwd.params() + self.l2_bwd.params())

    def encode(self, ids: list[int], masked: frozenset[int] = frozenset()) -> list[Tensor]:
        if not ids:
            raise ValueError("contextual encoder: empty sequence")
        xs = [self.mask_vec.t if i in masked else take_row(self.table.t, tid)
              for i, tid in enumerate(ids)]
        l1, _ = bilstm(xs, self.l1_fwd, self.l1_bwd)
        l2, _ = bilstm(l1, self.l2_fwd, self.l2_bwd)
        return l2

    def dist_at(self, vecs: list[Tensor], position: int) -> Tensor:
        return softmax(affine(self.w_out.t, vecs[position], self.b_out.t))

    def all_dists(self, ids: list[int]) -> list[Tensor]:
        vecs = self.encode(ids)
        return [self.dist_at(vecs, i) for i in range(len(ids))]

    def masked_token_prob(self, ids: list[int], position: int) -> float:
        """P(ids[position] | rest of the sequence), with the slot masked."""
        with no_tape():
            vecs = self.encode(ids, masked=frozenset({position}))
            dist = self.dist_at(vecs, position)
        return float(dist.data[ids[position]])


def train_mlm(encoder: ContextualEncoder, sequences: list[list[int]],
              mask_prob: float, epochs: int, lr: float,
              rng: np.random.Generator) -> list[float]:
    """Train the encoder to recover masked tokens; returns per-epoch mean loss.

    Epoch loss is the mean cross-entropy over masked positions; with
    mask_prob=0 no position is ever masked, so the loss is identically zero
    and no update happens.
    """
    params = encoder.params()
    losses = []
    for _ in range(epochs):
        total, count = 0.0, 0
        order = rng.permutation(len(sequences))
        for si in order:
            ids = sequences[si]
            masked = frozenset(i for i in range(len(ids)) if rng.random() < mask_prob)
            if not masked:
                continue
            zero_grads(params)
            with Tape() as tape:
                vecs = encoder.encode(ids, masked=masked)
                ces = [cross_entropy(encoder.dist_at(vecs, i), ids[i]) for i in sorted(masked)]
                loss = scale(add_n(ces), 1.0 / len(ces))
            tape.backward(loss)
            adam_step(params, lr=lr)
            total += loss.item()
            count += 1
        losses.append(total / count if count else 0.0)
    return losses


def embed_contextual(encoder: ContextualEncoder, ids: list[int]
                     ) -> tuple[list[Tensor], list[Tensor]]:
    """Per-token contextual vectors plus per-position output distributions."""
    vecs = encoder.encode(ids)
    dists = [encoder.dist_at(vecs, i) for i in range(len(ids))]
    return vecs, dists


def load_pretrained_vectors(path, vocab: Vocabulary, d_word: int,
                            table: Parameter) -> int:
    """Overwrite word-table rows from a text vector file; returns rows loaded.

    Format: one line per word, "word v1 v2 ... vd", space-separated decimals.
    Words outside the vocabulary are skipped; the reserved rows stay as
    initialized. Lets externally trained context-free vectors plug in for
    parity experiments.
    """
    loaded = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if len(values) != d_word:
                raise ValueError(
                    f"{path}: line {lineno}: expected {d_word} values, got {len(values)}")
            if word not in vocab:
                continue
            table.t.data[vocab.id(word)] = np.array([float(v) for v in values])
            loaded += 1
    return loaded


class MultiGrainEmbedder:
    """word-table row || char-BiLSTM vector || contextual vector, per token.

    The contextual component is always computed as fixed features (the MLM is
    pretrained); word table and char encoder are trainable until ``freeze()``,
    after which full representations are cached per surface/sequence.
    """

    def __init__(self, vocab: Vocabulary, word_table: Parameter,
                 char_encoder: CharEncoder, ctx_encoder: ContextualEncoder,
                 use_contextual: bool = True):
        self.vocab = vocab
        self.word_table = word_table
        self.char = char_encoder
        self.ctx = ctx_encoder
        self.use_contextual = use_contextual
        self.frozen = False
        self._ctx_cache: dict[tuple[int, ...], list[np.ndarray]] = {}
        self._word_cache: dict[str, np.ndarray] = {}
        self._batch_memo: dict[str, Tensor] | None = None

    @property
    def d_word(self) -> int:
        return self.word_table.data.shape[1]

    @property
    def d_out(self) -> int:
        return self.d_word + self.char.d_out + self.ctx.d_ctx

    @property
    def d_token(self) -> int:
        """Dimension of the decoder-input embedding (word || char)."""
        return self.d_word + self.char.d_out

    def params(self) -> list[Parameter]:
        return [self.word_table] + self.char.params() + self.ctx.params()

    def trainable_params(self) -> list[Parameter]:
        """Parameters updated by supervised pretraining (contextual MLM stays fixed)."""
        return [self.word_table] + self.char.params()

    def freeze(self) -> None:
        self.frozen = True

    def clear_caches(self) -> None:
        self._ctx_cache.clear()
        self._word_cache.clear()

    def batch_cache(self):
        """Share per-word embedding subgraphs across one taped batch.

        Safe only while every use lands on the same tape: the shared tensors
        accumulate gradients from all their consumers. The memo is dropped on
        exit, so the next update sees fresh parameter values.
        """
        embedder = self

        class _BatchCache:
            def __enter__(self):
                embedder._batch_memo = {}

            def __exit__(self, *exc):
                embedder._batch_memo = None
                return False

        return _BatchCache()

    def _ctx_vectors(self, ids: tuple[int, ...]) -> list[np.ndarray]:
        cached = self._ctx_cache.get(ids)
        if cached is None:
            if self.use_contextual:
                with no_tape():
                    cached = [v.data for v in self.ctx.encode(list(ids))]
            else:
                cached = [np.zeros(self.ctx.d_ctx) for _ in ids]
            self._ctx_cache[ids] = cached
        return cached

    def token_embedding(self, surface: str, token_id: int) -> Tensor:
        """Decoder-input embedding: word row || char vector (no context)."""
        if self.frozen:
            cached = self._word_cache.get(surface)
            if cached is None:
                with no_tape():
                    row = take_row(self.word_table.t, token_id)
                    cached = concat([row, self.char.embed_word(surface)]).data
                self._word_cache[surface] = cached
            return Tensor(cached)
        if self._batch_memo is not None:
            hit = self._batch_memo.get(surface)
            if hit is not None:
                return hit
        row = take_row(self.word_table.t, token_id)
        out = concat([row, self.char.embed_word(surface)])
        if self._batch_memo is not None:
            self._batch_memo[surface] = out
        return out

    def represent(self, s: TokenSeq) -> list[Tensor]:
        """Full multi-grain representation of a sequence, one tensor per token."""
        if not s:
            raise ValueError("represent: empty sequence")
        ids = tuple(self.vocab.encode(s))
        ctx_vecs = self._ctx_vectors(ids)
        out = []
        for word, tid, cv in zip(s.words, ids, ctx_vecs):
            out.append(concat([self.token_embedding(word, tid), Tensor(cv)]))
        return out
