"""Shared fixtures: one small trained pipeline reused across module tests.

The "mini" setup (240 triples, default corruption, ~25s to build) gives the
embedding/reward/rl tests a trained masked LM, a partially trained policy,
and a frozen reward model without each test paying for training.
"""

import numpy as np
import pytest

from refineq.corpus import DEFAULT_GRAMMAR, EOS_ID, build_vocab, synth_corpus
from refineq.embedding import train_mlm
from refineq.reward import train_reward_model
from refineq.seq2seq import PolicyConfig, build_policy, pretrain_policy

MINI_POLICY_CONFIG = PolicyConfig(d_word=20, d_char=6, d_char_hidden=8, d_ctx=16,
                                  d_hidden=48, decoder_layers=1, max_len=14,
                                  max_src_len=30)


class MiniSetup:
    def __init__(self):
        self.triples = synth_corpus(DEFAULT_GRAMMAR, 240, seed=7)
        self.train = self.triples[:200]
        self.dev = self.triples[200:]
        self.vocab, self.char_vocab = build_vocab(self.train, min_count=2)
        self.policy = build_policy(self.vocab, self.char_vocab, MINI_POLICY_CONFIG, seed=1)
        self.mlm_seqs = [self.vocab.encode(t.well) + [EOS_ID] for t in self.train]
        self.mlm_losses = train_mlm(self.policy.embedder.ctx, self.mlm_seqs,
                                    mask_prob=0.15, epochs=10, lr=2e-3,
                                    rng=np.random.default_rng(2))
        self.pretrain_history = pretrain_policy(
            self.policy, self.train, self.dev, epochs=14, batch_size=8, lr=2e-3,
            rng=np.random.default_rng(3), lr_decay=0.95)
        self.reward_model, self.reward_losses = train_reward_model(
            self.train, self.vocab, d_emb=16, d_hidden=24, margin=0.2,
            epochs=6, lr=2e-3, seed=4)


@pytest.fixture(scope="session")
def mini():
    return MiniSetup()
