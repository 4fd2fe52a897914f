"""Multi-grain embeddings: char encoder, masked-LM encoder, concatenated views."""

import numpy as np
import pytest

from refineq.corpus import EOS_ID, UNK_ID, build_vocab, tokenize
from refineq.embedding import (CharEncoder, ContextualEncoder, MultiGrainEmbedder,
                               embed_contextual, load_pretrained_vectors, train_mlm)
from refineq.nn import Parameter, no_tape, uniform_init


def small_char_encoder(seed=0):
    _, cv = build_vocab(["water wataar zurich cats dogs"], min_count=1)
    return CharEncoder(cv, d_char=6, d_hidden=8, rng=np.random.default_rng(seed))


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_char_single_character_word():
    enc = small_char_encoder()
    vec = enc.embed_word("w")
    assert vec.data.shape == (16,)
    assert np.all(np.isfinite(vec.data))


def test_char_rejects_empty_word():
    enc = small_char_encoder()
    with pytest.raises(ValueError):
        enc.embed_word("")


def test_char_similar_spellings_distinct_and_finite():
    enc = small_char_encoder()
    v1 = enc.embed_word("water").data
    v2 = enc.embed_word("wataar").data
    assert np.all(np.isfinite(v1)) and np.all(np.isfinite(v2))
    assert not np.allclose(v1, v2)


def test_char_unknown_characters_fall_back_to_unknown_row():
    enc = small_char_encoder()
    v1 = enc.embed_word("@#").data       # both unknown
    v2 = enc.embed_word("\x01\x02").data  # also both unknown
    assert np.allclose(v1, v2)


def test_char_spelling_similarity_after_training(mini):
    # trained via the supervised objective in the mini fixture; misspelled
    # variants should sit closer than unrelated words (pinned seed)
    enc = mini.policy.embedder.char
    with no_tape():
        water = enc.embed_word("water").data
        wataar = enc.embed_word("wataar").data
        rowing = enc.embed_word("rowing").data
    assert cosine(water, wataar) > cosine(water, rowing)


def make_ctx(vocab_size=12, d_ctx=8, seed=0):
    return ContextualEncoder(vocab_size, d_ctx, d_ctx, np.random.default_rng(seed))


def test_contextual_length_one_sequence():
    ctx = make_ctx()
    vecs, dists = embed_contextual(ctx, [5])
    assert len(vecs) == 1 and len(dists) == 1
    assert vecs[0].data.shape == (8,)
    assert abs(dists[0].data.sum() - 1.0) < 1e-5


def test_contextual_vectors_depend_on_context():
    ctx = make_ctx()
    vecs_a, _ = embed_contextual(ctx, [5, 6, 7])
    vecs_b, _ = embed_contextual(ctx, [5, 9, 7])
    assert not np.allclose(vecs_a[0].data, vecs_b[0].data)


def test_contextual_distributions_are_probabilities():
    ctx = make_ctx()
    _, dists = embed_contextual(ctx, [1, 2, 3, 4, 5])
    for d in dists:
        assert abs(d.data.sum() - 1.0) < 1e-5
        assert np.all(d.data >= 0)


def test_train_mlm_smoke_and_learning():
    rng = np.random.default_rng(0)
    seqs = [[4, 5, 6, 3], [5, 6, 7, 3], [4, 6, 7, 3], [7, 5, 4, 3]] * 3
    ctx = make_ctx(vocab_size=9)
    losses = train_mlm(ctx, seqs, mask_prob=0.3, epochs=20, lr=5e-3, rng=rng)
    assert np.isfinite(losses[0])
    assert losses[19] < losses[0]


def test_train_mlm_zero_mask_prob_is_inert():
    ctx = make_ctx(vocab_size=9)
    before = {p.name: p.data.copy() for p in ctx.params()}
    losses = train_mlm(ctx, [[4, 5, 6]] * 10, mask_prob=0.0, epochs=3, lr=1e-3,
                       rng=np.random.default_rng(1))
    assert losses == [0.0, 0.0, 0.0]
    for p in ctx.params():
        assert np.array_equal(p.data, before[p.name])


def test_mlm_beats_uniform_on_held_out_positions(mini):
    # pinned on the mini fixture: gold-token probability at a masked slot
    # exceeds the uniform baseline on >= 90% of held-out positions
    ctx = mini.policy.embedder.ctx
    vocab = mini.vocab
    uniform = 1.0 / len(vocab)
    wins = total = 0
    for t in mini.dev:
        ids = vocab.encode(t.well) + [EOS_ID]
        for pos in range(len(ids)):
            p = ctx.masked_token_prob(ids, pos)
            wins += p > uniform
            total += 1
    assert wins / total >= 0.90, f"{wins}/{total}"


def test_represent_dimensions_and_determinism(mini):
    embedder = mini.policy.embedder
    seq = tokenize("why do cats eat bread ?")
    reps = embedder.represent(seq)
    assert len(reps) == 6
    expected = embedder.d_word + embedder.char.d_out + embedder.ctx.d_ctx
    for r in reps:
        assert r.data.shape == (expected,)
    again = embedder.represent(seq)
    for a, b in zip(reps, again):
        assert np.array_equal(a.data, b.data)


def test_unk_word_gets_nondegenerate_char_vector(mini):
    embedder = mini.policy.embedder
    vocab = mini.vocab
    assert vocab.id("kxqzt") == UNK_ID
    rep = embedder.represent(tokenize("kxqzt"))[0]
    other = embedder.represent(tokenize("zzzzz"))[0]
    char_slice = slice(embedder.d_word, embedder.d_word + embedder.char.d_out)
    assert np.any(rep.data[char_slice] != 0)
    assert not np.allclose(rep.data[char_slice], other.data[char_slice])


def test_pretrained_vector_loader(tmp_path):
    vocab, _ = build_vocab(["cats eat bread"], min_count=1)
    rng = np.random.default_rng(0)
    table = Parameter("wt", uniform_init(rng, (len(vocab), 3)))
    path = tmp_path / "vectors.txt"
    path.write_text("cats 1.0 2.0 3.0\nunknownword 9 9 9\nbread -1 0 1\n")
    loaded = load_pretrained_vectors(path, vocab, 3, table)
    assert loaded == 2
    assert np.allclose(table.data[vocab.id("cats")], [1.0, 2.0, 3.0])
    assert np.allclose(table.data[vocab.id("bread")], [-1.0, 0.0, 1.0])
    bad = tmp_path / "bad.txt"
    bad.write_text("cats 1.0 2.0\n")
    with pytest.raises(ValueError, match="line 1"):
        load_pretrained_vectors(bad, vocab, 3, table)


def test_contextual_ablation_changes_encoder_states(mini):
    seq = tokenize("why do cats eat bread ?")
    policy = mini.policy
    with no_tape():
        states_on = policy.encode(seq).matrix.data.copy()
    policy.embedder.use_contextual = False
    policy.embedder.clear_caches()
    try:
        with no_tape():
            states_off = policy.encode(seq).matrix.data.copy()
    finally:
        policy.embedder.use_contextual = True
        policy.embedder.clear_caches()
    assert not np.allclose(states_on, states_off)
