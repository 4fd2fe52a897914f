"""Acceptance suite: one test per criterion, one printed pass line each.

The heavyweight criteria (6-9) share a session fixture that runs the full
pinned-task pipeline (configs/toy.ini) for three training seeds through the
CLI entry points. Run with ``pytest tests/test_acceptance.py -s`` to see the
per-criterion lines as they pass.
"""

import csv
import math
import random
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

import refineq.cli as cli
from refineq.config import load_config
from refineq.corpus import (CharVocabulary, EOS_ID, TokenSeq, Vocabulary,
                            build_vocab, load_jsonl, tokenize)
from refineq.embedding import CharEncoder, ContextualEncoder
from refineq.evaluation import (bleu_n, build_index, dedup_answer_pool, hits_at_k,
                                rouge_l)
from refineq.seq2seq import MixerConfig
from refineq.nn import (Parameter, Tape, Tensor, add_n, cross_entropy, dot,
                        grad_check, log, no_tape, pick, scale, softmax, zero_grads)
from refineq.reward import (RewardConfig, RewardModel, RewardStack, discounted_returns,
                            ranking_accuracy)
from refineq.rl import (PPOConfig, ReinforceConfig, ValueHead, gae_advantages,
                        ppo_clip_loss, train_loop_ppo, train_loop_reinforce)
from refineq.seq2seq import PolicyConfig, build_policy

REPO = Path(__file__).resolve().parents[1]
TOY_CONFIG = REPO / "configs" / "toy.ini"


def report(criterion: str, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: PASS - {detail}")


# ----- criterion 1: gradient correctness over every network family ---------------


def _char_family(seed):
    rng = np.random.default_rng(seed)
    cv = CharVocabulary(list("abcdefg"))
    enc = CharEncoder(cv, d_char=3, d_hidden=4, rng=rng)
    r = rng.normal(size=8)
    word = "".join(rng.choice(list("abcdefg"), size=4))

    def loss_fn():
        return dot(enc.embed_word(word), Tensor(r))

    return enc.params(), loss_fn


def _mlm_family(seed):
    rng = np.random.default_rng(seed)
    enc = ContextualEncoder(vocab_size=8, d_token=4, d_ctx=4, rng=rng)
    ids = list(rng.integers(0, 8, size=4))
    masked = frozenset({1, 3})

    def loss_fn():
        vecs = enc.encode(ids, masked=masked)
        ces = [cross_entropy(enc.dist_at(vecs, i), ids[i]) for i in sorted(masked)]
        return scale(add_n(ces), 0.5)

    return enc.params(), loss_fn


def _policy_family(seed):
    vocab = Vocabulary(["cats", "eat", "bread", "?"])
    chars = CharVocabulary(list("catsebrd?<>unkop"))
    cfg = PolicyConfig(d_word=3, d_char=2, d_char_hidden=3, d_ctx=4, d_hidden=5,
                       decoder_layers=1, max_len=5, max_src_len=6)
    pol = build_policy(vocab, chars, cfg, seed=seed)
    x = tokenize("catz eat bred ?")
    y = tokenize("cats eat bread ?")

    def loss_fn():
        return pol.supervised_loss(x, y)

    return pol.all_params(), loss_fn


def _reward_family(seed):
    vocab = Vocabulary(["cats", "eat", "bread", "energy", "."])
    model = RewardModel(vocab, d_emb=3, d_hidden=4, margin=0.2,
                        rng=np.random.default_rng(seed))
    from refineq.nn import add_scalar, clip, sub
    q_pos = tokenize("cats eat bread")
    q_neg = tokenize("bread cats eat")
    a = tokenize("energy .")

    def loss_fn():
        gap = sub(model.sim(q_neg, a), model.sim(q_pos, a))
        return clip(add_scalar(gap, 0.2), 0.0, None)

    return model.params(), loss_fn


def _value_family(seed):
    rng = np.random.default_rng(seed)
    head = ValueHead(6, rng)
    state = rng.normal(size=6)
    from refineq.nn import add_scalar, mul

    def loss_fn():
        diff = add_scalar(head.value_t(state), -1.7)
        return mul(diff, diff)

    return head.params(), loss_fn


FAMILIES = [
    ("char-bilstm", _char_family),
    ("mlm-encoder", _mlm_family),
    ("seq2seq-policy", _policy_family),
    ("qa-reward", _reward_family),
    ("value-head", _value_family),
]


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    worst = {}
    for name, family in FAMILIES:
        worst[name] = 0.0
        for seed in range(50):
            params, loss_fn = family(seed)
            rep = grad_check(lambda: (params, loss_fn), max_coords=6,
                             rng=np.random.default_rng(seed))
            worst[name] = max(worst[name], rep.max_rel_error)
            assert rep.max_rel_error < 1e-3, (name, seed, rep)
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0, f"gradient sweep took {elapsed:.1f}s"
    report("criterion 1",
           f"5 families x 50 seeds, worst rel err "
           f"{max(worst.values()):.2e}, {elapsed:.0f}s")


# ----- criterion 2: metric oracles -------------------------------------------------


def _bleu_oracle(cand, ref, n):
    if not cand:
        return 0.0
    logs = []
    for k in range(1, n + 1):
        cand_grams = [tuple(cand[i:i + k]) for i in range(len(cand) - k + 1)]
        ref_grams = Counter(tuple(ref[i:i + k]) for i in range(len(ref) - k + 1))
        matched = sum(min(c, ref_grams.get(g, 0))
                      for g, c in Counter(cand_grams).items())
        total = len(cand_grams)
        if k == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        elif matched == 0 or total == 0:
            precision = (matched + 1.0) / (total + 1.0)
        else:
            precision = matched / total
        logs.append(math.log(precision))
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return bp * math.exp(sum(logs) / n)


def _rouge_oracle(cand, ref, beta=1.2):
    if not cand or not ref:
        return 0.0
    table = [[0] * (len(ref) + 1) for _ in range(len(cand) + 1)]
    for i in range(1, len(cand) + 1):
        for j in range(1, len(ref) + 1):
            if cand[i - 1] == ref[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    lcs = table[-1][-1]
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return (1 + beta * beta) * p * r / (r + beta * beta * p)


def test_criterion_2_metric_oracles():
    rng = random.Random(0)
    words = ["a", "b", "c", "d", "e", "f"]
    for _ in range(20):
        cand = [rng.choice(words) for _ in range(rng.randint(1, 10))]
        ref = [rng.choice(words) for _ in range(rng.randint(1, 10))]
        for n in range(1, 5):
            assert bleu_n(cand, ref, n) == pytest.approx(
                _bleu_oracle(cand, ref, n), abs=1e-9)
        assert rouge_l(cand, ref) == pytest.approx(_rouge_oracle(cand, ref), abs=1e-9)

    docs = ["cats eat bread and honey", "dogs chase cats", "the sky is red at sunset",
            "bread is made of wheat", "honey comes from bees and flowers"]
    index = build_index([tokenize(d) for d in docs])
    split_docs = [d.split() for d in docs]
    avg = sum(len(d) for d in split_docs) / len(split_docs)
    df = Counter()
    for d in split_docs:
        df.update(set(d))
    for query in ("cats bread", "honey bees", "wheat bread honey", "the red sky"):
        expect = []
        for d in split_docs:
            tf = Counter(d)
            s = 0.0
            for term in query.split():
                f = tf.get(term, 0)
                if f:
                    idf = math.log(1.0 + (5 - df[term] + 0.5) / (df[term] + 0.5))
                    s += idf * f * 2.2 / (f + 1.2 * (0.25 + 0.75 * len(d) / avg))
            expect.append(s)
        assert index.scores(tokenize(query)) == pytest.approx(expect, abs=1e-12)
        expect_rank = [str(i) for i in sorted(range(5), key=lambda i: (-expect[i], i))]
        assert index.top_k(tokenize(query), 5) == expect_rank
    report("criterion 2", "BLEU-1..4 + ROUGE-L match oracles to 1e-9 on 20 pairs; "
                          "BM25 matches the hand table exactly")


# ----- criterion 3: reward algebra -------------------------------------------------


def test_criterion_3_reward_algebra():
    rng = random.Random(3)
    for _ in range(1000):
        n = rng.randint(1, 12)
        rewards = [rng.uniform(-3, 3) for _ in range(n)]
        gamma = rng.random()
        got = discounted_returns(rewards, gamma)
        expect = [sum(gamma ** j * rewards[t + j] for j in range(n - t))
                  for t in range(n)]
        assert got == pytest.approx(expect, abs=1e-9)

    from refineq.reward import combined_reward
    wording = [0.5, 0.2, 0.9, 0.1]
    off = combined_reward(wording, 0.7, RewardConfig(c1=0.0))
    on = combined_reward(wording, 0.7, RewardConfig(c1=2.0))
    assert off[:-1] == on[:-1] and off == wording and on[-1] == wording[-1] + 1.4

    for _ in range(200):
        n = rng.randint(1, 10)
        rewards = [rng.uniform(-2, 2) for _ in range(n)]
        adv = gae_advantages(rewards, [0.0] * (n + 1), gamma=1.0, gae_lambda=1.0)
        assert adv == pytest.approx(discounted_returns(rewards, 1.0), abs=1e-9)
    report("criterion 3", "returns == brute-force suffix sums (1000 vectors); "
                          "final-step-only combination; GAE(1,1,V=0) == returns")


# ----- criterion 4: PPO mechanics --------------------------------------------------


def test_criterion_4_ppo_mechanics():
    vocab = Vocabulary(["a", "b"])
    chars = CharVocabulary(list("ab<>sunkope"))
    cfg = PolicyConfig(d_word=6, d_char=4, d_char_hidden=4, d_ctx=4, d_hidden=8,
                       decoder_layers=1, max_len=4, max_src_len=4)
    pol = build_policy(vocab, chars, cfg, seed=0)
    pol.embedder.freeze()
    snapshot = pol.clone()
    rng = np.random.default_rng(0)
    x = TokenSeq(("a", "b"))
    for _ in range(10):
        traj = snapshot.sample_decode(x, rng)
        scored = pol.score_actions(x, traj.actions)
        for rec, now in zip(traj.logps, scored.logps):
            assert math.exp(now.item() - rec) == 1.0  # exact ratio identity

    grid_rng = random.Random(4)
    for _ in range(1000):
        ratio = grid_rng.uniform(0.01, 3.0)
        adv = grid_rng.uniform(-2.0, 2.0)
        eps = grid_rng.choice([0.1, 0.2, 0.3])
        clipped = min(max(ratio, 1.0 - eps), 1.0 + eps)
        expect = min(ratio * adv, clipped * adv)
        assert ppo_clip_loss(ratio, adv, eps).item() == pytest.approx(expect, abs=1e-12)
    report("criterion 4", "ratio == 1 exactly after snapshot sync; clip surrogate "
                          "matches the piecewise definition on a 1000-point grid")


# ----- criterion 5: policy-gradient sanity on the enumerable MDP -------------------


P_REWARD = [[1.0, 0.2, 0.0], [0.0, 0.5, 1.5], [0.3, 0.1, 0.8]]  # r0 by (a0, a1)... below


def _mdp_rewards(a0, a1):
    # per-step rewards for the 2-step/3-action MDP
    r0 = [0.5, 1.0, 0.1][a0]
    r1 = P_REWARD[a0][a1]
    return [r0, r1]


def _mdp_logits(seed=0):
    rng = np.random.default_rng(seed)
    return Parameter("logits", rng.normal(size=(2, 3)) * 0.3)


def _traj_term(logits, a0, a1, weights):
    from refineq.nn import take_row
    lp0 = log(pick(softmax(take_row(logits.t, 0)), a0))
    lp1 = log(pick(softmax(take_row(logits.t, 1)), a1))
    return add_n([scale(lp0, weights[0]), scale(lp1, weights[1])])


def _exact_expected_gradient(logits, baseline=0.0):
    zero_grads([logits])
    probs = [np.exp(r - r.max()) / np.exp(r - r.max()).sum() for r in logits.data]
    with Tape() as tape:
        terms = []
        for a0 in range(3):
            for a1 in range(3):
                rewards = _mdp_rewards(a0, a1)
                returns = discounted_returns(rewards, 1.0)
                weights = [probs[0][a0] * probs[1][a1] * (ret - baseline)
                           for ret in returns]
                terms.append(_traj_term(logits, a0, a1, weights))
        total = add_n(terms)
    tape.backward(total)
    return logits.t.grad.copy()


def test_criterion_5_policy_gradient_sanity():
    logits = _mdp_logits()
    exact = _exact_expected_gradient(logits)
    exact_shifted = _exact_expected_gradient(logits, baseline=0.37)
    assert np.max(np.abs(exact - exact_shifted)) < 1e-6  # baseline invariance

    probs = [np.exp(r - r.max()) / np.exp(r - r.max()).sum() for r in logits.data]
    rng = np.random.default_rng(9)
    n = 10000
    zero_grads([logits])
    with Tape() as tape:
        terms = []
        for _ in range(n):
            a0 = int(rng.choice(3, p=probs[0]))
            a1 = int(rng.choice(3, p=probs[1]))
            returns = discounted_returns(_mdp_rewards(a0, a1), 1.0)
            terms.append(_traj_term(logits, a0, a1,
                                    [returns[0] / n, returns[1] / n]))
        total = add_n(terms)
    tape.backward(total)
    sampled = logits.t.grad.copy()
    cosine = float((exact.ravel() @ sampled.ravel())
                   / (np.linalg.norm(exact) * np.linalg.norm(sampled)))
    assert cosine > 0.9, cosine
    report("criterion 5", f"sampled-vs-exact gradient cosine {cosine:.3f} at 10k "
                          "samples; constant baseline shifts the exact gradient < 1e-6")


# ----- criteria 6-9: the pinned toy pipeline ---------------------------------------


class SeedRun:
    def __init__(self, base: Path, seed: int):
        self.seed = seed
        self.dir = base / f"seed{seed}"
        cfg = load_config(TOY_CONFIG)
        cfg.run.seed = seed
        cfg.paths.work_dir = str(self.dir)
        self.cfg = cfg

    def execute(self):
        t0 = time.perf_counter()
        cli.cmd_synth(self.cfg)
        cli.cmd_pretrain(self.cfg)
        cli.cmd_train_reward(self.cfg)
        cli.cmd_train_rl(self.cfg, algo="ppo")
        cli.cmd_train_rl(self.cfg, algo="reinforce")
        cli.cmd_eval(self.cfg, algo="ppo")
        self.elapsed = time.perf_counter() - t0
        self.dev = load_jsonl(self.dir / "corpus" / "dev.jsonl")
        self.test = load_jsonl(self.dir / "corpus" / "test.jsonl")
        self.pretrained = cli.load_policy(self.dir / "pretrain" / "policy.ckpt")
        self.ppo = cli.load_policy(self.dir / "rl" / "policy-ppo.ckpt")
        self.reinforce = cli.load_policy(self.dir / "rl" / "policy-reinforce.ckpt")
        self.bleu = {
            "ill": self._dev_bleu(lambda q: q),
            "pretrained": self._dev_bleu(self.pretrained.greedy_decode),
            "ppo": self._dev_bleu(self.ppo.greedy_decode),
            "reinforce": self._dev_bleu(self.reinforce.greedy_decode),
        }
        return self

    def _dev_bleu(self, generate):
        return float(np.mean([bleu_n(generate(t.ill), t.well, 1) for t in self.dev]))

    def metrics_rows(self, algo):
        with open(self.dir / "rl" / f"metrics-{algo}.csv") as fh:
            return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pinned(tmp_path_factory):
    base = tmp_path_factory.mktemp("pinned")
    runs = {}
    for seed in (1, 2, 3):
        runs[seed] = SeedRun(base, seed).execute()
        print(f"[pinned] seed {seed}: "
              + ", ".join(f"{k}={v:.3f}" for k, v in runs[seed].bleu.items())
              + f" ({runs[seed].elapsed:.0f}s)")
    return runs


def test_criterion_6_directional_ordering_and_gain(pinned):
    ordering_hits = 0
    gain_hits = 0
    for seed, run in pinned.items():
        b = run.bleu
        if b["ppo"] >= b["reinforce"] and b["reinforce"] > b["pretrained"] > b["ill"]:
            ordering_hits += 1
        if b["ppo"] - b["pretrained"] >= 0.03:
            gain_hits += 1
    assert ordering_hits >= 2, {s: r.bleu for s, r in pinned.items()}
    assert gain_hits >= 2, {s: r.bleu for s, r in pinned.items()}
    slowest = max(run.elapsed for run in pinned.values())
    assert slowest < 1800.0, f"pipeline took {slowest:.0f}s"
    report("criterion 6",
           f"ordering held in {ordering_hits}/3 seeds, PPO gain >= 3 points in "
           f"{gain_hits}/3 seeds, slowest pipeline {slowest:.0f}s < 30 min")


def test_criterion_7_ppo_stability(pinned):
    # five RL seeds on the seed-1 pretrain/reward artifacts, shortened pure-RL
    # runs (no teacher-forced prefix): the stability claim concerns the
    # optimizers' training curves, not final quality
    run = pinned[1]
    splits = {name: load_jsonl(run.dir / "corpus" / f"{name}.jsonl")
              for name in ("train", "dev")}
    model = cli.load_reward_model(run.dir / "reward" / "reward.ckpt")
    finals = {"ppo": [], "reinforce": []}
    reach90 = {"ppo": [], "reinforce": []}
    pure_rl = MixerConfig(initial_prefix=0)
    for algo in ("ppo", "reinforce"):
        for rl_seed in (101, 102, 103, 104, 105):
            policy = cli.load_policy(run.dir / "pretrain" / "policy.ckpt")
            policy.embedder.freeze()
            stack = cli._reward_stack(run.cfg, policy, model)
            if algo == "ppo":
                rows = train_loop_ppo(
                    splits["train"], [], policy, stack,
                    PPOConfig(episodes=30, batch_size=16, lr=run.cfg.rl.ppo_lr,
                              c2=run.cfg.rl.c2, lr_decay=run.cfg.rl.lr_decay,
                              mixer=pure_rl), seed=rl_seed, keep_best=False)
            else:
                rows = train_loop_reinforce(
                    splits["train"], [], policy, stack,
                    ReinforceConfig(episodes=30, batch_size=16,
                                    lr=run.cfg.rl.reinforce_lr,
                                    entropy_weight=run.cfg.rl.entropy_weight,
                                    baseline_samples=run.cfg.rl.baseline_samples,
                                    lr_decay=run.cfg.rl.lr_decay, mixer=pure_rl),
                    seed=rl_seed, keep_best=False)
            curve = [row["mean_reward"] for row in rows]
            finals[algo].append(curve[-1])
            threshold = 0.9 * curve[-1]
            reach90[algo].append(next(i for i, v in enumerate(curve)
                                      if v >= threshold))
    std_ppo = float(np.std(finals["ppo"]))
    std_rf = float(np.std(finals["reinforce"]))
    assert std_ppo <= std_rf, (finals, std_ppo, std_rf)
    mean_reach_ppo = float(np.mean(reach90["ppo"]))
    mean_reach_rf = float(np.mean(reach90["reinforce"]))
    assert mean_reach_ppo <= mean_reach_rf, (reach90, mean_reach_ppo, mean_reach_rf)
    report("criterion 7",
           f"final-reward std PPO {std_ppo:.3f} <= REINFORCE {std_rf:.3f}; "
           f"mean episodes to 90% of final reward {mean_reach_ppo:.1f} <= "
           f"{mean_reach_rf:.1f} (5 seeds)")


def test_criterion_8_retrieval_direction_and_monotonicity(pinned):
    run = pinned[1]
    index, gold_map = dedup_answer_pool(run.test)
    ill_hits = np.mean([hits_at_k(t.ill, gold_map[t.id], index, 1)
                        for t in run.test])
    refined_hits = np.mean([hits_at_k(run.ppo.greedy_decode(t.ill),
                                      gold_map[t.id], index, 1)
                            for t in run.test])
    assert refined_hits >= ill_hits, (refined_hits, ill_hits)
    for t in run.test[:50]:
        query = run.ppo.greedy_decode(t.ill)
        values = [hits_at_k(query, gold_map[t.id], index, k) for k in (1, 3, 5, 10)]
        assert all(b >= a for a, b in zip(values, values[1:]))
    report("criterion 8",
           f"Hits@1 refined {refined_hits:.3f} >= ill-formed {ill_hits:.3f}; "
           "Hits@K monotone in K on every checked query")


def test_criterion_9_reward_model_quality_and_freezing(pinned):
    run = pinned[1]
    model = cli.load_reward_model(run.dir / "reward" / "reward.ckpt")
    triples = [t for t in run.dev if t.ill.words != t.well.words]
    accuracy = ranking_accuracy(model, triples)
    assert accuracy >= 0.85, accuracy

    checksum_before = model.checksum()
    policy = cli.load_policy(run.dir / "pretrain" / "policy.ckpt")
    policy.embedder.freeze()
    stack = cli._reward_stack(run.cfg, policy, model)
    train_loop_ppo(run.dev[:8], [], policy, stack,
                   PPOConfig(episodes=1, batch_size=4, inner_epochs=1, lr=1e-4),
                   seed=0, keep_best=False)
    assert model.checksum() == checksum_before
    report("criterion 9",
           f"held-out ranking accuracy {accuracy:.3f} >= 0.85; reward checksum "
           "unchanged by an RL episode")


def test_pinned_generate_repairs_corrupted_template(pinned):
    # recorded once from the deterministic seed-1 pipeline and frozen: a
    # misspelled template question comes back in its exact well-formed shape
    run = pinned[1]
    out = run.ppo.greedy_decode(tokenize("what si owod mdae or ?"))
    assert out.text == "what is wood made of ?"
    report("pinned generate", f"'what si owod mdae or ?' -> '{out.text}'")


# ----- criterion 10: determinism ---------------------------------------------------


def test_criterion_10_rerun_determinism(tmp_path):
    # identical manifests must reproduce hash-identical artifacts; scale-free,
    # so a reduced copy of the pinned config keeps this fast
    cfg = load_config(TOY_CONFIG)
    cfg.corpus.n = 120
    cfg.pretrain.epochs = 2
    cfg.pretrain.mlm_epochs = 2
    cfg.reward.epochs = 1
    cfg.rl.episodes = 3
    cfg.rl.batch_size = 4
    cfg.model.d_hidden = 16
    cfg.model.d_word = 8
    cfg.paths.work_dir = str(tmp_path / "run")
    cli.cmd_synth(cfg)
    cli.cmd_pretrain(cfg)
    cli.cmd_train_reward(cfg)
    cli.cmd_train_rl(cfg, algo="ppo")
    targets = [
        tmp_path / "run" / "corpus" / "train.jsonl",
        tmp_path / "run" / "corpus" / "dev.jsonl",
        tmp_path / "run" / "corpus" / "test.jsonl",
        tmp_path / "run" / "pretrain" / "policy.ckpt",
        tmp_path / "run" / "pretrain" / "curve.csv",
        tmp_path / "run" / "rl" / "policy-ppo.ckpt",
        tmp_path / "run" / "rl" / "metrics-ppo.csv",
    ]
    first = {p: p.read_bytes() for p in targets}
    cli.cmd_synth(cfg, force=True)
    cli.cmd_pretrain(cfg, force=True)
    cli.cmd_train_rl(cfg, algo="ppo", force=True)
    for p in targets:
        assert p.read_bytes() == first[p], f"rerun changed {p}"
    report("criterion 10", f"{len(targets)} artifacts byte-identical across reruns")
