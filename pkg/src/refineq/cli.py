"""Command-line pipeline: synth | pretrain | train-reward | train-rl | generate | eval.

Each stage writes its artifacts under [paths].work_dir together with a
manifest recording the config hash, input hashes, and output hashes, so a
rerun with an identical manifest reproduces identical files. Exit codes:
0 success, 2 configuration/usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .config import ConfigError, RunConfig, load_config
from .corpus import (DEFAULT_GRAMMAR, EOS_ID, CorruptionSpec, CharVocabulary,
                     TokenSeq, Vocabulary, build_vocab, load_jsonl, save_jsonl,
                     synth_corpus, tokenize)
from .embedding import train_mlm
from .evaluation import (build_index, dedup_answer_pool, evaluate_generation,
                         report_csv_lines, report_table)
from .nn import load_params, save_params
from .reward import (RewardConfig, RewardModel, RewardStack, WordingScorer,
                     ranking_accuracy, train_reward_model)
from .rl import (METRICS_COLUMNS, PPOConfig, ReinforceConfig, train_loop_ppo,
                 train_loop_reinforce)
from .seq2seq import MixerConfig, Policy, PolicyConfig, build_policy, pretrain_policy


class MissingArtifact(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(directory: Path, command: str, cfg: RunConfig,
                   inputs: list[Path], outputs: list[Path]) -> Path:
    manifest = {
        "format": "refineq-manifest v1",
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.run.seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _corruption_spec(cfg: RunConfig) -> CorruptionSpec:
    return CorruptionSpec(
        wrong_word_rate=cfg.corpus.wrong_word_rate,
        fragment_count=cfg.corpus.fragment_count,
        distractor_max_len=cfg.corpus.distractor_max_len,
        seed=cfg.corpus.synth_seed,
    )


def _policy_config(cfg: RunConfig) -> PolicyConfig:
    m = cfg.model
    return PolicyConfig(d_word=m.d_word, d_char=m.d_char, d_char_hidden=m.d_char_hidden,
                        d_ctx=m.d_ctx, d_hidden=m.d_hidden,
                        decoder_layers=m.decoder_layers, max_len=m.max_len,
                        max_src_len=m.max_src_len)


def corpus_paths(cfg: RunConfig) -> dict[str, Path]:
    base = Path(cfg.paths.work_dir) / "corpus"
    return {split: base / f"{split}.jsonl" for split in ("train", "dev", "test")}


def load_splits(cfg: RunConfig) -> dict[str, list]:
    paths = corpus_paths(cfg)
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise MissingArtifact(f"corpus files missing (run synth first): {missing}")
    return {split: load_jsonl(path) for split, path in paths.items()}


def build_vocabs(cfg: RunConfig, train) -> tuple[Vocabulary, CharVocabulary]:
    return build_vocab(train, min_count=cfg.corpus.min_count)


def _outputs_exist(paths: list[Path]) -> list[Path]:
    return [p for p in paths if p.exists()]


def _require_force(paths: list[Path], force: bool, command: str) -> None:
    existing = _outputs_exist(paths)
    if existing and not force:
        raise ConfigError(
            f"{command}: outputs already exist (use --force to overwrite): "
            f"{[str(p) for p in existing]}")


# ----- stage commands ------------------------------------------------------------


def cmd_synth(cfg: RunConfig, force: bool = False) -> None:
    paths = corpus_paths(cfg)
    _require_force(list(paths.values()), force, "synth")
    triples = synth_corpus(DEFAULT_GRAMMAR, cfg.corpus.n, cfg.corpus.synth_seed,
                           spec=_corruption_spec(cfg))
    n = len(triples)
    n_train = int(n * 0.8)
    n_dev = int(n * 0.1)
    splits = {
        "train": triples[:n_train],
        "dev": triples[n_train:n_train + n_dev],
        "test": triples[n_train + n_dev:],
    }
    paths["train"].parent.mkdir(parents=True, exist_ok=True)
    for split, items in splits.items():
        save_jsonl(items, paths[split])
    write_manifest(paths["train"].parent, "synth", cfg, [], list(paths.values()))
    print(f"synth: wrote {n_train}/{n_dev}/{n - n_train - n_dev} triples under "
          f"{paths['train'].parent}")


def _meta_path(ckpt: Path) -> Path:
    return ckpt.with_suffix(".meta.json")


def save_policy(policy: Policy, ckpt: Path) -> None:
    save_params(ckpt, policy.state_arrays())
    meta = {
        "format": "refineq-meta v1",
        "vocab": policy.vocab.id_to_word[4:],  # reserved ids are implicit
        "min_count": policy.vocab.min_count,
        "chars": policy.embedder.char.char_vocab.id_to_char[1:],
        "model": {
            "d_word": policy.cfg.d_word, "d_char": policy.cfg.d_char,
            "d_char_hidden": policy.cfg.d_char_hidden, "d_ctx": policy.cfg.d_ctx,
            "d_hidden": policy.cfg.d_hidden, "decoder_layers": policy.cfg.decoder_layers,
            "max_len": policy.cfg.max_len, "max_src_len": policy.cfg.max_src_len,
        },
    }
    _meta_path(ckpt).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_policy(ckpt: Path) -> Policy:
    if not ckpt.exists():
        raise MissingArtifact(f"policy checkpoint missing: {ckpt}")
    meta_file = _meta_path(ckpt)
    if not meta_file.exists():
        raise MissingArtifact(f"policy metadata missing: {meta_file}")
    meta = json.loads(meta_file.read_text())
    vocab = Vocabulary(meta["vocab"], min_count=meta.get("min_count", 1))
    chars = CharVocabulary(meta["chars"])
    policy = build_policy(vocab, chars, PolicyConfig(**meta["model"]), seed=0)
    policy.load_state_arrays(load_params(ckpt))
    return policy


def cmd_pretrain(cfg: RunConfig, force: bool = False) -> None:
    out_dir = Path(cfg.paths.work_dir) / "pretrain"
    ckpt = out_dir / "policy.ckpt"
    curve = out_dir / "curve.csv"
    _require_force([ckpt, curve], force, "pretrain")
    splits = load_splits(cfg)
    vocab, chars = build_vocabs(cfg, splits["train"])
    policy = build_policy(vocab, chars, _policy_config(cfg), seed=cfg.run.seed)

    mlm_seqs = [vocab.encode(t.well) + [EOS_ID] for t in splits["train"]]
    train_mlm(policy.embedder.ctx, mlm_seqs, mask_prob=cfg.pretrain.mlm_mask_prob,
              epochs=cfg.pretrain.mlm_epochs, lr=cfg.pretrain.mlm_lr,
              rng=np.random.default_rng(cfg.run.seed + 1000))
    history = pretrain_policy(policy, splits["train"], splits["dev"],
                              epochs=cfg.pretrain.epochs,
                              batch_size=cfg.pretrain.batch_size,
                              lr=cfg.pretrain.lr,
                              rng=np.random.default_rng(cfg.run.seed + 2000),
                              lr_decay=cfg.pretrain.lr_decay)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_policy(policy, ckpt)
    with open(curve, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "dev_loss"])
        writer.writeheader()
        writer.writerows(history)
    write_manifest(out_dir, "pretrain", cfg, list(corpus_paths(cfg).values()),
                   [ckpt, _meta_path(ckpt), curve])
    best = min(h["dev_loss"] for h in history)
    print(f"pretrain: {len(history)} epochs, best dev loss {best:.4f}, saved {ckpt}")


def save_reward_model(model: RewardModel, ckpt: Path) -> None:
    save_params(ckpt, model.state_arrays())
    meta = {
        "format": "refineq-meta v1",
        "vocab": model.vocab.id_to_word[4:],
        "min_count": model.vocab.min_count,
        "margin": model.margin,
        "d_emb": model.emb.data.shape[1],
        "d_hidden": model.d_hidden,
    }
    _meta_path(ckpt).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_reward_model(ckpt: Path) -> RewardModel:
    if not ckpt.exists():
        raise MissingArtifact(f"reward checkpoint missing: {ckpt}")
    meta = json.loads(_meta_path(ckpt).read_text())
    vocab = Vocabulary(meta["vocab"], min_count=meta.get("min_count", 1))
    model = RewardModel(vocab, meta["d_emb"], meta["d_hidden"], meta["margin"],
                        np.random.default_rng(0))
    model.load_state_arrays(load_params(ckpt))
    model.frozen = True
    return model


def cmd_train_reward(cfg: RunConfig, force: bool = False) -> None:
    out_dir = Path(cfg.paths.work_dir) / "reward"
    ckpt = out_dir / "reward.ckpt"
    _require_force([ckpt], force, "train-reward")
    splits = load_splits(cfg)
    vocab, _ = build_vocabs(cfg, splits["train"])
    model, losses = train_reward_model(
        splits["train"], vocab, d_emb=cfg.reward.d_emb, d_hidden=cfg.reward.d_hidden,
        margin=cfg.reward.margin, epochs=cfg.reward.epochs, lr=cfg.reward.lr,
        seed=cfg.run.seed + 3000)
    accuracy = ranking_accuracy(model, splits["dev"])
    out_dir.mkdir(parents=True, exist_ok=True)
    save_reward_model(model, ckpt)
    write_manifest(out_dir, "train-reward", cfg, list(corpus_paths(cfg).values()),
                   [ckpt, _meta_path(ckpt)])
    print(f"train-reward: final hinge loss {losses[-1]:.4f}, "
          f"held-out ranking accuracy {accuracy:.3f}, saved {ckpt}")


def _reward_stack(cfg: RunConfig, policy: Policy, model: RewardModel) -> RewardStack:
    scorer = None
    if cfg.reward.use_wording:
        scorer = WordingScorer(policy.clone(), policy.embedder.ctx)
    return RewardStack(scorer, model,
                       RewardConfig(c1=cfg.reward.c1, gamma=cfg.reward.gamma),
                       policy.vocab)


def _mixer(cfg: RunConfig) -> MixerConfig:
    return MixerConfig(initial_prefix=cfg.rl.mixer_initial,
                       decrement=cfg.rl.mixer_decrement,
                       interval=cfg.rl.mixer_interval)


def cmd_train_rl(cfg: RunConfig, algo: str, force: bool = False) -> None:
    if algo not in ("reinforce", "ppo"):
        raise ConfigError(f"--algo must be reinforce or ppo, got {algo!r}")
    out_dir = Path(cfg.paths.work_dir) / "rl"
    ckpt = out_dir / f"policy-{algo}.ckpt"
    metrics_csv = out_dir / f"metrics-{algo}.csv"
    _require_force([ckpt, metrics_csv], force, "train-rl")
    splits = load_splits(cfg)
    pretrain_ckpt = Path(cfg.paths.work_dir) / "pretrain" / "policy.ckpt"
    reward_ckpt = Path(cfg.paths.work_dir) / "reward" / "reward.ckpt"
    policy = load_policy(pretrain_ckpt)
    model = load_reward_model(reward_ckpt)
    policy.embedder.freeze()
    stack = _reward_stack(cfg, policy, model)
    seed = cfg.run.seed + 4000
    if algo == "ppo":
        rows = train_loop_ppo(
            splits["train"], splits["dev"], policy, stack,
            PPOConfig(episodes=cfg.rl.episodes, batch_size=cfg.rl.batch_size,
                      lr=cfg.rl.ppo_lr, clip_eps=cfg.rl.clip_eps,
                      gae_lambda=cfg.rl.gae_lambda, c2=cfg.rl.c2,
                      inner_epochs=cfg.rl.inner_epochs, lr_decay=cfg.rl.lr_decay,
                      mixer=_mixer(cfg)),
            seed=seed)
    else:
        rows = train_loop_reinforce(
            splits["train"], splits["dev"], policy, stack,
            ReinforceConfig(episodes=cfg.rl.episodes, batch_size=cfg.rl.batch_size,
                            lr=cfg.rl.reinforce_lr,
                            entropy_weight=cfg.rl.entropy_weight,
                            baseline_samples=cfg.rl.baseline_samples,
                            lr_decay=cfg.rl.lr_decay, mixer=_mixer(cfg)),
            seed=seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_policy(policy, ckpt)
    with open(metrics_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        writer.writerows([{k: row[k] for k in METRICS_COLUMNS} for row in rows])
    write_manifest(out_dir, f"train-rl-{algo}", cfg,
                   [pretrain_ckpt, reward_ckpt] + list(corpus_paths(cfg).values()),
                   [ckpt, _meta_path(ckpt), metrics_csv])
    print(f"train-rl[{algo}]: {len(rows)} episodes, final dev BLEU-1 "
          f"{rows[-1]['bleu1_dev']:.3f}, saved {ckpt}")


def cmd_generate(cfg: RunConfig, text: str, stage: str = "rl", algo: str = "ppo") -> None:
    if stage == "rl":
        ckpt = Path(cfg.paths.work_dir) / "rl" / f"policy-{algo}.ckpt"
    elif stage == "pretrain":
        ckpt = Path(cfg.paths.work_dir) / "pretrain" / "policy.ckpt"
    else:
        raise ConfigError(f"--stage must be rl or pretrain, got {stage!r}")
    policy = load_policy(ckpt)
    question = tokenize(text)
    if not question:
        raise ConfigError("generate: empty input question")
    print(policy.greedy_decode(question).text)


def cmd_eval(cfg: RunConfig, algo: str = "ppo", force: bool = False) -> None:
    out_dir = Path(cfg.paths.work_dir) / "eval"
    report_path = out_dir / "report.csv"
    _require_force([report_path], force, "eval")
    splits = load_splits(cfg)
    test = splits["test"]
    index, gold_map = dedup_answer_pool(test)
    ks = cfg.eval.ks()
    pretrained = load_policy(Path(cfg.paths.work_dir) / "pretrain" / "policy.ckpt")
    refined = load_policy(Path(cfg.paths.work_dir) / "rl" / f"policy-{algo}.ckpt")
    rows = [
        ("ill-formed", evaluate_generation(lambda q: q, test, index, ks, gold_map)),
        ("seq2seq-pretrained",
         evaluate_generation(pretrained.greedy_decode, test, index, ks, gold_map)),
        (f"rl-{algo}",
         evaluate_generation(refined.greedy_decode, test, index, ks, gold_map)),
    ]
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path.write_text("\n".join(report_csv_lines(rows)) + "\n")
    write_manifest(out_dir, "eval", cfg, list(corpus_paths(cfg).values()),
                   [report_path])
    print(report_table(rows))
    print(f"eval: wrote {report_path}")


# ----- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refineq",
        description="Question refinement: corrupt, repair, and re-rank noisy questions.")
    parser.add_argument("--config", required=True, help="path to an INI run config")
    parser.add_argument("--seed", type=int, default=None, help="override [run].seed")
    parser.add_argument("--force", action="store_true",
                        help="overwrite existing stage outputs")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", help="generate the synthetic corpus splits")
    sub.add_parser("pretrain", help="train the masked LM and the supervised policy")
    sub.add_parser("train-reward", help="train and freeze the QA similarity model")
    rl = sub.add_parser("train-rl", help="fine-tune the policy with RL")
    rl.add_argument("--algo", choices=("reinforce", "ppo"), required=True)
    gen = sub.add_parser("generate", help="refine one question with a trained policy")
    gen.add_argument("--text", required=True)
    gen.add_argument("--stage", choices=("rl", "pretrain"), default="rl")
    gen.add_argument("--algo", choices=("reinforce", "ppo"), default="ppo")
    ev = sub.add_parser("eval", help="score ill-formed vs pretrained vs RL-refined")
    ev.add_argument("--algo", choices=("reinforce", "ppo"), default="ppo")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.run.seed = args.seed
        if args.command == "synth":
            cmd_synth(cfg, force=args.force)
        elif args.command == "pretrain":
            cmd_pretrain(cfg, force=args.force)
        elif args.command == "train-reward":
            cmd_train_reward(cfg, force=args.force)
        elif args.command == "train-rl":
            cmd_train_rl(cfg, algo=args.algo, force=args.force)
        elif args.command == "generate":
            cmd_generate(cfg, text=args.text, stage=args.stage, algo=args.algo)
        elif args.command == "eval":
            cmd_eval(cfg, algo=args.algo, force=args.force)
        return 0
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failures: missing artifacts, training errors
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
