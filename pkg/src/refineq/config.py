"""Run configuration: one INI file with a section per pipeline stage.

Defaults mirror the published training setup (Adam at 0.001, batch 64,
50/100 character encoder, 64-dim contextual vectors); the checked-in
configs/toy.ini overrides them with the pinned desk-scale task. Parsing is
strict: unknown sections or keys are rejected, and every value is checked
against the owning module's invariants before any run starts.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 1


@dataclass
class CorpusSection:
    n: int = 2000
    synth_seed: int = 11
    min_count: int = 1
    wrong_word_rate: float = 0.3
    fragment_count: int = 3
    distractor_max_len: int = 6


@dataclass
class ModelSection:
    d_word: int = 300
    d_char: int = 50
    d_char_hidden: int = 100
    d_ctx: int = 64
    d_hidden: int = 500
    decoder_layers: int = 1
    max_len: int = 20
    max_src_len: int = 40


@dataclass
class PretrainSection:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.001
    lr_decay: float = 1.0
    mlm_epochs: int = 10
    mlm_mask_prob: float = 0.15
    mlm_lr: float = 0.001


@dataclass
class RewardSection:
    d_emb: int = 50
    d_hidden: int = 64
    margin: float = 0.2
    epochs: int = 5
    lr: float = 0.001
    c1: float = 1.0
    gamma: float = 0.95
    use_wording: bool = True


@dataclass
class RlSection:
    episodes: int = 30
    batch_size: int = 64
    ppo_lr: float = 0.001
    reinforce_lr: float = 0.001
    lr_decay: float = 1.0
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    c2: float = 0.1
    entropy_weight: float = 0.01
    baseline_samples: int = 4
    inner_epochs: int = 4
    mixer_initial: int = 20
    mixer_decrement: int = 3
    mixer_interval: int = 2


@dataclass
class EvalSection:
    hits_ks: str = "1,3,5,10"

    def ks(self) -> tuple[int, ...]:
        try:
            return tuple(int(k.strip()) for k in self.hits_ks.split(","))
        except ValueError as err:
            raise ConfigError(f"eval.hits_ks: {self.hits_ks!r} is not a comma list of ints") from err


@dataclass
class PathsSection:
    work_dir: str = "runs/default"


_SECTIONS = {
    "run": RunSection,
    "corpus": CorpusSection,
    "model": ModelSection,
    "pretrain": PretrainSection,
    "reward": RewardSection,
    "rl": RlSection,
    "eval": EvalSection,
    "paths": PathsSection,
}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    reward: RewardSection = field(default_factory=RewardSection)
    rl: RlSection = field(default_factory=RlSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def validate(self) -> None:
        problems = []

        def check(cond, message):
            if not cond:
                problems.append(message)

        c = self.corpus
        check(c.n > 0, f"corpus.n must be > 0, got {c.n}")
        check(c.min_count >= 1, f"corpus.min_count must be >= 1, got {c.min_count}")
        check(0.0 <= c.wrong_word_rate <= 1.0,
              f"corpus.wrong_word_rate must be in [0,1], got {c.wrong_word_rate}")
        check(c.fragment_count >= 1, f"corpus.fragment_count must be >= 1, got {c.fragment_count}")
        check(c.distractor_max_len >= 1,
              f"corpus.distractor_max_len must be >= 1, got {c.distractor_max_len}")
        m = self.model
        for name in ("d_word", "d_char", "d_char_hidden", "d_ctx", "d_hidden",
                     "decoder_layers", "max_len", "max_src_len"):
            check(getattr(m, name) >= 1, f"model.{name} must be >= 1, got {getattr(m, name)}")
        check(m.d_ctx % 2 == 0, f"model.d_ctx must be even, got {m.d_ctx}")
        p = self.pretrain
        check(p.epochs >= 1, f"pretrain.epochs must be >= 1, got {p.epochs}")
        check(p.batch_size >= 1, f"pretrain.batch_size must be >= 1, got {p.batch_size}")
        check(p.lr > 0, f"pretrain.lr must be > 0, got {p.lr}")
        check(0.0 <= p.mlm_mask_prob <= 1.0,
              f"pretrain.mlm_mask_prob must be in [0,1], got {p.mlm_mask_prob}")
        r = self.reward
        check(r.margin >= 0, f"reward.margin must be >= 0, got {r.margin}")
        check(r.c1 >= 0, f"reward.c1 must be >= 0, got {r.c1}")
        check(0.0 <= r.gamma <= 1.0, f"reward.gamma must be in [0,1], got {r.gamma}")
        check(r.d_emb >= 1 and r.d_hidden >= 1, "reward dims must be >= 1")
        rl = self.rl
        check(rl.episodes >= 1, f"rl.episodes must be >= 1, got {rl.episodes}")
        check(rl.batch_size >= 1, f"rl.batch_size must be >= 1, got {rl.batch_size}")
        check(rl.clip_eps > 0, f"rl.clip_eps must be > 0, got {rl.clip_eps}")
        check(0.0 <= rl.gae_lambda < 1.0,
              f"rl.gae_lambda must be in [0,1), got {rl.gae_lambda}")
        check(rl.c2 >= 0, f"rl.c2 must be >= 0, got {rl.c2}")
        check(rl.entropy_weight >= 0,
              f"rl.entropy_weight must be >= 0, got {rl.entropy_weight}")
        check(rl.baseline_samples >= 1,
              f"rl.baseline_samples must be >= 1, got {rl.baseline_samples}")
        check(rl.inner_epochs >= 1, f"rl.inner_epochs must be >= 1, got {rl.inner_epochs}")
        check(rl.mixer_initial >= 0 and rl.mixer_decrement >= 0 and rl.mixer_interval >= 1,
              "rl.mixer_* out of range")
        for k in self.eval.ks():
            check(k >= 1, f"eval.hits_ks entries must be >= 1, got {k}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _coerce(section: str, key: str, raw: str, target_type):
    try:
        if target_type is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError as err:
        raise ConfigError(
            f"{section}.{key}: cannot parse {raw!r} as {target_type.__name__}") from err


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep keys case-sensitive
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        known = {f.name: f.type for f in fields(target)}
        types = {f.name: type(getattr(target, f.name)) for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            setattr(target, key, _coerce(section, key, raw, types[key]))
    cfg.validate()
    return cfg
