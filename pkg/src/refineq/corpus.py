"""Corpus model: tokenization, vocabularies, corruption operators, synthesis.

Instances are (ill, well, answer) triples over one shared word vocabulary.
Ill-formed questions are produced from well-formed ones by three operators
(misspelling, fragment reordering, distractor insertion) applied singly or in
a randomized composite. All corruption is a pure function of
(input, spec, rng state).
"""

from __future__ import annotations

import json
import random
import re
import warnings
import zlib
from collections import Counter
from dataclasses import dataclass, field

PAD_ID, UNK_ID, SOS_ID, EOS_ID = 0, 1, 2, 3
PAD_WORD, UNK_WORD, SOS_WORD, EOS_WORD = "<pad>", "<unk>", "<sos>", "<eos>"
RESERVED = [PAD_WORD, UNK_WORD, SOS_WORD, EOS_WORD]

# words, clitics ("n't", "'s", ...), punctuation as standalone tokens
_TOKEN_RE = re.compile(r"\w+(?=n't)|n't|'\w+|\w+|[^\w\s]")


class CorpusError(RuntimeError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    id: int


@dataclass(frozen=True)
class TokenSeq:
    """An ordered word sequence; at most one EOS marker, only at the end."""

    words: tuple[str, ...]

    def __post_init__(self):
        for i, w in enumerate(self.words):
            if w == EOS_WORD and i != len(self.words) - 1:
                raise ValueError(f"EOS at position {i}, only final position allowed")

    @property
    def text(self) -> str:
        return " ".join(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    def __bool__(self) -> bool:
        return bool(self.words)


def seq(words) -> TokenSeq:
    return TokenSeq(tuple(words))


def tokenize(text: str) -> TokenSeq:
    """Lowercase, split punctuation and the n't/'s-style clitics.

    Empty or whitespace-only text yields an empty (falsy) sequence rather
    than an error. Idempotent on already-tokenized, space-joined text.
    """
    return TokenSeq(tuple(_TOKEN_RE.findall(text.lower())))


@dataclass(frozen=True)
class Triple:
    """One instance: ill-formed question, well-formed question, answer."""

    ill: TokenSeq
    well: TokenSeq
    answer: TokenSeq
    id: str


class Vocabulary:
    """Bijective word<->id map; ids 0..3 are reserved for PAD/UNK/SOS/EOS."""

    def __init__(self, words: list[str], min_count: int = 1):
        self.min_count = min_count
        self.id_to_word: list[str] = list(RESERVED) + list(words)
        self.word_to_id: dict[str, int] = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise CorpusError("duplicate words in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def id(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word(self, idx: int) -> str:
        return self.id_to_word[idx]

    def encode(self, words) -> list[int]:
        return [self.id(w) for w in words]

    def decode(self, ids) -> list[str]:
        return [self.id_to_word[i] for i in ids]

    def tokens(self, s: TokenSeq) -> list[Token]:
        return [Token(w, self.id(w)) for w in s]


class CharVocabulary:
    """Character->id map; id 0 is the unknown-character slot."""

    UNK_CHAR_ID = 0

    def __init__(self, chars: list[str]):
        self.id_to_char = ["\x00"] + sorted(set(chars))
        self.char_to_id = {c: i for i, c in enumerate(self.id_to_char)}

    def __len__(self) -> int:
        return len(self.id_to_char)

    def id(self, char: str) -> int:
        return self.char_to_id.get(char, self.UNK_CHAR_ID)

    def encode(self, word: str) -> list[int]:
        return [self.id(c) for c in word]


def _iter_texts(corpus) -> list[TokenSeq]:
    seqs = []
    for item in corpus:
        if isinstance(item, Triple):
            seqs.extend([item.ill, item.well, item.answer])
        elif isinstance(item, TokenSeq):
            seqs.append(item)
        else:
            seqs.append(tokenize(item))
    return seqs


def build_vocab(corpus, min_count: int = 1) -> tuple[Vocabulary, CharVocabulary]:
    """Count words over the corpus; keep those with frequency >= min_count.

    Ids are deterministic: frequency-descending, ties broken lexicographically.
    The character vocabulary covers every character of every word seen.
    """
    seqs = _iter_texts(corpus)
    if not seqs:
        raise CorpusError("empty corpus")
    counts: Counter[str] = Counter()
    chars: set[str] = set()
    for s in seqs:
        for w in s:
            counts[w] += 1
            chars.update(w)
    kept = sorted((w for w, c in counts.items() if c >= min_count),
                  key=lambda w: (-counts[w], w))
    if not kept:
        raise CorpusError(f"min_count={min_count} leaves no words in the vocabulary")
    return Vocabulary(kept, min_count), CharVocabulary(sorted(chars))


@dataclass(frozen=True)
class CorruptionSpec:
    """Knobs for the corruption operators; rates in [0,1]."""

    wrong_word_rate: float = 0.3
    fragment_count: int = 3
    distractor_max_len: int = 6
    seed: int = 0
    operators: frozenset[str] = frozenset({"wrong_word", "wrong_order", "noisy_background"})
    alphabet: str = "abcdefghijklmnopqrstuvwxyz"
    typo_variants: int = 2  # canonical misspellings per word

    def __post_init__(self):
        if not 0.0 <= self.wrong_word_rate <= 1.0:
            raise ValueError(f"wrong_word_rate {self.wrong_word_rate} outside [0,1]")
        if self.fragment_count < 1:
            raise ValueError(f"fragment_count {self.fragment_count} must be >= 1")
        if self.distractor_max_len < 1:
            raise ValueError(f"distractor_max_len {self.distractor_max_len} must be >= 1")
        if self.typo_variants < 1:
            raise ValueError(f"typo_variants {self.typo_variants} must be >= 1")
        unknown = self.operators - {"wrong_word", "wrong_order", "noisy_background"}
        if unknown:
            raise ValueError(f"unknown corruption operators: {sorted(unknown)}")


def _misspell_with(word: str, spec: CorruptionSpec, rng: random.Random) -> str:
    ops = ["substitute"]
    if len(word) >= 2:
        ops += ["swap_adjacent", "transpose_pair"]
    op = rng.choice(ops)
    chars = list(word)
    if op == "substitute":
        pos = rng.randrange(len(chars))
        choices = [c for c in spec.alphabet if c != chars[pos]]
        chars[pos] = rng.choice(choices)
    elif op == "swap_adjacent":
        pos = rng.randrange(len(chars) - 1)
        chars[pos], chars[pos + 1] = chars[pos + 1], chars[pos]
    else:
        i, j = rng.sample(range(len(chars)), 2)
        chars[i], chars[j] = chars[j], chars[i]
    return "".join(chars)


def typo_variants(word: str, spec: CorruptionSpec) -> tuple[str, ...]:
    """The word's canonical misspellings (substitute/swap/transpose variants).

    People mistype a given word in a few recurring ways, so each word gets a
    small deterministic variant set (seeded by the word itself); corruption
    draws from it. Frequent words' typos then recur often enough to survive
    vocabulary thresholds, which is what makes typo repair learnable.
    """
    seeded = random.Random(zlib.crc32(word.encode("utf-8")))
    variants = []
    for _ in range(8):
        v = _misspell_with(word, spec, seeded)
        if v != word and v not in variants:
            variants.append(v)
        if len(variants) == spec.typo_variants:
            break
    return tuple(variants) if variants else (word,)


def _misspell(word: str, spec: CorruptionSpec, rng: random.Random) -> str:
    variants = typo_variants(word, spec)
    return variants[rng.randrange(len(variants))]


def corrupt_wrong_word(s: TokenSeq, spec: CorruptionSpec, rng: random.Random) -> TokenSeq:
    """Misspell each word independently with probability wrong_word_rate.

    Only pure-alphabetic words are eligible: punctuation, digits, and clitic
    fragments ("n't", "'s") stay intact, which keeps every output token
    stable under re-tokenization (JSONL round-trips need that). Word count is
    always preserved.
    """
    out = []
    for w in s:
        if w.isalpha() and rng.random() < spec.wrong_word_rate:
            out.append(_misspell(w, spec, rng))
        else:
            out.append(w)
    return TokenSeq(tuple(out))


def corrupt_wrong_order(s: TokenSeq, spec: CorruptionSpec, rng: random.Random) -> TokenSeq:
    """Cut into up to fragment_count contiguous fragments and permute them.

    The permutation is forced non-identity, so the word multiset is preserved
    but the order changes whenever more than one fragment exists.
    """
    n = len(s)
    if n < 2:
        warnings.warn("corrupt_wrong_order: sequence shorter than 2 words, returned unchanged")
        return s
    k = min(spec.fragment_count, n)
    if k == 1:
        return s
    cuts = sorted(rng.sample(range(1, n), k - 1))
    bounds = [0] + cuts + [n]
    fragments = [s.words[bounds[i]:bounds[i + 1]] for i in range(k)]
    order = list(range(k))
    while True:
        rng.shuffle(order)
        if order != list(range(k)):
            break
    out: list[str] = []
    for i in order:
        out.extend(fragments[i])
    return TokenSeq(tuple(out))


def corrupt_noisy_background(s: TokenSeq, distractor_pool: list[TokenSeq],
                             spec: CorruptionSpec, rng: random.Random) -> TokenSeq:
    """Insert a random contiguous phrase from the pool at a random boundary."""
    pool = [p for p in distractor_pool if len(p) > 0]
    if not pool:
        raise CorpusError("corrupt_noisy_background: empty distractor pool")
    entry = pool[rng.randrange(len(pool))]
    length = rng.randint(1, min(spec.distractor_max_len, len(entry)))
    start = rng.randint(0, len(entry) - length)
    phrase = entry.words[start:start + length]
    pos = rng.randint(0, len(s))
    return TokenSeq(s.words[:pos] + phrase + s.words[pos:])


def corrupt_composite(s: TokenSeq, distractor_pool: list[TokenSeq],
                      spec: CorruptionSpec, rng: random.Random) -> TokenSeq:
    """Apply each enabled operator with probability 1/2, at least one forced.

    Fixed application order: noisy_background, then wrong_order, then
    wrong_word, so misspellings can also hit inserted distractor words.
    """
    enabled = [op for op in ("noisy_background", "wrong_order", "wrong_word")
               if op in spec.operators]
    if not enabled:
        raise ValueError("corrupt_composite: no operators enabled")
    fire = {op: rng.random() < 0.5 for op in enabled}
    if not any(fire.values()):
        fire[enabled[rng.randrange(len(enabled))]] = True
    out = s
    if fire.get("noisy_background"):
        out = corrupt_noisy_background(out, distractor_pool, spec, rng)
    if fire.get("wrong_order"):
        out = corrupt_wrong_order(out, spec, rng)
    if fire.get("wrong_word"):
        out = corrupt_wrong_word(out, spec, rng)
    return out


@dataclass(frozen=True)
class TemplateGrammar:
    """Question/answer templates with shared slot pools.

    Each template pairs a question with an answer that reuses at least one of
    the question's slots, so every triple shares content words. A trailing
    digit on a slot name ("{city2}") draws from the base pool but is forced
    distinct from earlier draws of the same base within one instance.
    """

    templates: tuple[tuple[str, str], ...]
    slots: dict[str, tuple[str, ...]] = field(default_factory=dict)

    _SLOT_RE = re.compile(r"\{(\w+?)(\d*)\}")

    def instantiate(self, index: int, rng: random.Random) -> tuple[TokenSeq, TokenSeq]:
        question, answer = self.templates[index]
        values: dict[str, str] = {}
        used: dict[str, set[str]] = {}

        def fill(match):
            key = match.group(0)[1:-1]
            if key in values:
                return values[key]
            base = match.group(1)
            pool = self.slots[base]
            taken = used.setdefault(base, set())
            choices = [v for v in pool if v not in taken] or list(pool)
            value = choices[rng.randrange(len(choices))]
            taken.add(value)
            values[key] = value
            return value

        q = self._SLOT_RE.sub(fill, question)
        a = self._SLOT_RE.sub(fill, answer)
        return tokenize(q), tokenize(a)


DEFAULT_GRAMMAR = TemplateGrammar(
    templates=(
        ("why do {animal} eat {food}?", "{animal} eat {food} because it gives them energy."),
        ("how far is {city} from {city2}?", "the distance from {city} to {city2} is {number} miles."),
        ("what is {material} made of?", "{material} is made of pressed natural minerals."),
        ("why is the sky {color} at sunset?", "the sky turns {color} because light scatters in the air."),
        ("how do {animal} survive the winter?", "{animal} survive the winter by storing {food}."),
        ("what causes {weather} in summer?", "{weather} forms when warm air meets cold air."),
        ("how does the {organ} keep us alive?", "doctors say the {organ} keeps the whole body alive."),
        ("is {planet} bigger than earth?", "{planet} is a planet made of rock and gas."),
        ("who invented {sport}?", "historians say {sport} was invented centuries ago in {city}."),
        ("can {animal} see {color}?", "{animal} can see {color} shades in bright light."),
        ("why does {food} taste sweet?", "{food} tastes sweet because it holds natural sugar."),
        ("what 's the weather like in {city}?", "the weather in {city} is mild with light {weather}."),
        ("how long do {animal} live?", "most {animal} live for about {number} years."),
        ("where does {food} come from?", "{food} comes from small farms near {city}."),
        ("when does {weather} usually happen?", "{weather} usually happens in late autumn."),
        ("why do n't {animal} eat {material}?", "{animal} avoid {material} because it has no taste."),
        ("what color is {planet}?", "{planet} looks {color} through a telescope at night."),
        ("how is {material} recycled?", "{material} is recycled by melting and pressing it."),
        ("do {animal} dream at night?", "scientists think {animal} dream during deep sleep."),
        ("which city makes the best {food}?", "people say {city} makes the best {food}."),
        ("how much {food} should i eat?", "eating {food} in small amounts is healthy."),
        ("what sport is popular in {city}?", "{sport} is the most popular sport in {city}."),
        ("why is {material} so strong?", "{material} is strong because its fibers bond tightly."),
        ("can you play {sport} indoors?", "{sport} can be played indoors on a small court."),
    ),
    slots={
        "animal": ("cats", "dogs", "birds", "fish", "horses", "bees", "ants", "frogs"),
        "food": ("bread", "cheese", "rice", "apples", "honey", "soup", "pasta", "beans"),
        "city": ("paris", "tokyo", "cairo", "oslo", "lima", "sydney", "madrid", "dublin"),
        "material": ("glass", "steel", "wood", "paper", "rubber", "copper"),
        "weather": ("rain", "snow", "fog", "wind", "hail", "thunder"),
        "organ": ("heart", "brain", "liver", "lungs", "skin"),
        "planet": ("mars", "venus", "jupiter", "saturn", "mercury"),
        "color": ("red", "blue", "green", "yellow", "purple"),
        "sport": ("soccer", "tennis", "chess", "golf", "rowing"),
        "number": ("twenty", "forty", "sixty", "ninety"),
    },
)


def synth_corpus(grammar: TemplateGrammar, n: int, seed: int,
                 spec: CorruptionSpec | None = None) -> list[Triple]:
    """Generate n triples: templated well question + answer, composite-corrupted ill.

    Distractor phrases for the noisy-background operator come from the other
    instances' answers. Deterministic given (grammar, n, seed, spec).
    """
    if n <= 0:
        raise ValueError(f"synth_corpus: n must be positive, got {n}")
    if len(grammar.templates) < 20:
        raise ValueError(f"grammar has {len(grammar.templates)} templates, need >= 20")
    spec = spec or CorruptionSpec()
    rng = random.Random(seed)
    pairs = [grammar.instantiate(rng.randrange(len(grammar.templates)), rng)
             for _ in range(n)]
    answers = [a for _, a in pairs]
    triples = []
    width = max(4, len(str(n - 1)))
    for i, (well, answer) in enumerate(pairs):
        pool = answers[:i] + answers[i + 1:] if n > 1 else answers
        ill = corrupt_composite(well, pool, spec, rng)
        triples.append(Triple(ill=ill, well=well, answer=answer, id=f"q{i:0{width}d}"))
    return triples


def save_jsonl(triples: list[Triple], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(json.dumps(
                {"id": t.id, "ill": t.ill.text, "well": t.well.text, "answer": t.answer.text},
                ensure_ascii=False))
            fh.write("\n")


def load_jsonl(path) -> list[Triple]:
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON: {err}") from err
            for key in ("ill", "well", "answer"):
                if key not in obj:
                    raise CorpusError(f"{path}: line {lineno}: missing key {key!r}")
            triples.append(Triple(
                ill=tokenize(obj["ill"]),
                well=tokenize(obj["well"]),
                answer=tokenize(obj["answer"]),
                id=str(obj.get("id", f"line{lineno}")),
            ))
    return triples
