"""Generation metrics (BLEU-1..4, ROUGE-L) and BM25 retrieval with Hits@K.

BLEU is sentence-level against a single reference: clipped modified n-gram
precision, geometric mean over orders, brevity penalty for short candidates,
and add-1 smoothing on zero counts for orders >= 2 (needed at toy scale).
ROUGE-L is the LCS F-measure with beta = 1.2. Retrieval uses Okapi BM25 with
the non-negative idf variant, k1 = 1.2, b = 0.75.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import TokenSeq

DEFAULT_KS = (1, 3, 5, 10)


def _words(s) -> list[str]:
    if isinstance(s, TokenSeq):
        return list(s.words)
    return list(s)


def ngram_counts(words: list[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu_n(candidate, reference, n: int) -> float:
    """Sentence BLEU up to order n against one reference, in [0, 1]."""
    if not 1 <= n <= 4:
        raise ValueError(f"bleu_n: order must be in 1..4, got {n}")
    cand = _words(candidate)
    ref = _words(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        cand_counts = ngram_counts(cand, k)
        ref_counts = ngram_counts(ref, k)
        total = max(0, len(cand) - k + 1)
        matched = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        if k == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        elif matched == 0 or total == 0:
            precision = (matched + 1.0) / (total + 1.0)  # add-1 smoothing
        else:
            precision = matched / total
        log_sum += math.log(precision)
    brevity = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return brevity * math.exp(log_sum / n)


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference, beta: float = 1.2) -> float:
    """LCS-based F-measure in [0, 1]."""
    cand = _words(candidate)
    ref = _words(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    b2 = beta * beta
    return (1 + b2) * precision * recall / (recall + b2 * precision)


class RetrievalIndex:
    """Okapi BM25 over tokenized answers; non-negative idf, deterministic ties.

    Scores are zero exactly when no query term occurs in a document; ranking
    ties break toward the earlier document.
    """

    def __init__(self, answers: list[TokenSeq], ids: list[str] | None = None,
                 k1: float = 1.2, b: float = 0.75):
        if not answers:
            raise ValueError("build_index: empty answer pool")
        self.k1 = k1
        self.b = b
        self.doc_ids = list(ids) if ids is not None else [str(i) for i in range(len(answers))]
        if len(self.doc_ids) != len(answers):
            raise ValueError("build_index: ids/answers length mismatch")
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise ValueError("build_index: duplicate document ids")
        self.answers = {doc_id: ans for doc_id, ans in zip(self.doc_ids, answers)}
        self.term_freqs = [Counter(a.words) for a in answers]
        self.doc_lens = [len(a) for a in answers]
        self.avg_len = sum(self.doc_lens) / len(answers)
        df = Counter()
        for tf in self.term_freqs:
            df.update(tf.keys())
        n = len(answers)
        self.idf = {t: math.log(1.0 + (n - d + 0.5) / (d + 0.5)) for t, d in df.items()}

    def __len__(self) -> int:
        return len(self.doc_ids)

    def scores(self, query) -> list[float]:
        q = _words(query)
        out = []
        for tf, dl in zip(self.term_freqs, self.doc_lens):
            norm = self.k1 * (1.0 - self.b + self.b * dl / self.avg_len)
            s = 0.0
            for term in q:
                f = tf.get(term, 0)
                if f:
                    s += self.idf[term] * f * (self.k1 + 1.0) / (f + norm)
            out.append(s)
        return out

    def top_k(self, query, k: int) -> list[str]:
        scores = self.scores(query)
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        return [self.doc_ids[i] for i in order[:k]]


def build_index(answers: list[TokenSeq], ids: list[str] | None = None) -> RetrievalIndex:
    return RetrievalIndex(answers, ids)


def dedup_answer_pool(triples) -> tuple[RetrievalIndex, dict[str, str]]:
    """Index over unique answer texts plus a gold-id -> canonical-id map.

    Repeated answer texts are one document; a query hits if it retrieves the
    canonical copy of its gold answer, so duplicates cannot split the credit.
    """
    canon: dict[str, str] = {}
    answers: list[TokenSeq] = []
    ids: list[str] = []
    gold_map: dict[str, str] = {}
    for t in triples:
        key = t.answer.text
        if key not in canon:
            canon[key] = t.id
            answers.append(t.answer)
            ids.append(t.id)
        gold_map[t.id] = canon[key]
    return RetrievalIndex(answers, ids=ids), gold_map


def hits_at_k(question, gold_answer_id: str, index: RetrievalIndex, k: int) -> int:
    """1 iff the gold answer ranks in the BM25 top k for the question."""
    if k < 1:
        raise ValueError(f"hits_at_k: k must be >= 1, got {k}")
    if gold_answer_id not in index.answers:
        raise KeyError(f"hits_at_k: unknown gold answer id {gold_answer_id!r}")
    return 1 if gold_answer_id in index.top_k(question, k) else 0


def mean_hits_at_k(pairs: list[tuple[TokenSeq, str]], index: RetrievalIndex, k: int) -> float:
    if not pairs:
        return 0.0
    return sum(hits_at_k(q, gold, index, k) for q, gold in pairs) / len(pairs)


@dataclass
class MetricsReport:
    """All values in [0, 1]; multiply by 100 for paper-style tables."""

    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    hits: dict[int, float] = field(default_factory=dict)

    def as_row(self, scaled: bool = True) -> dict[str, float]:
        factor = 100.0 if scaled else 1.0
        row = {"bleu1": self.bleu1, "bleu2": self.bleu2, "bleu3": self.bleu3,
               "bleu4": self.bleu4, "rouge_l": self.rouge_l}
        row.update({f"hits{k}": v for k, v in sorted(self.hits.items())})
        return {name: value * factor for name, value in row.items()}


def evaluate_generation(generate, triples, index: RetrievalIndex,
                        ks: tuple[int, ...] = DEFAULT_KS,
                        gold_map: dict[str, str] | None = None) -> MetricsReport:
    """Score a generator over triples: n-gram metrics against the well-formed
    reference, Hits@K with the generated question as the retrieval query.

    ``generate(ill: TokenSeq) -> TokenSeq``; pass identity to score the
    unrefined questions themselves. ``gold_map`` redirects each triple's gold
    id to a canonical document (deduplicated pools).
    """
    if not triples:
        raise ValueError("evaluate_generation: no triples")
    bleus = {n: 0.0 for n in (1, 2, 3, 4)}
    rouge = 0.0
    hits = {k: 0 for k in ks}
    for t in triples:
        cand = generate(t.ill)
        gold = gold_map.get(t.id, t.id) if gold_map else t.id
        for n in bleus:
            bleus[n] += bleu_n(cand, t.well, n)
        rouge += rouge_l(cand, t.well)
        for k in ks:
            hits[k] += hits_at_k(cand, gold, index, k)
    count = len(triples)
    return MetricsReport(
        bleu1=bleus[1] / count, bleu2=bleus[2] / count,
        bleu3=bleus[3] / count, bleu4=bleus[4] / count,
        rouge_l=rouge / count,
        hits={k: hits[k] / count for k in ks},
    )


def report_csv_lines(rows: list[tuple[str, MetricsReport]]) -> list[str]:
    """CSV lines (values scaled to [0, 100]) for a list of (system, report)."""
    if not rows:
        return []
    header = ["system"] + list(rows[0][1].as_row())
    lines = [",".join(header)]
    for name, report in rows:
        values = report.as_row()
        lines.append(",".join([name] + [f"{values[c]:.2f}" for c in header[1:]]))
    return lines


def report_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Human-readable fixed-width table of the same numbers."""
    if not rows:
        return ""
    columns = list(rows[0][1].as_row())
    width = max(len(name) for name, _ in rows + [("system", None)])
    header = "system".ljust(width) + "".join(c.rjust(9) for c in columns)
    lines = [header, "-" * len(header)]
    for name, report in rows:
        values = report.as_row()
        lines.append(name.ljust(width) + "".join(f"{values[c]:9.2f}" for c in columns))
    return "\n".join(lines)
