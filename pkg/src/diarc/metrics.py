"""Retrieval and captioning evaluation metrics.

Frozen conventions, documented so scores are comparable across runs:
BLEU-4 is corpus-level with uniform 1-4 gram weights, clipped counts,
brevity penalty, and add-1 smoothing applied only to zero match counts.
ROUGE-L is the LCS F-measure with beta^2 = 1.2, maxed over references.
CIDEr is the standard consensus formulation (length-normalized TF of
n-grams weighted by corpus IDF, cosine per n, averaged over n=1..4,
scaled by 10).
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class MetricInputError(ValueError):
    pass


# -- ranking metrics -------------------------------------------------------


def ranking_percentile(ranks, pool_size: int) -> float:
    """Mean of (1 - rank/pool_size); 0.5 for a random ranker, ~1.0 ideal."""
    ranks = list(ranks)
    if not ranks:
        raise MetricInputError("ranking_percentile: empty rank list")
    for r in ranks:
        if not 1 <= r <= pool_size:
            raise MetricInputError(
                f"rank {r} outside [1, {pool_size}]"
            )
    return float(np.mean([1.0 - r / pool_size for r in ranks]))


def recall_at(ranks, k: int) -> float:
    ranks = list(ranks)
    if k < 1:
        raise MetricInputError(f"recall_at: k must be >= 1, got {k}")
    if not ranks:
        raise MetricInputError("recall_at: empty rank list")
    return sum(1 for r in ranks if r <= k) / len(ranks)


# -- BLEU-4 ----------------------------------------------------------------


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu4(candidates: list[list[str]],
                 references: list[list[list[str]]]) -> float:
    if len(candidates) != len(references):
        raise MetricInputError("corpus_bleu4: candidate/reference count mismatch")
    matches = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        if not cand:
            raise MetricInputError("corpus_bleu4: empty candidate")
        if not refs:
            raise MetricInputError("corpus_bleu4: candidate with no references")
        cand_len += len(cand)
        # closest reference length; ties toward the shorter reference
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            counts = _ngram_counts(cand, n)
            if not counts:
                continue
            max_ref: Counter = Counter()
            for ref in refs:
                for gram, c in _ngram_counts(ref, n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += sum(counts.values())
    log_precision = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            m, t = m + 1, t + 1
        log_precision += 0.25 * np.log(m / t)
    if cand_len > ref_len:
        brevity = 1.0
    else:
        brevity = float(np.exp(1.0 - ref_len / cand_len))
    return float(brevity * np.exp(log_precision))


def bleu4(candidate: list[str], references: list[list[str]]) -> float:
    return corpus_bleu4([candidate], [references])


# -- ROUGE-L ----------------------------------------------------------------

_ROUGE_BETA_SQ = 1.2


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], references: list[list[str]]) -> float:
    if not candidate or not references:
        raise MetricInputError("rouge_l: empty candidate or reference list")
    best = 0.0
    for ref in references:
        if not ref:
            continue
        lcs = _lcs_length(candidate, ref)
        if lcs == 0:
            continue
        precision = lcs / len(candidate)
        recall = lcs / len(ref)
        f = ((1 + _ROUGE_BETA_SQ) * precision * recall
             / (recall + _ROUGE_BETA_SQ * precision))
        best = max(best, f)
    return best


# -- CIDEr -------------------------------------------------------------------


class IdfError(ValueError):
    """CIDEr asked to score against an empty IDF corpus."""


def cider(candidates: list[list[str]],
          references: list[list[list[str]]],
          corpus: list[list[list[str]]] | None = None) -> float:
    """Mean consensus score over candidates, scaled by 10.

    ``corpus`` supplies the documents for IDF statistics (each document is
    a list of reference captions); defaults to ``references`` itself.
    """
    if len(candidates) != len(references):
        raise MetricInputError("cider: candidate/reference count mismatch")
    if corpus is None:
        corpus = references
    if not corpus:
        raise IdfError("cider: empty IDF corpus")
    n_docs = len(corpus)
    doc_freq: list[Counter] = [Counter() for _ in range(4)]
    for doc in corpus:
        seen: list[set] = [set() for _ in range(4)]
        for ref in doc:
            for n in range(1, 5):
                seen[n - 1].update(_ngram_counts(ref, n).keys())
        for n in range(4):
            for gram in seen[n]:
                doc_freq[n][gram] += 1

    def tfidf_vector(tokens: list[str], n: int) -> dict:
        counts = _ngram_counts(tokens, n + 1)
        total = sum(counts.values())
        if total == 0:
            return {}
        vec = {}
        for gram, c in counts.items():
            df = doc_freq[n].get(gram, 0)
            idf = np.log(n_docs / df) if df > 0 else 0.0
            vec[gram] = (c / total) * idf
        return vec

    def cosine(u: dict, v: dict) -> float:
        if not u or not v:
            return 0.0
        dot = sum(w * v[g] for g, w in u.items() if g in v)
        nu = np.sqrt(sum(w * w for w in u.values()))
        nv = np.sqrt(sum(w * w for w in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return dot / (nu * nv)

    scores = []
    for cand, refs in zip(candidates, references):
        if not refs:
            raise MetricInputError("cider: candidate with no references")
        per_n = []
        for n in range(4):
            cand_vec = tfidf_vector(cand, n)
            sims = [cosine(cand_vec, tfidf_vector(ref, n)) for ref in refs]
            per_n.append(float(np.mean(sims)))
        scores.append(float(np.mean(per_n)))
    return 10.0 * float(np.mean(scores))


# -- report ------------------------------------------------------------------


@dataclass
class TurnMetrics:
    percentile: float
    recall_10: float
    recall_50: float

    def validate(self) -> None:
        values = (self.percentile, self.recall_10, self.recall_50)
        if not all(np.isfinite(v) for v in values):
            raise MetricInputError("turn metrics must be finite")
        if not 0.0 <= self.percentile <= 1.0:
            raise MetricInputError("percentile outside [0, 1]")
        if self.recall_10 > self.recall_50:
            raise MetricInputError("R@10 cannot exceed R@50")


@dataclass
class EvalReport:
    turns: dict[int, TurnMetrics] = field(default_factory=dict)
    captioning: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        for tm in self.turns.values():
            tm.validate()

    def to_json(self) -> str:
        self.validate()
        payload = {
            "turns": {
                str(t): {
                    "P": tm.percentile,
                    "P_percent": 100.0 * tm.percentile,
                    "R@10": tm.recall_10,
                    "R@50": tm.recall_50,
                }
                for t, tm in sorted(self.turns.items())
            },
            "captioning": dict(sorted(self.captioning.items())),
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        self.validate()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["turn", "P", "P_percent", "R@10", "R@50"])
        for t, tm in sorted(self.turns.items()):
            writer.writerow([t, f"{tm.percentile:.6f}",
                             f"{100.0 * tm.percentile:.4f}",
                             f"{tm.recall_10:.6f}", f"{tm.recall_50:.6f}"])
        if self.captioning:
            writer.writerow([])
            writer.writerow(["metric", "value"])
            for name, value in sorted(self.captioning.items()):
                writer.writerow([name, f"{value:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        turns = {
            int(t): TurnMetrics(rec["P"], rec["R@10"], rec["R@50"])
            for t, rec in payload.get("turns", {}).items()
        }
        return cls(turns=turns, captioning=payload.get("captioning", {}),
                   metadata=payload.get("metadata", {}))
