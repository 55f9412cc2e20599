import math
from collections import Counter

import numpy as np
import pytest

from diarc.metrics import (
    EvalReport,
    IdfError,
    MetricInputError,
    TurnMetrics,
    bleu4,
    cider,
    corpus_bleu4,
    ranking_percentile,
    recall_at,
    rouge_l,
)


# -- ranking percentile ----------------------------------------------------------


def test_percentile_all_rank_one():
    assert ranking_percentile([1] * 7, 100) == pytest.approx(0.99)


def test_percentile_uniform_random_mean_half():
    gen = np.random.default_rng(0)
    ranks = gen.integers(1, 1001, size=20000)
    p = ranking_percentile(ranks.tolist(), 1000)
    assert abs(p - 0.5) < 0.01


def test_percentile_worked_example():
    # 1 - (1 + 50 + 100) / 300 = 149/300
    assert ranking_percentile([1, 50, 100], 100) == pytest.approx(149 / 300, abs=1e-12)


def test_percentile_rejects_out_of_range():
    with pytest.raises(MetricInputError):
        ranking_percentile([0], 10)
    with pytest.raises(MetricInputError):
        ranking_percentile([11], 10)


# -- recall ------------------------------------------------------------------------


def test_recall_all_rank_one():
    for k in (1, 10, 50):
        assert recall_at([1, 1, 1], k) == 1.0


def test_recall_half():
    assert recall_at([5, 15], 10) == 0.5


def test_recall_monotone_in_k():
    gen = np.random.default_rng(3)
    ranks = gen.integers(1, 200, size=100).tolist()
    assert recall_at(ranks, 10) <= recall_at(ranks, 50)


# -- BLEU-4 ------------------------------------------------------------------------


def oracle_bleu(cands, refss):
    """Independent corpus BLEU: plain loops, math.log, add-1 on zero counts."""
    def ngrams(s, n):
        return Counter(tuple(s[i : i + n]) for i in range(len(s) - n + 1))

    m, t = [0] * 4, [0] * 4
    clen = rlen = 0
    for c, refs in zip(cands, refss):
        clen += len(c)
        rlen += min((abs(len(r) - len(c)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            cn = ngrams(c, n)
            best = Counter()
            for r in refs:
                for g, k in ngrams(r, n).items():
                    best[g] = max(best[g], k)
            m[n - 1] += sum(min(k, best[g]) for g, k in cn.items())
            t[n - 1] += sum(cn.values())
    s = 0.0
    for mm, tt in zip(m, t):
        if mm == 0:
            mm, tt = mm + 1, tt + 1
        s += 0.25 * math.log(mm / tt)
    bp = 1.0 if clen > rlen else math.exp(1 - rlen / clen)
    return bp * math.exp(s)


BLEU_CASES = [
    (["a b c d e".split()], [["a b x d e".split()]]),
    (["the cat sat".split()], [["the cat sat".split()]]),
    (["a b".split()], [["a b c d".split()]]),
    (["x y z".split()], [["a b c".split()]]),
    (["a b c d e".split(), "the cat sat".split()],
     [["a b x d e".split()], ["the cat sat".split()]]),
    (["is floral and no solid".split()],
     [["is floral and has lace".split(), "no solid and is floral".split()]]),
]


def test_bleu_identity_is_one():
    assert bleu4("is floral and no solid".split(),
                 ["is floral and no solid".split()]) == pytest.approx(1.0)


def test_bleu_smoothed_five_token_case():
    # frozen from the 64-bit oracle: no 4-gram overlap, add-1 smoothing
    got = bleu4("a b c d e".split(), ["a b x d e".split()])
    assert got == pytest.approx(0.4272870063962341, abs=1e-9)


@pytest.mark.parametrize("case", range(len(BLEU_CASES)))
def test_bleu_matches_oracle(case):
    cands, refss = BLEU_CASES[case]
    assert corpus_bleu4(cands, refss) == pytest.approx(
        oracle_bleu(cands, refss), abs=1e-6)


def test_bleu_permuted_candidate_never_beats_identity():
    ref = "a b c d e f".split()
    identity = bleu4(ref, [ref])
    gen = np.random.default_rng(4)
    for _ in range(10):
        perm = list(ref)
        gen.shuffle(perm)
        assert bleu4(perm, [ref]) <= identity + 1e-12


def test_bleu_rejects_empty_candidate():
    with pytest.raises(MetricInputError):
        bleu4([], [["a"]])


# -- ROUGE-L ------------------------------------------------------------------------


def oracle_rouge(c, refs, beta_sq=1.2):
    def lcs(a, b):
        dp = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
        for i in range(1, len(a) + 1):
            for j in range(1, len(b) + 1):
                dp[i][j] = dp[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else \
                    max(dp[i - 1][j], dp[i][j - 1])
        return dp[-1][-1]

    best = 0.0
    for r in refs:
        l = lcs(c, r)
        if l == 0:
            continue
        p, q = l / len(c), l / len(r)
        best = max(best, (1 + beta_sq) * p * q / (q + beta_sq * p))
    return best


ROUGE_CASES = [
    ("a b c".split(), ["a x c".split()]),
    ("a b c d".split(), ["a b".split()]),
    ("a b c".split(), ["x y z".split(), "a b z".split()]),
    ("a b c d e f".split(), ["a c e".split()]),
    ("is floral".split(), ["is floral and no solid".split()]),
]


def test_rouge_identity_and_disjoint():
    assert rouge_l("a b c".split(), ["a b c".split()]) == pytest.approx(1.0)
    assert rouge_l("a b".split(), ["x y".split()]) == 0.0


def test_rouge_hand_case():
    # LCS=2, P=R=2/3, F equals P when P == R
    assert rouge_l("a b c".split(), ["a x c".split()]) == pytest.approx(2 / 3)


@pytest.mark.parametrize("case", range(len(ROUGE_CASES)))
def test_rouge_matches_oracle(case):
    c, refs = ROUGE_CASES[case]
    assert rouge_l(c, refs) == pytest.approx(oracle_rouge(c, refs), abs=1e-6)


# -- CIDEr --------------------------------------------------------------------------


def oracle_cider(cands, refss, corpus=None):
    """Independent CIDEr: dense vectors over an enumerated n-gram vocabulary."""
    if corpus is None:
        corpus = refss
    M = len(corpus)

    def ngrams_list(s, n):
        return [tuple(s[i : i + n]) for i in range(len(s) - n + 1)]

    total = []
    for c, refs in zip(cands, refss):
        per_n = []
        for n in range(1, 5):
            vocab = sorted(set(ngrams_list(c, n)).union(
                *[set(ngrams_list(r, n)) for r in refs]))
            gidx = {g: i for i, g in enumerate(vocab)}

            def vec(s):
                v = np.zeros(len(vocab))
                grams = ngrams_list(s, n)
                if not grams:
                    return v
                for g in grams:
                    v[gidx[g]] += 1
                v /= len(grams)
                for g in set(grams):
                    df = sum(1 for doc in corpus
                             if any(g in ngrams_list(r2, n) for r2 in doc))
                    v[gidx[g]] *= math.log(M / df) if df > 0 else 0.0
                return v

            cv = vec(c)
            sims = []
            for r in refs:
                rv = vec(r)
                nu, nv = np.linalg.norm(cv), np.linalg.norm(rv)
                sims.append(0.0 if nu == 0 or nv == 0 else float(cv @ rv / (nu * nv)))
            per_n.append(float(np.mean(sims)))
        total.append(float(np.mean(per_n)))
    return 10.0 * float(np.mean(total))


CIDER_CASES = [
    (["a b c d".split()], [["a b c d".split(), "a b x d".split()]],
     [["a b c d".split(), "a b x d".split()], ["q r s".split()], ["a b q".split()]]),
    (["is floral and no solid".split()], [["is floral and has lace".split()]],
     [["is floral and has lace".split()], ["has lace".split()],
      ["is striped".split()], ["no solid is plain".split()]]),
    (["x y".split()], [["x y".split()]], [["x y".split()], ["z w".split()]]),
    (["a a b".split()], [["a b b".split(), "a a b".split()]],
     [["a b b".split(), "a a b".split()], ["c d e".split()]]),
    (["m n o p q".split()], [["m n o".split()]],
     [["m n o".split()], ["p q".split()], ["m q o".split()]]),
]


@pytest.mark.parametrize("case", range(len(CIDER_CASES)))
def test_cider_matches_oracle(case):
    cands, refss, corpus = CIDER_CASES[case]
    assert cider(cands, refss, corpus) == pytest.approx(
        oracle_cider(cands, refss, corpus), abs=1e-6)


def test_cider_identity_is_maximal_for_its_corpus():
    ref = "a b c d".split()
    corpus = [[ref], ["z w q".split()]]
    identity = cider([ref], [[ref]], corpus)
    worse = cider(["a b x y".split()], [[ref]], corpus)
    assert identity >= worse
    assert identity == pytest.approx(10.0)


def test_cider_disjoint_is_zero():
    corpus = [["a b c".split()], ["d e f".split()]]
    assert cider(["x y z".split()], [["a b c".split()]], corpus) == 0.0


def test_cider_empty_corpus_rejected():
    with pytest.raises(IdfError):
        cider([["a"]], [[["a"]]], [])


# -- metric hygiene -------------------------------------------------------------------


def test_metrics_order_independent():
    gen = np.random.default_rng(9)
    ranks = gen.integers(1, 100, size=50).tolist()
    shuffled = list(ranks)
    gen.shuffle(shuffled)
    assert ranking_percentile(ranks, 100) == ranking_percentile(shuffled, 100)
    assert recall_at(ranks, 10) == recall_at(shuffled, 10)


def test_eval_report_roundtrip_and_validation():
    report = EvalReport(
        turns={1: TurnMetrics(0.8, 0.1, 0.3), 5: TurnMetrics(0.95, 0.4, 0.7)},
        captioning={"BLEU4": 0.5, "ROUGE_L": 0.6, "CIDEr": 3.0},
        metadata={"seed": 0, "flags": {"attrs": True}},
    )
    text = report.to_json()
    back = EvalReport.from_json(text)
    assert back.turns[5].recall_50 == pytest.approx(0.7)
    assert back.to_json() == text

    csv_text = report.to_csv()
    assert "turn,P,P_percent,R@10,R@50" in csv_text
    assert "80.0000" in csv_text

    bad = EvalReport(turns={1: TurnMetrics(0.5, 0.6, 0.2)})
    with pytest.raises(MetricInputError):
        bad.validate()
