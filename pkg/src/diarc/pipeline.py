"""End-to-end orchestration shared by the CLI, the service, and tests.

Covers the full two-stage protocol: build the captioned-pair dataset,
fit the attribute predictor, train the caption model, freeze it as the
user simulator, train the dialog retriever against simulated rollouts,
and evaluate with a frozen initial-pair list.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .captioner import (
    AttributePredictor,
    CaptionerConfig,
    CaptionVocabulary,
    RelativeCaptionModel,
    UserSimulator,
    build_caption_samples,
    oracle_caption,
    train_captioner,
)
from .corpus import (
    AttributeVocab,
    CaptionedPair,
    GarmentItem,
    filter_items,
    index_by_id,
    load_corpus,
    tfidf_pair,
)
from .metrics import EvalReport, TurnMetrics, cider, corpus_bleu4, ranking_percentile, recall_at, rouge_l
from .numerics import load_checkpoint, save_checkpoint
from .retriever import (
    CandidatePool,
    RetrievalModel,
    RetrieverConfig,
    evaluate_dialog,
    make_initial_pairs,
    train_retriever,
)

CATEGORY_SPLITS = ("train", "val", "test")


def build_pairs_with_captions(items: list[GarmentItem], vocab: AttributeVocab,
                              seed: int) -> list[CaptionedPair]:
    """TF-IDF pairing per category and split, two oracle captions per pair."""
    by_id = index_by_id(items)
    pairs: list[CaptionedPair] = []
    categories = sorted({it.category for it in items})
    for category in categories:
        for split in CATEGORY_SPLITS:
            subset = filter_items(items, category=category, split=split)
            if len(subset) < 2:
                continue
            for result in tfidf_pair(subset, subset):
                ref = by_id[result.reference_id]
                tgt = by_id[result.target_id]
                captions = [
                    oracle_caption(ref, tgt, vocab, seed, caption_index=0),
                    oracle_caption(ref, tgt, vocab, seed, caption_index=1),
                ]
                extra = {"pairing_score": result.score}
                if result.no_overlap:
                    extra["no_overlap_warning"] = True
                pairs.append(CaptionedPair(
                    reference_id=ref.id, target_id=tgt.id,
                    captions=captions, split=split, extra=extra,
                ))
    return pairs


def fit_predictor(items: list[GarmentItem], vocab: AttributeVocab,
                  seed: int = 0, epochs: int = 200,
                  view_seed: int | None = None) -> AttributePredictor:
    """Train the attribute probe; ``view_seed`` (normally the corpus
    generation seed) routes observations through the independent
    attribute view."""
    train_items = [it for it in items if it.split == "train"]
    predictor = AttributePredictor(
        feature_dim=train_items[0].feature.shape[0],
        num_attributes=len(vocab), seed=seed, view_seed=view_seed,
    )
    predictor.fit(train_items, num_attributes=len(vocab), seed=seed,
                  epochs=epochs)
    return predictor


def train_simulator(items: list[GarmentItem], pairs: list[CaptionedPair],
                    vocab: AttributeVocab, config: CaptionerConfig,
                    predictor: AttributePredictor | None = None,
                    epochs: int = 10, batch_size: int = 64, lr: float = 1e-3,
                    log=None) -> tuple[UserSimulator, list[float]]:
    caption_vocab = CaptionVocabulary(vocab)
    if predictor is None:
        predictor = fit_predictor(items, vocab, seed=config.seed)
    by_id = index_by_id(items)
    train_pairs = [p for p in pairs if p.split == "train"]
    model = RelativeCaptionModel(config, caption_vocab)
    samples = build_caption_samples(train_pairs, by_id, predictor, caption_vocab)
    history = train_captioner(model, samples, epochs=epochs,
                              batch_size=batch_size, lr=lr,
                              seed=config.seed, log=log)
    simulator = UserSimulator(model, predictor, caption_vocab)
    return simulator, history


# -- checkpoint bundles -------------------------------------------------------


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_simulator(path: str | Path, simulator: UserSimulator) -> None:
    arrays = {f"captioner.{n}": p for n, p in simulator.model.state_arrays().items()}
    arrays.update({
        f"attribute_predictor.{n}": p
        for n, p in simulator.predictor.state_arrays().items()
    })
    save_checkpoint(path, arrays)
    meta = {
        "kind": "captioner",
        "config": asdict(simulator.model.config),
        "num_attributes": int(simulator.predictor.linear.weight.data.shape[1]),
        "predictor_view_seed": simulator.predictor.view_seed,
    }
    _write_meta(path, meta)


def load_simulator(path: str | Path, vocab: AttributeVocab) -> UserSimulator:
    meta = _read_meta(path)
    if meta.get("kind") != "captioner":
        raise ValueError(f"{path}: not a captioner checkpoint")
    arrays = load_checkpoint(path)
    caption_vocab = CaptionVocabulary(vocab)
    config = CaptionerConfig(**meta["config"])
    model = RelativeCaptionModel(config, caption_vocab)
    model.load_state_arrays(_strip_prefix(arrays, "captioner."))
    predictor = AttributePredictor(config.feature_dim, meta["num_attributes"],
                                   seed=config.seed,
                                   view_seed=meta.get("predictor_view_seed"))
    predictor.load_state_arrays(_strip_prefix(arrays, "attribute_predictor."))
    predictor.fitted = True
    return UserSimulator(model, predictor, caption_vocab)


def save_retriever(path: str | Path, model: RetrievalModel,
                   predictor: AttributePredictor) -> None:
    arrays = {f"retriever.{n}": p for n, p in model.state_arrays().items()}
    arrays.update({
        f"attribute_predictor.{n}": p for n, p in predictor.state_arrays().items()
    })
    save_checkpoint(path, arrays)
    meta = {
        "kind": "retriever",
        "config": asdict(model.config),
        "num_attributes": int(predictor.linear.weight.data.shape[1]),
        "predictor_view_seed": predictor.view_seed,
    }
    _write_meta(path, meta)


def load_retriever(path: str | Path, vocab: AttributeVocab):
    meta = _read_meta(path)
    if meta.get("kind") != "retriever":
        raise ValueError(f"{path}: not a retriever checkpoint")
    arrays = load_checkpoint(path)
    caption_vocab = CaptionVocabulary(vocab)
    config = RetrieverConfig(**meta["config"])
    model = RetrievalModel(config, caption_vocab)
    model.load_state_arrays(_strip_prefix(arrays, "retriever."))
    predictor = AttributePredictor(config.feature_dim, meta["num_attributes"],
                                   seed=config.seed,
                                   view_seed=meta.get("predictor_view_seed"))
    predictor.load_state_arrays(_strip_prefix(arrays, "attribute_predictor."))
    predictor.fitted = True
    return model, predictor, caption_vocab


def save_single_turn(path: str | Path, model, predictor: AttributePredictor,
                     manifest: dict) -> None:
    from dataclasses import asdict as _asdict

    arrays = {f"singleturn.{n}": p for n, p in model.state_arrays().items()}
    arrays.update({
        f"attribute_predictor.{n}": p for n, p in predictor.state_arrays().items()
    })
    save_checkpoint(path, arrays)
    _write_meta(path, {
        "kind": "singleturn",
        "config": _asdict(model.config),
        "num_attributes": int(predictor.linear.weight.data.shape[1]),
        "predictor_view_seed": predictor.view_seed,
        "manifest": manifest,
    })


def load_single_turn(path: str | Path, vocab: AttributeVocab):
    from .singleturn import CompositionModel, SingleTurnConfig

    meta = _read_meta(path)
    if meta.get("kind") != "singleturn":
        raise ValueError(f"{path}: not a single-turn checkpoint")
    arrays = load_checkpoint(path)
    caption_vocab = CaptionVocabulary(vocab)
    config = SingleTurnConfig(**meta["config"])
    model = CompositionModel(config, caption_vocab)
    model.load_state_arrays(_strip_prefix(arrays, "singleturn."))
    predictor = AttributePredictor(config.feature_dim, meta["num_attributes"],
                                   seed=config.seed,
                                   view_seed=meta.get("predictor_view_seed"))
    predictor.load_state_arrays(_strip_prefix(arrays, "attribute_predictor."))
    predictor.fitted = True
    return model, predictor, meta.get("manifest", {})


def _meta_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def _write_meta(path: str | Path, meta: dict) -> None:
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")


def _read_meta(path: str | Path) -> dict:
    return json.loads(_meta_path(path).read_text(encoding="utf-8"))


def _strip_prefix(arrays: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


# -- evaluation ----------------------------------------------------------------


def evaluate_retrieval(model: RetrievalModel, simulator: UserSimulator,
                       items: list[GarmentItem], category: str,
                       split: str = "test", turns: int = 5, seed: int = 0,
                       decode_mode: str = "beam5",
                       max_targets: int | None = None) -> dict[int, list[int]]:
    pool_items = filter_items(items, category=category, split=split)
    pool = CandidatePool(pool_items, name=f"{category}/{split}")
    targets = pool.items if max_targets is None else pool.items[:max_targets]
    initial_pairs = make_initial_pairs(targets, pool, seed=seed)
    return evaluate_dialog(model, simulator, pool, initial_pairs, turns=turns,
                           decode_mode=decode_mode)


def evaluate_captioning(simulator: UserSimulator, items: list[GarmentItem],
                        pairs: list[CaptionedPair], category: str,
                        split: str = "test",
                        decode_mode: str = "beam5",
                        max_pairs: int | None = None) -> dict[str, float]:
    by_id = index_by_id(items)
    eval_pairs = [
        p for p in pairs
        if p.split == split and by_id[p.target_id].category == category
    ]
    if max_pairs is not None:
        eval_pairs = eval_pairs[:max_pairs]
    refs = [by_id[p.reference_id] for p in eval_pairs]
    tgts = [by_id[p.target_id] for p in eval_pairs]
    candidates: list[list[str]] = []
    for start in range(0, len(eval_pairs), 64):
        chunk_refs = refs[start : start + 64]
        chunk_tgts = tgts[start : start + 64]
        fb = simulator.feedback(chunk_refs, chunk_tgts, mode=decode_mode)
        for row in fb:
            candidates.append(simulator.caption_vocab.decode(row))
    candidates = [c if c else ["<unk>"] for c in candidates]
    references = [p.captions for p in eval_pairs]
    return {
        "BLEU4": corpus_bleu4(candidates, references),
        "ROUGE_L": float(np.mean([
            rouge_l(c, r) for c, r in zip(candidates, references)
        ])),
        "CIDEr": cider(candidates, references),
    }


def build_eval_report(ranks_per_turn: dict[int, list[int]], pool_size: int,
                      captioning: dict[str, float] | None = None,
                      metadata: dict | None = None) -> EvalReport:
    report = EvalReport(metadata=metadata or {})
    for turn, ranks in sorted(ranks_per_turn.items()):
        report.turns[turn] = TurnMetrics(
            percentile=ranking_percentile(ranks, pool_size),
            recall_10=recall_at(ranks, 10),
            recall_50=recall_at(ranks, 50),
        )
    if captioning:
        report.captioning.update(captioning)
    report.validate()
    return report


# -- one-call system training ---------------------------------------------------


@dataclass
class SystemConfig:
    """Knobs for one full captioner+retriever training run."""

    seed: int = 0
    category: str = "dresses"
    use_attributes: bool = True
    num_layers: int = 6
    hidden_dim: int = 256
    num_heads: int = 8
    feedforward_dim: int = 1024
    captioner_epochs: int = 10
    retriever_epochs: int = 4
    batch_size: int = 64
    retriever_batch_size: int = 32
    captioner_lr: float = 2e-3
    retriever_lr: float = 3e-3
    turns: int = 5
    margin: float = 0.2
    allow_repeats: bool = False


@dataclass
class TrainedSystem:
    simulator: UserSimulator
    retriever: RetrievalModel
    predictor: AttributePredictor
    caption_vocab: CaptionVocabulary


def train_system(items: list[GarmentItem], pairs: list[CaptionedPair],
                 vocab: AttributeVocab, config: SystemConfig,
                 corpus_seed: int | None = None, log=None) -> TrainedSystem:
    cat_items = filter_items(items, category=config.category)
    cat_ids = {it.id for it in cat_items}
    cat_pairs = [p for p in pairs if p.target_id in cat_ids]
    predictor = fit_predictor(cat_items, vocab, seed=config.seed,
                              view_seed=corpus_seed)
    cap_config = CaptionerConfig(
        num_layers=config.num_layers, hidden_dim=config.hidden_dim,
        num_heads=config.num_heads, feedforward_dim=config.feedforward_dim,
        use_attributes=config.use_attributes,
        feature_dim=cat_items[0].feature.shape[0], seed=config.seed,
    )
    simulator, _ = train_simulator(
        cat_items, cat_pairs, vocab, cap_config, predictor=predictor,
        epochs=config.captioner_epochs, batch_size=config.batch_size,
        lr=config.captioner_lr, log=log,
    )
    simulator.freeze()
    ret_config = RetrieverConfig(
        num_layers=config.num_layers, hidden_dim=config.hidden_dim,
        num_heads=config.num_heads, feedforward_dim=config.feedforward_dim,
        use_attributes=config.use_attributes,
        feature_dim=cat_items[0].feature.shape[0],
        max_turns=max(config.turns, 5), seed=config.seed,
    )
    retriever = RetrievalModel(ret_config, simulator.caption_vocab)
    train_pool = CandidatePool(
        filter_items(cat_items, split="train"), name=f"{config.category}/train")
    train_retriever(
        retriever, simulator, train_pool, epochs=config.retriever_epochs,
        batch_size=config.retriever_batch_size, lr=config.retriever_lr,
        margin=config.margin, turns=config.turns, seed=config.seed,
        allow_repeats=config.allow_repeats, log=log,
    )
    return TrainedSystem(simulator=simulator, retriever=retriever,
                         predictor=predictor,
                         caption_vocab=simulator.caption_vocab)


def load_corpus_dir(directory: str | Path):
    items, vocab, pairs = load_corpus(directory)
    return items, vocab, pairs
