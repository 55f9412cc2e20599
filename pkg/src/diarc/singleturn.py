"""Single-turn retrieval study: composing image, attribute, and
relative-caption modalities into one query vector.

Variants:
  A  image + attributes + caption, sigmoid gate on the caption path
  B  image + caption, gated as in A
  C  image + caption, plain concat + linear
  D  caption only
  E  image only
  F  attributes only

Captions are encoded by a single-hidden-layer gated recurrent encoder;
queries live in item-feature space and score candidates by negative
Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .captioner import PAD_ID, CaptionVocabulary
from .corpus import CaptionedPair
from .numerics import (
    Adam,
    Embedding,
    Linear,
    Module,
    Tensor,
    add,
    concat,
    dropout,
    l2_normalize,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    sqrt,
    sum_,
    tanh,
    transpose,
)
from .retriever import CandidatePool

VARIANTS = ("A", "B", "C", "D", "E", "F")
_NEEDS_CAPTION = {"A", "B", "C", "D"}
_NEEDS_IMAGE = {"A", "B", "C", "E"}
_NEEDS_ATTR = {"A", "F"}


class VariantConfigurationError(ValueError):
    """A modality required by the chosen variant is missing."""


@dataclass
class SingleTurnConfig:
    variant: str = "A"
    hidden_dim: int = 256
    feature_dim: int = 64
    dropout_rate: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise VariantConfigurationError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )


class GRUCell(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.xz = Linear(dim, dim, rng)
        self.hz = Linear(dim, dim, rng)
        self.xr = Linear(dim, dim, rng)
        self.hr = Linear(dim, dim, rng)
        self.xn = Linear(dim, dim, rng)
        self.hn = Linear(dim, dim, rng)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        z = sigmoid(add(self.xz(x), self.hz(h)))
        r = sigmoid(add(self.xr(x), self.hr(h)))
        n = tanh(add(self.xn(x), mul(r, self.hn(h))))
        one_minus_z = add(mul(z, -1.0), 1.0)
        return add(mul(one_minus_z, n), mul(z, h))


class CaptionEncoder(Module):
    """Embedding + one GRU layer; final hidden state is the encoding.

    Pad steps carry the previous hidden state forward so trailing padding
    cannot change the encoding. Embedding dropout during training guards
    against memorizing whole caption sequences.
    """

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator,
                 dropout_rate: float = 0.0):
        self.embed = Embedding(vocab_size, dim, rng)
        self.cell = GRUCell(dim, rng)
        self.dim = dim
        self.dropout_rate = dropout_rate
        self._rng = rng

    def __call__(self, caption_ids: np.ndarray) -> Tensor:
        b, length = caption_ids.shape
        h = Tensor(np.zeros((b, self.dim), dtype=np.float32))
        for step in range(length):
            ids = caption_ids[:, step]
            x = dropout(self.embed(ids), self.dropout_rate, self._rng,
                        self.training)
            h_new = self.cell(x, h)
            alive = (ids != PAD_ID).astype(np.float32)[:, None]
            h = add(mul(h_new, Tensor(alive)), mul(h, Tensor(1.0 - alive)))
        return h


class CompositionModel(Module):
    """Joint-embedding retrieval: candidates pass through the shared image
    projection, queries through the variant's composition path, and both
    meet in one space scored by negative Euclidean distance."""

    def __init__(self, config: SingleTurnConfig, caption_vocab: CaptionVocabulary):
        rng = np.random.default_rng([config.seed, 29])
        self.config = config
        v = config.variant
        out = config.feature_dim
        # candidate-side encoder, also the query image path where present
        self.image_proj = Linear(config.feature_dim, out, rng)
        if v in _NEEDS_CAPTION:
            self.caption_encoder = CaptionEncoder(
                len(caption_vocab), config.hidden_dim, rng,
                dropout_rate=config.dropout_rate)
            self.caption_proj = Linear(config.hidden_dim, out, rng)
        if v in _NEEDS_ATTR:
            if v == "A":
                # attribute tokens are caption words: reuse the caption
                # embedding table and start the fusion's attribute term at
                # zero so it grows only where it reduces the loss
                self.attr_embed = self.caption_encoder.embed
                self.attr_proj = Linear(config.hidden_dim, out, rng)
                self.attr_proj.weight.data = np.zeros_like(
                    self.attr_proj.weight.data)
            else:
                self.attr_embed = Embedding(len(caption_vocab),
                                            config.hidden_dim, rng)
                self.attr_proj = Linear(config.hidden_dim, out, rng)
        if v in ("A", "B"):
            self.gate = Linear(out, out, rng)
        if v == "C":
            self.concat_proj = Linear(2 * out, out, rng)
        self.attr_token_ids = caption_vocab.attr_token_ids.copy()

    def embed_candidates(self, features: np.ndarray) -> Tensor:
        # unit-norm embeddings keep the ranking margins on a fixed scale
        return l2_normalize(
            self.image_proj(Tensor(np.atleast_2d(features).astype(np.float32))))

    def compose_query(self, features: np.ndarray | None,
                      attr_ids: np.ndarray | None,
                      caption_ids: np.ndarray | None) -> Tensor:
        v = self.config.variant
        if v in _NEEDS_CAPTION and caption_ids is None:
            raise VariantConfigurationError(f"variant {v} requires caption tokens")
        if v in _NEEDS_IMAGE and features is None:
            raise VariantConfigurationError(f"variant {v} requires image features")
        if v in _NEEDS_ATTR and attr_ids is None:
            raise VariantConfigurationError(f"variant {v} requires attributes")

        e_cap = img = attr = None
        if v in _NEEDS_CAPTION:
            e_cap = self.caption_proj(self.caption_encoder(caption_ids))
        if v in _NEEDS_IMAGE:
            img = self.image_proj(Tensor(np.atleast_2d(features).astype(np.float32)))
        if v in _NEEDS_ATTR:
            tokens = self.attr_token_ids[np.atleast_2d(attr_ids)]
            attr = self.attr_proj(mean(self.attr_embed(tokens), axis=1))

        if v == "A":
            g = sigmoid(self.gate(e_cap))
            fused = add(img, attr)
            out = add(mul(g, e_cap), mul(add(mul(g, -1.0), 1.0), fused))
        elif v == "B":
            g = sigmoid(self.gate(e_cap))
            out = add(mul(g, e_cap), mul(add(mul(g, -1.0), 1.0), img))
        elif v == "C":
            out = self.concat_proj(concat([img, e_cap], axis=1))
        elif v == "D":
            out = e_cap
        elif v == "E":
            out = img
        else:
            out = attr
        return l2_normalize(out)


@dataclass
class SingleTurnQuery:
    reference_id: str
    target_id: str
    caption_ids: np.ndarray


def build_queries(pairs: list[CaptionedPair],
                  caption_vocab: CaptionVocabulary) -> list[SingleTurnQuery]:
    """Two queries per pair: each caption is an independent query."""
    queries = []
    for pair in pairs:
        for caption in pair.captions:
            queries.append(SingleTurnQuery(
                reference_id=pair.reference_id,
                target_id=pair.target_id,
                caption_ids=caption_vocab.encode(caption),
            ))
    return queries


def pairwise_ranking_loss(q: Tensor, target_feats: np.ndarray,
                          negative_feats: np.ndarray, margin: float) -> Tensor:
    """max(0, m - s(q,target) + s(q,negative)) with s = -Euclidean distance."""
    d_pos = sqrt(add(sum_(_sq(add(q, Tensor(-target_feats))), axis=1), 1e-12))
    d_neg = sqrt(add(sum_(_sq(add(q, Tensor(-negative_feats))), axis=1), 1e-12))
    return mean(relu(add(add(d_pos, mul(d_neg, -1.0)), margin)))


def batch_ranking_loss(q: Tensor, target_emb: Tensor, margin: float) -> Tensor:
    """The in-batch estimator of the pairwise ranking objective: every
    other target in the batch serves as a negative for each anchor."""
    b = target_emb.shape[0]
    qn = sum_(_sq(q), axis=1, keepdims=True)
    tn = reshape(sum_(_sq(target_emb), axis=1), (1, b))
    cross = matmul(q, transpose(target_emb, (1, 0)))
    d2 = add(add(mul(cross, -2.0), qn), tn)
    d = sqrt(add(relu(d2), 1e-12))
    eye = np.eye(b, dtype=np.float32)
    d_pos = sum_(mul(d, Tensor(eye)), axis=1, keepdims=True)
    hinge = relu(add(add(mul(d, -1.0), d_pos), margin))
    off_diagonal = Tensor(1.0 - eye)
    return mul(sum_(mul(hinge, off_diagonal)), 1.0 / (b * (b - 1)))


def _sq(x: Tensor) -> Tensor:
    return mul(x, x)


def _query_inputs(model: CompositionModel, queries: list[SingleTurnQuery],
                  pool: CandidatePool, predictor):
    v = model.config.variant
    feats = attr_ids = caption_ids = None
    if v in _NEEDS_IMAGE:
        feats = np.stack([pool.item(q.reference_id).feature for q in queries])
    if v in _NEEDS_ATTR:
        attr_ids = np.stack([predictor.predict_attributes(
            pool.item(q.reference_id)) for q in queries])
    if v in _NEEDS_CAPTION:
        caption_ids = np.stack([q.caption_ids for q in queries])
    return feats, attr_ids, caption_ids


def train_single_turn(model: CompositionModel, queries: list[SingleTurnQuery],
                      pool: CandidatePool, predictor, margin: float = 0.2,
                      epochs: int = 5, batch_size: int = 64, lr: float = 1e-3,
                      seed: int = 0, log=None) -> list[float]:
    rng = np.random.default_rng([seed, 31])
    opt = Adam(model.parameters(), lr=lr)
    n = len(queries)
    history = []
    model.train(True)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue
            batch = [queries[i] for i in idx]
            feats, attr_ids, caption_ids = _query_inputs(model, batch, pool,
                                                         predictor)
            q = model.compose_query(feats, attr_ids, caption_ids)
            target_feats = np.stack([pool.item(b.target_id).feature for b in batch])
            loss = batch_ranking_loss(q, model.embed_candidates(target_feats),
                                      margin)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        if log:
            log(f"singleturn[{model.config.variant}] epoch {epoch + 1}/{epochs} "
                f"loss {history[-1]:.4f}")
    model.train(False)
    return history


def evaluate_single_turn(model: CompositionModel,
                         queries: list[SingleTurnQuery], pool: CandidatePool,
                         predictor, batch_size: int = 256) -> list[int]:
    """Target rank for every query, scored in the joint embedding space."""
    with no_grad():
        pool_emb = model.embed_candidates(pool.features).data
    ranks = []
    for start in range(0, len(queries), batch_size):
        batch = queries[start : start + batch_size]
        feats, attr_ids, caption_ids = _query_inputs(model, batch, pool, predictor)
        with no_grad():
            q = model.compose_query(feats, attr_ids, caption_ids).data
        dist = ((pool_emb[None, :, :] - q[:, None, :]) ** 2).sum(axis=2)
        for row, query in enumerate(batch):
            t = pool.id_to_index[query.target_id]
            closer = int((dist[row] < dist[row, t]).sum())
            tied_before = int((dist[row, :t] == dist[row, t]).sum())
            ranks.append(closer + tied_before + 1)
    return ranks


def margin_grid_search(make_model, queries_train, queries_val, pool_train,
                       pool_val, predictor, margins=(0.1, 0.2, 0.5),
                       epochs: int = 5, batch_size: int = 64, lr: float = 1e-3,
                       seed: int = 0, log=None):
    """Train once per margin, select by validation R@10.

    Returns (best_model, manifest) where the manifest records every
    margin's validation score, per the validation-selection protocol.
    """
    from .metrics import recall_at

    results = []
    models = []
    for margin in margins:
        model = make_model()
        train_single_turn(model, queries_train, pool_train, predictor,
                          margin=margin, epochs=epochs, batch_size=batch_size,
                          lr=lr, seed=seed, log=log)
        ranks = evaluate_single_turn(model, queries_val, pool_val, predictor)
        score = recall_at(ranks, 10)
        results.append({"margin": margin, "val_recall_10": score})
        models.append(model)
        if log:
            log(f"singleturn margin {margin}: val R@10 {score:.4f}")
    best_idx = max(range(len(results)),
                   key=lambda i: (results[i]["val_recall_10"], -results[i]["margin"]))
    best_margin = results[best_idx]["margin"]
    manifest = {"margins": results, "selected_margin": best_margin}
    return models[best_idx], manifest
