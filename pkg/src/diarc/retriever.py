"""Dialog-based retrieval: history encoder, nearest-neighbor search, and
the interactive loop.

The retriever's visible state is a sequence of DialogTurns, each holding
only the shown item's id, feature, predicted attributes, and the user's
feedback tokens. Nothing derived from the hidden target can enter a turn,
which makes the no-leakage contract structural. Retrieval is an argmin of
Euclidean distance in item-feature space with ascending-id tie-breaks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .captioner import (
    FEEDBACK_LEN,
    PAD_ID,
    TOP_ATTRIBUTES,
    CaptionVocabulary,
    ConfigurationError,
    UserSimulator,
)
from .corpus import GarmentItem
from .numerics import (
    Adam,
    Embedding,
    Linear,
    Module,
    Tensor,
    add,
    concat,
    embedding,
    mean,
    mul,
    no_grad,
    relu,
    sum_,
    uniform_init,
)
from .transformer import Encoder, TransformerConfig


class PoolExhaustedError(RuntimeError):
    pass


class EmptyHistoryError(ValueError):
    pass


class HistoryLengthError(ValueError):
    pass


@dataclass
class DialogTurn:
    retrieved_item_id: str
    feedback_tokens: np.ndarray          # [8] padded token ids
    retrieved_item_attributes: np.ndarray  # [8] predicted attribute ids
    retrieved_item_feature: np.ndarray   # [feature_dim]

    def to_json(self) -> dict:
        return {
            "retrieved_item_id": self.retrieved_item_id,
            "feedback_tokens": [int(t) for t in self.feedback_tokens],
            "retrieved_item_attributes": [int(a) for a in self.retrieved_item_attributes],
            "retrieved_item_feature": [float(x) for x in self.retrieved_item_feature],
        }


@dataclass
class DialogSession:
    session_id: str
    target_id: str
    candidate_pool: str
    turns: list[DialogTurn] = field(default_factory=list)
    query_trace: list[np.ndarray] = field(default_factory=list)
    target_ranks: list[int] = field(default_factory=list)
    truncated: bool = False

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "target_id": self.target_id,
            "candidate_pool": self.candidate_pool,
            "turns": [t.to_json() for t in self.turns],
            "query_trace": [[float(x) for x in q] for q in self.query_trace],
            "target_ranks": [int(r) for r in self.target_ranks],
            "truncated": self.truncated,
        }


class CandidatePool:
    """Id-sorted item pool with vectorized nearest-neighbor queries."""

    def __init__(self, items: list[GarmentItem], name: str = ""):
        self.items = sorted(items, key=lambda it: it.id)
        self.name = name
        self.ids = [it.id for it in self.items]
        self.id_to_index = {it.id: i for i, it in enumerate(self.items)}
        self.features = np.stack([it.feature for it in self.items]).astype(np.float32)

    def __len__(self) -> int:
        return len(self.items)

    def item(self, item_id: str) -> GarmentItem:
        return self.items[self.id_to_index[item_id]]

    def nearest(self, query: np.ndarray, exclude: set[str] = frozenset()) -> str:
        """Argmin Euclidean distance; ties resolve to the smallest id."""
        dist = np.square(self.features - query[None, :]).sum(axis=1)
        if exclude:
            for item_id in exclude:
                idx = self.id_to_index.get(item_id)
                if idx is not None:
                    dist[idx] = np.inf
        if not np.isfinite(dist).any():
            raise PoolExhaustedError(
                f"pool {self.name!r}: no candidates left after exclusions"
            )
        return self.ids[int(np.argmin(dist))]

    def top_k(self, query: np.ndarray, k: int,
              exclude: set[str] = frozenset()) -> list[tuple[str, float]]:
        dist = np.sqrt(np.square(self.features - query[None, :]).sum(axis=1))
        mask = np.ones(len(dist), dtype=bool)
        for item_id in exclude:
            idx = self.id_to_index.get(item_id)
            if idx is not None:
                mask[idx] = False
        order = [i for i in np.argsort(dist, kind="stable") if mask[i]]
        return [(self.ids[i], float(dist[i])) for i in order[:k]]

    def rank_of(self, query: np.ndarray, target_id: str) -> int:
        """1-based rank of the target under ascending (distance, id) order."""
        dist = np.square(self.features - query[None, :]).sum(axis=1)
        t = self.id_to_index[target_id]
        closer = int((dist < dist[t]).sum())
        tied_before = int((dist[:t] == dist[t]).sum())
        return closer + tied_before + 1

    def rank_of_batch(self, queries: np.ndarray, target_ids: list[str]) -> list[int]:
        return [self.rank_of(q, t) for q, t in zip(queries, target_ids)]


def retrieve_next(query: np.ndarray, pool: CandidatePool,
                  exclude: set[str] = frozenset()) -> str:
    return pool.nearest(query, exclude)


# -- the history encoder -------------------------------------------------------


@dataclass
class RetrieverConfig:
    num_layers: int = 6
    hidden_dim: int = 256
    num_heads: int = 8
    feedforward_dim: int = 1024
    dropout_rate: float = 0.1
    use_attributes: bool = True
    feature_dim: int = 64
    max_turns: int = 10
    seed: int = 0

    def encoder_config(self, vocab_size: int) -> TransformerConfig:
        block = FEEDBACK_LEN + TOP_ATTRIBUTES + 1
        return TransformerConfig(
            num_layers=self.num_layers, hidden_dim=self.hidden_dim,
            num_heads=self.num_heads, feedforward_dim=self.feedforward_dim,
            max_sequence_len=self.max_turns * block, vocab_size=vocab_size,
            dropout_rate=self.dropout_rate,
        )


class RetrievalModel(Module):
    """Transformer over the flattened multimodal turn history.

    Every slot receives a learned turn marker; feedback slots add per-slot
    position markers (token order matters), while the eight attribute
    slots of a turn share a single marker so the attribute set carries no
    order. Output is mean-pooled over valid slots and mapped into item
    feature space.
    """

    def __init__(self, config: RetrieverConfig, caption_vocab: CaptionVocabulary):
        rng = np.random.default_rng([config.seed, 13])
        self.config = config
        d = config.hidden_dim
        vocab_size = len(caption_vocab)
        self.word_embed = Embedding(vocab_size, d, rng)
        self.img_proj = Linear(config.feature_dim, d, rng)
        self.turn_embed = Tensor(uniform_init(rng, (config.max_turns, d), d),
                                 requires_grad=True)
        self.feedback_pos = Tensor(uniform_init(rng, (FEEDBACK_LEN, d), d),
                                   requires_grad=True)
        self.attr_marker = Tensor(uniform_init(rng, (1, d), d), requires_grad=True)
        self.img_marker = Tensor(uniform_init(rng, (1, d), d), requires_grad=True)
        self.encoder = Encoder(config.encoder_config(vocab_size), rng)
        self.out_proj = Linear(d, config.feature_dim, rng)
        self.attr_token_ids = caption_vocab.attr_token_ids.copy()

    def encode_history_batch(self, feedback: np.ndarray, attr_ids: np.ndarray,
                             features: np.ndarray) -> Tensor:
        """Query vectors [B, feature_dim] from [B, T, ...] turn arrays."""
        b, t, _ = feedback.shape
        if t < 1:
            raise EmptyHistoryError("encode_history requires at least one turn")
        if t > self.config.max_turns:
            raise HistoryLengthError(
                f"history of {t} turns exceeds max_turns={self.config.max_turns}"
            )
        d = self.config.hidden_dim
        turn_idx = np.arange(t)

        # feedback slots: word embedding + slot marker + turn marker
        fb = self.word_embed(feedback.reshape(b, t * FEEDBACK_LEN))
        fb = add(fb, _rows(self.feedback_pos,
                           np.tile(np.arange(FEEDBACK_LEN), (b, t))))
        fb = add(fb, _rows(self.turn_embed,
                           np.tile(np.repeat(turn_idx, FEEDBACK_LEN), (b, 1))))
        pieces = [fb]
        mask_pieces = [feedback.reshape(b, -1) != PAD_ID]

        if self.config.use_attributes:
            tokens = self.attr_token_ids[attr_ids.reshape(b, t * TOP_ATTRIBUTES)]
            at = self.word_embed(tokens)
            at = add(at, _rows(self.attr_marker,
                               np.zeros((b, t * TOP_ATTRIBUTES), dtype=np.int64)))
            at = add(at, _rows(self.turn_embed,
                               np.tile(np.repeat(turn_idx, TOP_ATTRIBUTES), (b, 1))))
            pieces.append(at)
            mask_pieces.append(np.ones((b, t * TOP_ATTRIBUTES), dtype=bool))

        img = self.img_proj(Tensor(features.astype(np.float32)))
        img = add(img, _rows(self.img_marker, np.zeros((b, t), dtype=np.int64)))
        img = add(img, _rows(self.turn_embed, np.tile(turn_idx, (b, 1))))
        pieces.append(img)
        mask_pieces.append(np.ones((b, t), dtype=bool))

        x = concat(pieces, axis=1)
        pad_mask = np.concatenate(mask_pieces, axis=1)
        enc = self.encoder(x, pad_mask, add_positional=False)
        weights = pad_mask.astype(np.float32)
        weights /= weights.sum(axis=1, keepdims=True)
        pooled = sum_(mul(enc, Tensor(weights[:, :, None])), axis=1)
        return self.out_proj(pooled)

    def encode_history(self, turns: list[DialogTurn]) -> np.ndarray:
        """Single-session query vector (inference)."""
        if not turns:
            raise EmptyHistoryError("encode_history requires at least one turn")
        feedback = np.stack([t.feedback_tokens for t in turns])[None, :, :]
        attrs = np.stack([t.retrieved_item_attributes for t in turns])[None, :, :]
        feats = np.stack([t.retrieved_item_feature for t in turns])[None, :, :]
        with no_grad():
            q = self.encode_history_batch(feedback, attrs, feats)
        return q.data[0]


def _rows(table: Tensor, ids: np.ndarray) -> Tensor:
    return embedding(table, ids)


# -- the interactive loop -------------------------------------------------------


def run_dialog(model: RetrievalModel, simulator: UserSimulator,
               target: GarmentItem, initial_reference: GarmentItem,
               pool: CandidatePool, turns: int = 5,
               decode_mode: str = "beam5",
               allow_repeats: bool = False) -> DialogSession:
    """Roll one dialog; records turns, query trace, and target ranks."""
    session = DialogSession(
        session_id=f"{target.id}:{initial_reference.id}",
        target_id=target.id,
        candidate_pool=pool.name,
    )
    shown = initial_reference
    exclude: set[str] = set()
    for j in range(turns):
        feedback = simulator.feedback([shown], [target], mode=decode_mode)[0]
        attrs = simulator.predictor.predict_attributes(shown)
        session.turns.append(DialogTurn(
            retrieved_item_id=shown.id,
            feedback_tokens=feedback,
            retrieved_item_attributes=attrs,
            retrieved_item_feature=shown.feature,
        ))
        q = model.encode_history(session.turns)
        session.query_trace.append(q)
        session.target_ranks.append(pool.rank_of(q, target.id))
        exclude.add(shown.id)
        if j + 1 < turns:
            try:
                next_id = pool.nearest(q, exclude if not allow_repeats else set())
            except PoolExhaustedError:
                session.truncated = True
                break
            shown = pool.item(next_id)
    return session


def make_initial_pairs(targets: list[GarmentItem], pool: CandidatePool,
                       seed: int) -> list[tuple[str, str]]:
    """Frozen (target, start) list shared across model evaluations."""
    rng = np.random.default_rng([seed, 17])
    pairs = []
    for target in sorted(targets, key=lambda it: it.id):
        while True:
            start = pool.ids[int(rng.integers(len(pool)))]
            if start != target.id:
                break
        pairs.append((target.id, start))
    return pairs


def evaluate_dialog(model: RetrievalModel, simulator: UserSimulator,
                    pool: CandidatePool,
                    initial_pairs: list[tuple[str, str]], turns: int = 5,
                    decode_mode: str = "beam5", batch_size: int = 64,
                    allow_repeats: bool = False) -> dict[int, list[int]]:
    """Target ranks per turn over a frozen initial-pair list (batched)."""
    ranks: dict[int, list[int]] = {j: [] for j in range(1, turns + 1)}
    for start in range(0, len(initial_pairs), batch_size):
        chunk = initial_pairs[start : start + batch_size]
        targets = [pool.item(t) for t, _ in chunk]
        shown = [pool.item(s) for _, s in chunk]
        b = len(chunk)
        feedback = np.zeros((b, 0, FEEDBACK_LEN), dtype=np.int64)
        attrs = np.zeros((b, 0, TOP_ATTRIBUTES), dtype=np.int64)
        feats = np.zeros((b, 0, pool.features.shape[1]), dtype=np.float32)
        exclude: list[set[str]] = [set() for _ in range(b)]
        for j in range(1, turns + 1):
            fb = simulator.feedback(shown, targets, mode=decode_mode)
            at = np.stack([simulator.predictor.predict_attributes(s)
                           for s in shown])
            ft = np.stack([s.feature for s in shown])
            feedback = np.concatenate([feedback, fb[:, None, :]], axis=1)
            attrs = np.concatenate([attrs, at[:, None, :]], axis=1)
            feats = np.concatenate([feats, ft[:, None, :]], axis=1)
            with no_grad():
                q = model.encode_history_batch(feedback, attrs, feats).data
            for i in range(b):
                ranks[j].append(pool.rank_of(q[i], targets[i].id))
            if j < turns:
                for i in range(b):
                    exclude[i].add(shown[i].id)
                    next_id = pool.nearest(
                        q[i], exclude[i] if not allow_repeats else set())
                    shown[i] = pool.item(next_id)
    return ranks


# -- training ---------------------------------------------------------------


def triplet_loss(q: Tensor, target_feats: np.ndarray, negative_feats: np.ndarray,
                 margin: float = 0.2) -> Tensor:
    """max(0, m + ||q - target||^2 - ||q - negative||^2), batch mean."""
    d_pos = sum_(_sq(add(q, Tensor(-target_feats))), axis=1)
    d_neg = sum_(_sq(add(q, Tensor(-negative_feats))), axis=1)
    return mean(relu(add(add(d_pos, mul(d_neg, -1.0)), margin)))


def _sq(x: Tensor) -> Tensor:
    return mul(x, x)


def train_retriever(model: RetrievalModel, simulator: UserSimulator,
                    pool: CandidatePool, epochs: int = 4,
                    batch_size: int = 32, lr: float = 1e-3,
                    margin: float = 0.2, turns: int = 5, seed: int = 0,
                    allow_repeats: bool = False, log=None,
                    val_callback=None) -> list[float]:
    """Triplet training on greedy simulator rollouts; loss at every turn.

    The simulator must be frozen first; its gradients never flow because
    feedback enters the retriever as discrete token ids.
    """
    if not simulator.frozen:
        raise ConfigurationError(
            "simulator must be frozen before retriever training"
        )
    rng = np.random.default_rng([seed, 23])
    opt = Adam(model.parameters(), lr=lr)
    items = pool.items
    n = len(items)
    history = []
    for epoch in range(epochs):
        model.train(True)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue
            targets = [items[i] for i in idx]
            starts = []
            for i in idx:
                while True:
                    s = int(rng.integers(n))
                    if s != i:
                        break
                starts.append(items[s])
            target_feats = np.stack([t.feature for t in targets])
            # in-batch negatives: each session borrows its neighbor's target
            negative_feats = np.roll(target_feats, 1, axis=0)
            b = len(targets)
            shown = starts
            exclude: list[set[str]] = [set() for _ in range(b)]
            feedback = np.zeros((b, 0, FEEDBACK_LEN), dtype=np.int64)
            attrs = np.zeros((b, 0, TOP_ATTRIBUTES), dtype=np.int64)
            feats = np.zeros((b, 0, pool.features.shape[1]), dtype=np.float32)
            turn_losses = []
            for j in range(turns):
                fb = simulator.feedback(shown, targets, mode="greedy")
                at = np.stack([simulator.predictor.predict_attributes(s)
                               for s in shown])
                ft = np.stack([s.feature for s in shown])
                feedback = np.concatenate([feedback, fb[:, None, :]], axis=1)
                attrs = np.concatenate([attrs, at[:, None, :]], axis=1)
                feats = np.concatenate([feats, ft[:, None, :]], axis=1)
                q = model.encode_history_batch(feedback, attrs, feats)
                turn_losses.append(triplet_loss(q, target_feats, negative_feats,
                                                margin))
                if j + 1 < turns:
                    q_np = q.data
                    for i in range(b):
                        exclude[i].add(shown[i].id)
                        next_id = pool.nearest(
                            q_np[i], exclude[i] if not allow_repeats else set())
                        shown[i] = pool.item(next_id)
            total = mul(_sum_tensors(turn_losses), 1.0 / turns)
            opt.zero_grad()
            total.backward()
            opt.step()
            losses.append(total.item())
        model.train(False)
        history.append(float(np.mean(losses)))
        if log:
            log(f"retriever epoch {epoch + 1}/{epochs} loss {history[-1]:.4f}")
        if val_callback:
            val_callback(epoch, model)
    return history


def _sum_tensors(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total
