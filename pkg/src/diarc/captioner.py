"""Relative captioning: the trainable user simulator.

Given a reference and a target item the model describes the target
relative to the reference in at most eight words. Its encoder consumes
the projected image-feature difference plus embedded top-8 predicted
attributes of both items (the attribute slots can be disabled for the
attribute-agnostic ablation). A deterministic template grammar produces
the oracle captions used as training data.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .corpus import ORDINAL_FAMILIES, AttributeVocab, GarmentItem
from .numerics import (
    Adam,
    Embedding,
    Linear,
    Module,
    Tensor,
    add,
    concat,
    cross_entropy,
    embedding,
    no_grad,
    reshape,
    sigmoid_cross_entropy,
    uniform_init,
)
from .transformer import Decoder, Encoder, TransformerConfig

MAX_CAPTION_LEN = 8
FEEDBACK_LEN = 8
TOP_ATTRIBUTES = 8

PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3
_SPECIALS = ["<pad>", "<start>", "<end>", "<unk>"]
_TEMPLATE_WORDS = ["is", "has", "no", "and", "the", "same",
                   "longer", "shorter", "length", "sleeves"]


class NotFittedError(RuntimeError):
    pass


class ConfigurationError(RuntimeError):
    pass


class CaptionVocabulary:
    """Token table for captions and user feedback.

    Built deterministically from the attribute vocabulary: specials,
    template grammar words, then attribute names in id order. Unknown
    words map to ``<unk>``.
    """

    def __init__(self, vocab: AttributeVocab):
        words = list(_SPECIALS) + list(_TEMPLATE_WORDS)
        for attr in vocab.attributes:
            if attr.name not in words:
                words.append(attr.name)
        self.words = words
        self.word_to_id = {w: i for i, w in enumerate(words)}
        # attribute id -> token id of its name
        self.attr_token_ids = np.array(
            [self.word_to_id[a.name] for a in vocab.attributes], dtype=np.int64
        )

    def __len__(self) -> int:
        return len(self.words)

    def encode(self, tokens: list[str], length: int = FEEDBACK_LEN) -> np.ndarray:
        ids = [self.word_to_id.get(t.lower(), UNK_ID) for t in tokens[:length]]
        ids += [PAD_ID] * (length - len(ids))
        return np.array(ids, dtype=np.int64)

    def decode(self, ids) -> list[str]:
        out = []
        for i in ids:
            if i in (PAD_ID, START_ID):
                continue
            if i == END_ID:
                break
            out.append(self.words[int(i)])
        return out

    def tokenize(self, text: str) -> list[str]:
        tokens = []
        for raw in text.lower().split():
            word = raw.strip(".,!?;:'\"()")
            if word:
                tokens.append(word)
        return tokens


# -- attribute predictor ----------------------------------------------------


class AttributePredictor(Module):
    """Linear multi-label probe with top-8 selection.

    When constructed with a ``view_seed`` the predictor observes items
    through their own independently-noised attribute view (its analogue of
    looking at the source image); otherwise it reads the stored retrieval
    feature directly.
    """

    def __init__(self, feature_dim: int, num_attributes: int, seed: int = 0,
                 view_seed: int | None = None):
        rng = np.random.default_rng([seed, 41])
        self.linear = Linear(feature_dim, num_attributes, rng)
        self.fitted = False
        self.view_seed = view_seed
        self._projection = None
        self._view_cache: dict[str, np.ndarray] = {}

    def observe(self, item: GarmentItem) -> np.ndarray:
        if self.view_seed is None:
            return item.feature
        if item.id not in self._view_cache:
            if self._projection is None:
                from .corpus import feature_projection

                self._projection = feature_projection(
                    self.view_seed, self.linear.weight.data.shape[1])
            from .corpus import attribute_view

            self._view_cache[item.id] = attribute_view(
                item, self._projection, self.view_seed)
        return self._view_cache[item.id]

    def scores(self, features: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError("attribute predictor has not been fit()")
        with no_grad():
            return self.linear(Tensor(features)).data

    def top_attributes(self, features: np.ndarray, n: int = TOP_ATTRIBUTES) -> np.ndarray:
        """Attribute ids [batch, n] by descending score, ties by ascending id."""
        s = self.scores(np.atleast_2d(features))
        order = np.lexsort((np.arange(s.shape[1])[None, :].repeat(s.shape[0], 0), -s), axis=1)
        return order[:, :n]

    def predict_attributes(self, item: GarmentItem,
                           n: int = TOP_ATTRIBUTES) -> np.ndarray:
        """Top-n attribute ids for one item, through its observation view."""
        return self.top_attributes(self.observe(item), n)[0]

    def fit(self, items: list[GarmentItem], num_attributes: int,
            epochs: int = 200, lr: float = 0.1, batch_size: int = 256,
            seed: int = 0) -> None:
        feats = np.stack([self.observe(it) for it in items]).astype(np.float32)
        labels = np.zeros((len(items), num_attributes), dtype=np.float32)
        for row, it in enumerate(items):
            labels[row, sorted(it.true_attributes)] = 1.0
        rng = np.random.default_rng([seed, 42])
        opt = Adam(self.parameters(), lr=lr)
        n = len(items)
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                logits = self.linear(Tensor(feats[idx]))
                loss = sigmoid_cross_entropy(logits, labels[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
        self.fitted = True


# -- oracle caption grammar ---------------------------------------------------


def _pair_rng(seed: int, reference_id: str, target_id: str,
              caption_index: int) -> np.random.Generator:
    digest = zlib.crc32(f"{reference_id}|{target_id}|{caption_index}".encode())
    return np.random.default_rng([seed, digest])


def oracle_caption(reference: GarmentItem, target: GarmentItem,
                   vocab: AttributeVocab, seed: int,
                   caption_index: int = 0) -> list[str]:
    """Templated relative caption from attribute-set differences.

    Phrase order is additions, then comparatives, then negations, joined
    with "and"; at most 8 tokens; deterministic for a given seed and pair.
    """
    if reference.id == target.id:
        raise ValueError("oracle_caption requires reference != target")
    added = set(target.true_attributes) - set(reference.true_attributes)
    removed = set(reference.true_attributes) - set(target.true_attributes)
    if not added and not removed:
        return ["is", "the", "same"]
    rng = _pair_rng(seed, reference.id, target.id, caption_index)

    comparatives: list[list[str]] = []
    for fam in ORDINAL_FAMILIES.values():
        members = fam["members"]
        ref_member = next((vocab.by_name[m].id for m in members
                           if vocab.by_name[m].id in reference.true_attributes), None)
        tgt_member = next((vocab.by_name[m].id for m in members
                           if vocab.by_name[m].id in target.true_attributes), None)
        if ref_member is None or tgt_member is None or ref_member == tgt_member:
            continue
        if tgt_member not in added:
            continue
        ref_pos = members.index(vocab.attributes[ref_member].name)
        tgt_pos = members.index(vocab.attributes[tgt_member].name)
        word = "longer" if tgt_pos > ref_pos else "shorter"
        comparatives.append(["has", word, fam["noun"]])
        added.discard(tgt_member)
        removed.discard(ref_member)

    def addition_phrase(attr_id: int) -> list[str]:
        attr = vocab.attributes[attr_id]
        verb = "has" if attr.type in ("fabric", "part") else "is"
        return [verb, attr.name]

    phrases = [addition_phrase(a) for a in sorted(added)]
    phrases += comparatives
    # annotators overwhelmingly describe what the target has; negations
    # appear mostly when there is little else to say
    if len(phrases) < 2:
        phrases += [["no", vocab.attributes[a].name] for a in sorted(removed)]
    if not phrases:
        return ["is", "the", "same"]
    max_phrases = min(len(phrases), 4)
    weights = {1: 0.05, 2: 0.15, 3: 0.35, 4: 0.45}
    probs = np.array([weights[k] for k in range(1, max_phrases + 1)])
    count = int(rng.choice(np.arange(1, max_phrases + 1), p=probs / probs.sum()))
    # a contiguous window (wrapping) over the phrase order; the two
    # annotations of a pair cover different spans
    offset = int(rng.integers(len(phrases)))
    picked = [phrases[(offset + j) % len(phrases)]
              for j in range(count)]
    picked.sort(key=phrases.index)
    # short captions keep the conjunction; longer ones read as terse lists
    use_and = count <= 2 or any(len(p) > 2 for p in picked)
    tokens: list[str] = []
    for j, phrase in enumerate(picked):
        if use_and and j > 0:
            tokens.append("and")
        tokens.extend(phrase)
        if len(tokens) >= MAX_CAPTION_LEN:
            break
    return tokens[:MAX_CAPTION_LEN]


# -- caption model ------------------------------------------------------------


@dataclass
class CaptionerConfig:
    num_layers: int = 6
    hidden_dim: int = 256
    num_heads: int = 8
    feedforward_dim: int = 1024
    dropout_rate: float = 0.1
    use_attributes: bool = True
    feature_dim: int = 64
    seed: int = 0

    def encoder_config(self, vocab_size: int) -> TransformerConfig:
        length = 1 + 2 * TOP_ATTRIBUTES if self.use_attributes else 1
        return TransformerConfig(
            num_layers=self.num_layers, hidden_dim=self.hidden_dim,
            num_heads=self.num_heads, feedforward_dim=self.feedforward_dim,
            max_sequence_len=length, vocab_size=vocab_size,
            dropout_rate=self.dropout_rate,
        )

    def decoder_config(self, vocab_size: int) -> TransformerConfig:
        return TransformerConfig(
            num_layers=self.num_layers, hidden_dim=self.hidden_dim,
            num_heads=self.num_heads, feedforward_dim=self.feedforward_dim,
            max_sequence_len=MAX_CAPTION_LEN + 1, vocab_size=vocab_size,
            dropout_rate=self.dropout_rate,
        )


def image_difference(ref_features: np.ndarray, tgt_features: np.ndarray) -> np.ndarray:
    """Reference-minus-target feature difference; antisymmetric under swap."""
    return (np.asarray(ref_features) - np.asarray(tgt_features)).astype(np.float32)


class RelativeCaptionModel(Module):
    def __init__(self, config: CaptionerConfig, caption_vocab: CaptionVocabulary):
        rng = np.random.default_rng([config.seed, 7])
        self.config = config
        vocab_size = len(caption_vocab)
        d = config.hidden_dim
        self.word_embed = Embedding(vocab_size, d, rng)
        self.img_proj = Linear(config.feature_dim, d, rng)
        self.segment = Tensor(uniform_init(rng, (3, d), d), requires_grad=True)
        self.encoder = Encoder(config.encoder_config(vocab_size), rng)
        self.decoder = Decoder(config.decoder_config(vocab_size),
                               self.word_embed, rng)

    def encode_pair(self, ref_features: np.ndarray, tgt_features: np.ndarray,
                    ref_attr_tokens: np.ndarray | None,
                    tgt_attr_tokens: np.ndarray | None):
        """Assemble and encode the conditioning sequence.

        The image slot carries the reference-minus-target feature
        difference, so swapping the pair exactly flips its sign.
        """
        b = ref_features.shape[0]
        d = self.config.hidden_dim
        diff = image_difference(ref_features, tgt_features)
        img = reshape(self.img_proj(Tensor(diff)), (b, 1, d))
        img = add(img, reshape(_segment_row(self.segment, 0), (1, 1, d)))
        if self.config.use_attributes:
            if ref_attr_tokens is None or tgt_attr_tokens is None:
                raise ConfigurationError(
                    "attribute-aware captioner needs attribute tokens"
                )
            ref_emb = add(self.word_embed(ref_attr_tokens),
                          reshape(_segment_row(self.segment, 1), (1, 1, d)))
            tgt_emb = add(self.word_embed(tgt_attr_tokens),
                          reshape(_segment_row(self.segment, 2), (1, 1, d)))
            x = concat([img, ref_emb, tgt_emb], axis=1)
        else:
            x = img
        pad_mask = np.ones((b, x.shape[1]), dtype=bool)
        enc_out = self.encoder(x, pad_mask, add_positional=False)
        return enc_out, pad_mask

    def loss(self, ref_features, tgt_features, ref_attr_tokens,
             tgt_attr_tokens, caption_ids: np.ndarray) -> Tensor:
        """Teacher-forced cross-entropy; ``caption_ids`` is [B, 8] padded."""
        enc_out, pad_mask = self.encode_pair(
            ref_features, tgt_features, ref_attr_tokens, tgt_attr_tokens
        )
        dec_in, targets = _shift_captions(caption_ids)
        logits = self.decoder.decode_all(dec_in, enc_out, pad_mask)
        return cross_entropy(logits, targets, PAD_ID)

    def token_accuracy(self, ref_features, tgt_features, ref_attr_tokens,
                       tgt_attr_tokens, caption_ids: np.ndarray) -> float:
        """Teacher-forced next-token accuracy over non-pad positions."""
        with no_grad():
            enc_out, pad_mask = self.encode_pair(
                ref_features, tgt_features, ref_attr_tokens, tgt_attr_tokens
            )
            dec_in, targets = _shift_captions(caption_ids)
            logits = self.decoder.decode_all(dec_in, enc_out, pad_mask)
        pred = logits.data.argmax(axis=-1)
        valid = targets != PAD_ID
        return float((pred[valid] == targets[valid]).mean())

    def sequence_score(self, ref_features, tgt_features, ref_attr_tokens,
                       tgt_attr_tokens, token_ids: list[list[int]]) -> np.ndarray:
        """Length-normalized log-probability of given captions (with end token)."""
        with no_grad():
            enc_out, pad_mask = self.encode_pair(
                ref_features, tgt_features, ref_attr_tokens, tgt_attr_tokens
            )
            padded = np.full((len(token_ids), MAX_CAPTION_LEN), PAD_ID,
                             dtype=np.int64)
            for row, toks in enumerate(token_ids):
                padded[row, : len(toks)] = toks[:MAX_CAPTION_LEN]
            dec_in, targets = _shift_captions(padded)
            logits = self.decoder.decode_all(dec_in, enc_out, pad_mask)
        logp = _log_softmax(logits.data)
        out = np.zeros(len(token_ids), dtype=np.float64)
        for row, toks in enumerate(token_ids):
            n = min(len(toks), MAX_CAPTION_LEN)
            steps = list(range(n))
            total = float(logp[row, steps, targets[row, steps]].sum())
            total += float(logp[row, n, END_ID])
            out[row] = total / (n + 1)
        return out

    def generate(self, ref_features, tgt_features, ref_attr_tokens,
                 tgt_attr_tokens, mode: str = "greedy") -> list[list[int]]:
        """Decode captions for a batch of pairs; token ids without specials."""
        with no_grad():
            enc_out, pad_mask = self.encode_pair(
                ref_features, tgt_features, ref_attr_tokens, tgt_attr_tokens
            )
            if mode == "greedy":
                seqs, _ = _greedy_decode(self.decoder, enc_out.detach(), pad_mask)
                return seqs
            if mode in ("beam", "beam5"):
                return _beam_decode(self.decoder, enc_out.detach(), pad_mask,
                                    beam_size=5)
            if mode.startswith("beam"):
                return _beam_decode(self.decoder, enc_out.detach(), pad_mask,
                                    beam_size=int(mode[4:]))
        raise ValueError(f"unknown decode mode {mode!r}")


def _segment_row(segment: Tensor, index: int) -> Tensor:
    return embedding(segment, np.array([index]))


def _shift_captions(caption_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b, L = caption_ids.shape
    dec_in = np.full((b, L + 1), PAD_ID, dtype=np.int64)
    dec_in[:, 0] = START_ID
    dec_in[:, 1:] = caption_ids
    targets = np.full((b, L + 1), PAD_ID, dtype=np.int64)
    targets[:, :L] = caption_ids
    lengths = (caption_ids != PAD_ID).sum(axis=1)
    targets[np.arange(b), lengths] = END_ID
    return dec_in, targets


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _greedy_decode(decoder: Decoder, enc_out: Tensor, pad_mask: np.ndarray):
    """Batched greedy rollout; returns (token lists, length-normalized scores).

    Every hypothesis is terminated by an end token: if the length cap is
    hit first, its log-probability is still charged, so scores compare on
    one convention everywhere.
    """
    b = enc_out.shape[0]
    prefix = np.full((b, 1), START_ID, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    scores = np.zeros(b, dtype=np.float64)
    steps = np.zeros(b, dtype=np.int64)
    for _ in range(MAX_CAPTION_LEN):
        logp = _log_softmax(decoder.decode_step(prefix, enc_out, pad_mask))
        nxt = logp.argmax(axis=-1)
        nxt = np.where(done, PAD_ID, nxt)
        gain = logp[np.arange(b), nxt]
        scores += np.where(done, 0.0, gain)
        steps += (~done).astype(np.int64)
        done |= nxt == END_ID
        prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        if done.all():
            break
    if not done.all():
        last = _log_softmax(
            decoder.decode_all(prefix, enc_out, pad_mask).data[:, -1, :])
        scores += np.where(done, 0.0, last[:, END_ID])
        steps += (~done).astype(np.int64)
    seqs = []
    for row in prefix:
        toks = []
        for t in row[1:]:
            if t in (END_ID, PAD_ID):
                break
            toks.append(int(t))
        seqs.append(toks)
    return seqs, scores / np.maximum(steps, 1)


def _beam_decode(decoder: Decoder, enc_out: Tensor, pad_mask: np.ndarray,
                 beam_size: int) -> list[list[int]]:
    """Batched beam search, length-normalized scores.

    The greedy rollout is always included as a candidate so the returned
    hypothesis never scores below greedy decoding.
    """
    b, te, d = enc_out.shape
    k = beam_size
    enc_rep = Tensor(np.repeat(enc_out.data, k, axis=0))
    mask_rep = np.repeat(pad_mask, k, axis=0)
    prefix = np.full((b * k, 1), START_ID, dtype=np.int64)
    scores = np.full((b, k), -np.inf, dtype=np.float64)
    scores[:, 0] = 0.0
    alive = np.ones((b, k), dtype=bool)
    finished: list[list[tuple[float, list[int]]]] = [[] for _ in range(b)]
    for step in range(MAX_CAPTION_LEN):
        logp = _log_softmax(decoder.decode_step(prefix, enc_rep, mask_rep))
        vocab = logp.shape[-1]
        total = scores[:, :, None] + logp.reshape(b, k, vocab)
        total[~alive] = -np.inf
        flat = total.reshape(b, k * vocab)
        top = np.argsort(-flat, axis=1, kind="stable")[:, :k]
        new_prefix = np.zeros((b * k, prefix.shape[1] + 1), dtype=np.int64)
        new_scores = np.full((b, k), -np.inf, dtype=np.float64)
        new_alive = np.zeros((b, k), dtype=bool)
        for i in range(b):
            slot = 0
            for choice in top[i]:
                src_beam, token = divmod(int(choice), vocab)
                score = flat[i, choice]
                if not np.isfinite(score):
                    break
                tokens = prefix[i * k + src_beam, 1:].tolist()
                if token == END_ID:
                    norm = score / (step + 1)
                    finished[i].append((norm, [t for t in tokens if t != PAD_ID]))
                    continue
                new_prefix[i * k + slot, : prefix.shape[1]] = prefix[i * k + src_beam]
                new_prefix[i * k + slot, -1] = token
                new_scores[i, slot] = score
                new_alive[i, slot] = True
                slot += 1
                if slot == k:
                    break
        prefix, scores, alive = new_prefix, new_scores, new_alive
        if not alive.any():
            break
    if alive.any():
        # length-capped hypotheses still pay for their end token
        last = _log_softmax(
            decoder.decode_all(prefix, enc_rep, mask_rep).data[:, -1, :])
        for i in range(b):
            for j in range(k):
                if alive[i, j]:
                    tokens = [t for t in prefix[i * k + j, 1:].tolist()
                              if t != PAD_ID]
                    total = scores[i, j] + last[i * k + j, END_ID]
                    finished[i].append((total / (len(tokens) + 1), tokens))
    greedy_seqs, greedy_scores = _greedy_decode(decoder, enc_out, pad_mask)
    out = []
    for i in range(b):
        finished[i].append((float(greedy_scores[i]), greedy_seqs[i]))
        # max keeps the first of tied scores; list order is deterministic
        best = max(finished[i], key=lambda sc: sc[0])
        out.append(best[1])
    return out


# -- training -----------------------------------------------------------------


@dataclass
class CaptionSample:
    ref_features: np.ndarray
    tgt_features: np.ndarray
    ref_attr_tokens: np.ndarray
    tgt_attr_tokens: np.ndarray
    caption_ids: np.ndarray


def build_caption_samples(pairs, items_by_id: dict[str, GarmentItem],
                          predictor: AttributePredictor,
                          caption_vocab: CaptionVocabulary) -> CaptionSample:
    """Flatten captioned pairs into padded training arrays (one row per caption)."""
    attr_cache: dict[str, np.ndarray] = {}

    def attrs_for(item_id: str) -> np.ndarray:
        if item_id not in attr_cache:
            ids = predictor.predict_attributes(items_by_id[item_id])
            attr_cache[item_id] = caption_vocab.attr_token_ids[ids]
        return attr_cache[item_id]

    rows = []
    for pair in pairs:
        for caption in pair.captions:
            rows.append((pair.reference_id, pair.target_id,
                         caption_vocab.encode(caption, MAX_CAPTION_LEN)))
    ref_feats = np.stack([items_by_id[r].feature for r, _, _ in rows])
    tgt_feats = np.stack([items_by_id[t].feature for _, t, _ in rows])
    ref_attrs = np.stack([attrs_for(r) for r, _, _ in rows])
    tgt_attrs = np.stack([attrs_for(t) for _, t, _ in rows])
    captions = np.stack([c for _, _, c in rows])
    return CaptionSample(ref_feats, tgt_feats, ref_attrs, tgt_attrs, captions)


def train_captioner(model: RelativeCaptionModel, samples: CaptionSample,
                    epochs: int = 10, batch_size: int = 64, lr: float = 1e-3,
                    seed: int = 0, log=None) -> list[float]:
    """Minimize caption cross-entropy; returns per-epoch mean losses."""
    n = samples.caption_ids.shape[0]
    if n == 0:
        raise ConfigurationError("train_captioner: empty training set")
    rng = np.random.default_rng([seed, 11])
    opt = Adam(model.parameters(), lr=lr)
    model.train(True)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss = model.loss(
                samples.ref_features[idx], samples.tgt_features[idx],
                samples.ref_attr_tokens[idx], samples.tgt_attr_tokens[idx],
                samples.caption_ids[idx],
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        if log:
            log(f"captioner epoch {epoch + 1}/{epochs} loss {history[-1]:.4f}")
    model.train(False)
    return history


# -- the frozen simulator bundle ----------------------------------------------


class UserSimulator:
    """Caption model + attribute predictor acting as the user.

    Must be frozen before retriever training; generation never mutates
    parameters.
    """

    def __init__(self, model: RelativeCaptionModel,
                 predictor: AttributePredictor,
                 caption_vocab: CaptionVocabulary):
        self.model = model
        self.predictor = predictor
        self.caption_vocab = caption_vocab
        self.frozen = False
        self._attr_cache: dict[str, np.ndarray] = {}

    def freeze(self) -> None:
        self.model.train(False)
        self.frozen = True

    def attr_tokens(self, item: GarmentItem) -> np.ndarray:
        if item.id not in self._attr_cache:
            ids = self.predictor.predict_attributes(item)
            self._attr_cache[item.id] = self.caption_vocab.attr_token_ids[ids]
        return self._attr_cache[item.id]

    def feedback(self, shown: list[GarmentItem], targets: list[GarmentItem],
                 mode: str = "greedy") -> np.ndarray:
        """Simulated feedback token ids [batch, 8], padded."""
        ref_feats = np.stack([it.feature for it in shown])
        tgt_feats = np.stack([it.feature for it in targets])
        if self.model.config.use_attributes:
            ref_attrs = np.stack([self.attr_tokens(it) for it in shown])
            tgt_attrs = np.stack([self.attr_tokens(it) for it in targets])
        else:
            ref_attrs = tgt_attrs = None
        seqs = self.model.generate(ref_feats, tgt_feats, ref_attrs, tgt_attrs,
                                   mode=mode)
        out = np.full((len(seqs), FEEDBACK_LEN), PAD_ID, dtype=np.int64)
        for row, seq in enumerate(seqs):
            trimmed = seq[:FEEDBACK_LEN]
            out[row, : len(trimmed)] = trimmed
        return out
