"""Synthetic garment corpus.

Items carry a ground-truth attribute set drawn from a structured prior,
a product-style title that embeds every attribute word, and a feature
vector that is a fixed random linear map of the attribute multi-hot plus
gaussian noise. Reference/target pairs are selected by maximum summed
TF-IDF weight over overlapping title words.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ATTRIBUTE_TYPES = ("texture", "fabric", "shape", "part", "style")
CATEGORIES = ("dresses", "shirts", "tops_tees")
SPLITS = ("train", "val", "test")
FEATURE_DIM = 64
FEATURE_NOISE_SIGMA = 0.05

_ATTRIBUTE_WORDS = {
    "texture": ["floral", "striped", "plaid", "polka", "paisley", "geometric",
                "solid", "graphic", "camo", "tiedye", "checkered", "marled"],
    "fabric": ["denim", "lace", "silk", "cotton", "leather", "wool",
               "linen", "velvet", "chiffon", "knit", "satin", "suede"],
    "shape": ["mini", "midi", "maxi", "fitted", "loose", "asymmetric",
              "cropped", "longline", "sleeveless", "shortsleeve", "longsleeve",
              "peplum"],
    "part": ["pockets", "buttons", "zipper", "collar", "hood", "belt",
             "fringe", "ruffles", "straps", "cuffs", "drawstring", "bow"],
    "style": ["casual", "formal", "boho", "vintage", "sporty", "elegant",
              "edgy", "preppy", "romantic", "minimalist", "western",
              "nautical"],
}

# ordered families support comparative caption forms ("longer sleeves")
ORDINAL_FAMILIES = {
    "length": {"members": ["mini", "midi", "maxi"], "noun": "length"},
    "sleeves": {"members": ["sleeveless", "shortsleeve", "longsleeve"],
                "noun": "sleeves"},
}

_FILLER_WORDS = ["women", "classic", "new", "summer", "soft", "premium",
                 "everyday", "essential", "comfy", "trend"]
# brand-like rare tokens: their high IDF makes TF-IDF pairing partly
# brand-driven, so paired items are similar but not attribute clones
_BRAND_WORDS = ["averra", "bellmore", "corvina", "dantelle", "elowen",
                "fairmont", "gable", "harlow", "ivette", "juniper",
                "kestrel", "lumina", "marcelle", "nolita", "oriana",
                "piper", "quincy", "rosette", "solene", "tamsin",
                "ursa", "verity", "wrenley", "zephyr"]
_CATEGORY_NOUN = {"dresses": "dress", "shirts": "shirt", "tops_tees": "tee"}
_CATEGORY_PREFIX = {"dresses": "dr", "shirts": "sh", "tops_tees": "tt"}


class JsonlError(ValueError):
    """Malformed or schema-violating JSONL record; message cites the line."""


@dataclass(frozen=True)
class Attribute:
    id: int
    name: str
    type: str


class AttributeVocab:
    def __init__(self, attributes: list[Attribute]):
        names = [a.name for a in attributes]
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")
        for a in attributes:
            if a.type not in ATTRIBUTE_TYPES:
                raise ValueError(f"unknown attribute type {a.type!r}")
        self.attributes = list(attributes)
        self.by_name = {a.name: a for a in attributes}
        self.by_type: dict[str, list[Attribute]] = {t: [] for t in ATTRIBUTE_TYPES}
        for a in attributes:
            self.by_type[a.type].append(a)

    def __len__(self) -> int:
        return len(self.attributes)

    def names(self, ids) -> list[str]:
        return [self.attributes[i].name for i in ids]

    def family_of(self, attr_id: int) -> str | None:
        name = self.attributes[attr_id].name
        for fam, spec in ORDINAL_FAMILIES.items():
            if name in spec["members"]:
                return fam
        return None

    def to_json(self) -> dict:
        return {
            "attributes": [
                {"id": a.id, "name": a.name, "type": a.type}
                for a in self.attributes
            ]
        }

    @classmethod
    def from_json(cls, payload: dict) -> "AttributeVocab":
        attrs = [
            Attribute(id=rec["id"], name=rec["name"], type=rec["type"])
            for rec in payload["attributes"]
        ]
        return cls(attrs)


def default_vocab() -> AttributeVocab:
    """The 60-attribute synthetic vocabulary, 12 per type."""
    attrs = []
    for type_name in ATTRIBUTE_TYPES:
        for word in _ATTRIBUTE_WORDS[type_name]:
            attrs.append(Attribute(id=len(attrs), name=word, type=type_name))
    return AttributeVocab(attrs)


@dataclass
class GarmentItem:
    id: str
    category: str
    title: list[str]
    true_attributes: set[int]
    feature: np.ndarray
    split: str
    extra: dict = field(default_factory=dict)


@dataclass
class CaptionedPair:
    reference_id: str
    target_id: str
    captions: list[list[str]]
    split: str
    extra: dict = field(default_factory=dict)


@dataclass
class PairingResult:
    reference_id: str
    target_id: str
    score: float
    no_overlap: bool = False


def default_sizes(items_per_category: int = 2000) -> dict[str, dict[str, int]]:
    """Per-category split sizes at source-data train/val/test proportions."""
    fractions = {"train": 0.6, "val": 0.2, "test": 0.2}
    sizes: dict[str, dict[str, int]] = {}
    for cat in CATEGORIES:
        per = {s: int(round(items_per_category * f)) for s, f in fractions.items()}
        per["train"] += items_per_category - sum(per.values())
        sizes[cat] = per
    return sizes


def feature_projection(seed: int, vocab_size: int) -> np.ndarray:
    """Fixed random map from attribute multi-hot to feature space.

    Column scale keeps one attribute's contribution well above the
    per-item noise floor so a linear probe can recover the labels.
    """
    rng = np.random.default_rng([seed, 9001])
    return rng.normal(0.0, 1.0 / 4.0, size=(vocab_size, FEATURE_DIM)).astype(np.float32)


ATTRIBUTE_VIEW_SIGMA = 0.01


def attribute_view(item: GarmentItem, projection: np.ndarray, seed: int,
                   sigma: float = ATTRIBUTE_VIEW_SIGMA) -> np.ndarray:
    """Second, independently-noised observation of an item.

    The attribute predictor consumes this view rather than the stored
    retrieval feature, mirroring a pipeline whose attribute network looks
    at the source image itself: its predictions then carry information
    not already present in the retrieval feature's noise realization. The
    lower noise floor reflects an expert-grade attribute network.
    """
    vocab_size = projection.shape[0]
    multi_hot = np.zeros(vocab_size, dtype=np.float32)
    multi_hot[sorted(item.true_attributes)] = 1.0
    rng = np.random.default_rng([seed, 7777, zlib.crc32(item.id.encode())])
    noise = rng.normal(0.0, sigma, projection.shape[1])
    return (multi_hot @ projection + noise).astype(np.float32)


def _sample_attribute_set(rng: np.random.Generator, vocab: AttributeVocab,
                          weights: np.ndarray) -> set[int]:
    """Draw 3-10 attributes; correlated within type via cluster weights,
    at most one member per ordinal family."""
    chosen: set[int] = set()

    def conflicts(attr_id: int) -> bool:
        fam = vocab.family_of(attr_id)
        if fam is None:
            return False
        members = ORDINAL_FAMILIES[fam]["members"]
        return any(vocab.attributes[c].name in members for c in chosen)

    def draw_from(ids: list[int], k: int) -> None:
        pool = [i for i in ids if i not in chosen]
        for _ in range(k):
            pool = [i for i in pool if not conflicts(i)]
            if not pool:
                return
            w = weights[pool]
            w = w / w.sum()
            pick = int(rng.choice(pool, p=w))
            chosen.add(pick)
            pool.remove(pick)

    for type_name in ATTRIBUTE_TYPES:
        k = int(rng.choice([0, 1, 2, 3], p=[0.2, 0.4, 0.3, 0.1]))
        draw_from([a.id for a in vocab.by_type[type_name]], k)
    all_ids = list(range(len(vocab)))
    while len(chosen) < 3:
        draw_from(all_ids, 1)
    while len(chosen) > 10:
        chosen.remove(int(rng.choice(sorted(chosen))))
    return chosen


def generate_corpus(
    seed: int,
    sizes: dict[str, dict[str, int]] | None = None,
    vocab: AttributeVocab | None = None,
) -> tuple[list[GarmentItem], AttributeVocab]:
    """Deterministically generate items for every category and split."""
    if sizes is None:
        sizes = default_sizes()
    if vocab is None:
        vocab = default_vocab()
    for cat, per_split in sizes.items():
        for split, n in per_split.items():
            if n <= 0:
                raise ValueError(f"size for {cat}/{split} must be positive")
    projection = feature_projection(seed, len(vocab))
    rng = np.random.default_rng([seed, 1])
    n_clusters = 4
    # per (category, cluster) preference over attributes: the structured prior
    prefs = rng.gamma(2.0, 1.0, size=(len(CATEGORIES), n_clusters, len(vocab)))
    items: list[GarmentItem] = []
    for ci, cat in enumerate(CATEGORIES):
        if cat not in sizes:
            continue
        counter = 0
        for split in SPLITS:
            for _ in range(sizes[cat].get(split, 0)):
                cluster = int(rng.integers(n_clusters))
                attrs = _sample_attribute_set(rng, vocab, prefs[ci, cluster])
                multi_hot = np.zeros(len(vocab), dtype=np.float32)
                multi_hot[sorted(attrs)] = 1.0
                noise = rng.normal(0.0, FEATURE_NOISE_SIGMA, FEATURE_DIM)
                feature = (multi_hot @ projection + noise).astype(np.float32)
                fillers = [_CATEGORY_NOUN[cat]]
                fillers += [str(w) for w in rng.choice(
                    _BRAND_WORDS, size=int(rng.integers(2, 4)), replace=False)]
                fillers += [str(w) for w in rng.choice(
                    _FILLER_WORDS, size=int(rng.integers(0, 3)), replace=False)]
                title = vocab.names(sorted(attrs)) + fillers
                rng.shuffle(title)
                item_id = f"{_CATEGORY_PREFIX[cat]}{counter:05d}"
                counter += 1
                items.append(GarmentItem(
                    id=item_id, category=cat, title=title,
                    true_attributes=attrs, feature=feature, split=split,
                ))
    return items, vocab


def extract_attributes(title, vocab: AttributeVocab) -> set[int]:
    """Vocabulary attributes whose word occurs in the title (case-folded)."""
    if isinstance(title, str):
        tokens = title.lower().split()
    else:
        tokens = [t.lower() for t in title]
    present = set(tokens)
    return {a.id for a in vocab.attributes if a.name in present}


# -- TF-IDF pairing ------------------------------------------------------


def tfidf_pair(
    targets: list[GarmentItem],
    pool: list[GarmentItem],
    weighting: str = "target",
) -> list[PairingResult]:
    """Pick, for each target, the pool item maximizing summed TF-IDF weight
    over overlapping title words.

    ``weighting="target"`` scores each overlapping word by the target
    title's tf-idf weight; ``"symmetric"`` adds both sides' weights.
    Ties break toward the smallest item id. A target whose title overlaps
    no candidate at all is paired with the smallest candidate id and
    flagged ``no_overlap``.
    """
    if weighting not in ("target", "symmetric"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if len(pool) < 2:
        raise ValueError("pool must contain at least 2 items")
    docs: dict[str, list[str]] = {}
    for item in list(pool) + list(targets):
        docs.setdefault(item.id, [t.lower() for t in item.title])
    n_docs = len(docs)
    df: dict[str, int] = {}
    for tokens in docs.values():
        for word in set(tokens):
            df[word] = df.get(word, 0) + 1
    idf = {w: float(np.log(n_docs / c)) for w, c in df.items()}

    def counts(tokens: list[str]) -> dict[str, int]:
        c: dict[str, int] = {}
        for w in tokens:
            c[w] = c.get(w, 0) + 1
        return c

    tf = {doc_id: counts(tokens) for doc_id, tokens in docs.items()}
    results = []
    pool_sorted = sorted(pool, key=lambda it: it.id)
    for target in targets:
        t_tf = tf[target.id]
        best_id, best_score = None, -1.0
        any_overlap = False
        for cand in pool_sorted:
            if cand.id == target.id:
                continue
            overlap = t_tf.keys() & tf[cand.id].keys()
            if overlap:
                any_overlap = True
            score = 0.0
            # fixed summation order keeps scores bit-stable across processes
            for w in sorted(overlap):
                score += t_tf[w] * idf[w]
                if weighting == "symmetric":
                    score += tf[cand.id][w] * idf[w]
            if score > best_score:
                best_id, best_score = cand.id, score
        results.append(PairingResult(
            reference_id=best_id, target_id=target.id,
            score=max(best_score, 0.0), no_overlap=not any_overlap,
        ))
    return results


# -- helpers -------------------------------------------------------------


def index_by_id(items: list[GarmentItem]) -> dict[str, GarmentItem]:
    return {item.id: item for item in items}


def filter_items(items: list[GarmentItem], category: str | None = None,
                 split: str | None = None) -> list[GarmentItem]:
    out = items
    if category is not None:
        out = [i for i in out if i.category == category]
    if split is not None:
        out = [i for i in out if i.split == split]
    return out


# -- on-disk formats -------------------------------------------------------

_ITEM_FIELDS = ("id", "category", "title", "attributes", "feature", "split")
_PAIR_FIELDS = ("reference_id", "target_id", "captions", "split")


def _item_record(item: GarmentItem) -> dict:
    rec = {
        "id": item.id,
        "category": item.category,
        "title": item.title,
        "attributes": sorted(item.true_attributes),
        "feature": [float(x) for x in item.feature],
        "split": item.split,
    }
    for k, v in item.extra.items():
        rec.setdefault(k, v)
    return rec


def save_items_jsonl(path: str | Path, items: list[GarmentItem]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(_item_record(item)) + "\n")


def load_items_jsonl(path: str | Path) -> list[GarmentItem]:
    items = []
    for lineno, record in _iter_jsonl(path, required=_ITEM_FIELDS):
        items.append(GarmentItem(
            id=record.pop("id"),
            category=record.pop("category"),
            title=list(record.pop("title")),
            true_attributes=set(record.pop("attributes")),
            feature=np.asarray(record.pop("feature"), dtype=np.float32),
            split=record.pop("split"),
            extra=record,
        ))
    return items


def save_pairs_jsonl(path: str | Path, pairs: list[CaptionedPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            rec = {
                "reference_id": pair.reference_id,
                "target_id": pair.target_id,
                "captions": pair.captions,
                "split": pair.split,
            }
            for k, v in pair.extra.items():
                rec.setdefault(k, v)
            fh.write(json.dumps(rec) + "\n")


def load_pairs_jsonl(path: str | Path) -> list[CaptionedPair]:
    pairs = []
    for lineno, record in _iter_jsonl(path, required=_PAIR_FIELDS):
        pairs.append(CaptionedPair(
            reference_id=record.pop("reference_id"),
            target_id=record.pop("target_id"),
            captions=[list(c) for c in record.pop("captions")],
            split=record.pop("split"),
            extra=record,
        ))
    return pairs


def _iter_jsonl(path: str | Path, required: tuple[str, ...]):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JsonlError(f"{path}: line {lineno}: malformed JSON ({exc})")
            if not isinstance(record, dict):
                raise JsonlError(f"{path}: line {lineno}: record is not an object")
            for name in required:
                if name not in record:
                    raise JsonlError(
                        f"{path}: line {lineno}: missing required field {name!r}"
                    )
            yield lineno, record


def save_vocab_json(path: str | Path, vocab: AttributeVocab) -> None:
    Path(path).write_text(json.dumps(vocab.to_json(), indent=2) + "\n",
                          encoding="utf-8")


def load_vocab_json(path: str | Path) -> AttributeVocab:
    return AttributeVocab.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def save_corpus(directory: str | Path, items: list[GarmentItem],
                vocab: AttributeVocab,
                pairs: list[CaptionedPair] | None = None,
                seed: int | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_items_jsonl(directory / "items.jsonl", items)
    save_vocab_json(directory / "vocab.json", vocab)
    if pairs is not None:
        save_pairs_jsonl(directory / "pairs.jsonl", pairs)
    if seed is not None:
        (directory / "meta.json").write_text(
            json.dumps({"generation_seed": seed}) + "\n", encoding="utf-8")


def load_corpus(directory: str | Path):
    directory = Path(directory)
    items = load_items_jsonl(directory / "items.jsonl")
    vocab = load_vocab_json(directory / "vocab.json")
    pairs_path = directory / "pairs.jsonl"
    pairs = load_pairs_jsonl(pairs_path) if pairs_path.exists() else None
    return items, vocab, pairs


def load_corpus_seed(directory: str | Path) -> int | None:
    meta_path = Path(directory) / "meta.json"
    if not meta_path.exists():
        return None
    return json.loads(meta_path.read_text(encoding="utf-8")).get("generation_seed")
