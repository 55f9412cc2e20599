"""Command line interface.

Training and evaluation subcommands drive the library directly (they are
batch jobs); the ``session`` group is a thin HTTP client for a running
service instance.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from .captioner import CaptionerConfig, CaptionVocabulary
from .metrics import recall_at
from .pipeline import (
    build_eval_report,
    build_pairs_with_captions,
    evaluate_captioning,
    evaluate_retrieval,
    file_sha256,
    fit_predictor,
    load_retriever,
    load_simulator,
    save_retriever,
    save_simulator,
    train_simulator,
)
from .retriever import (
    CandidatePool,
    RetrievalModel,
    RetrieverConfig,
    run_dialog,
    train_retriever,
)


def _echo(message: str) -> None:
    click.echo(message)


def _model_size_options(fn):
    fn = click.option("--layers", default=6, show_default=True,
                      help="Transformer layers.")(fn)
    fn = click.option("--hidden", default=256, show_default=True,
                      help="Hidden dimension.")(fn)
    fn = click.option("--heads", default=8, show_default=True,
                      help="Attention heads.")(fn)
    fn = click.option("--ffn", default=None, type=int,
                      help="Feedforward dimension (default 4x hidden).")(fn)
    return fn


@click.group()
def main() -> None:
    """Dialog-based interactive garment retrieval."""


@main.command("gen-corpus")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
@click.option("--items-per-category", default=2000, show_default=True)
@click.option("--pairs/--no-pairs", "with_pairs", default=True,
              help="Also build TF-IDF pairs with oracle captions.")
def gen_corpus(out: str, seed: int, items_per_category: int,
               with_pairs: bool) -> None:
    """Generate the synthetic corpus (items, vocab, captioned pairs)."""
    sizes = corpus_mod.default_sizes(items_per_category)
    items, vocab = corpus_mod.generate_corpus(seed=seed, sizes=sizes)
    pairs = build_pairs_with_captions(items, vocab, seed=seed) if with_pairs else None
    corpus_mod.save_corpus(out, items, vocab, pairs, seed=seed)
    _echo(f"wrote {len(items)} items"
          + (f", {len(pairs)} pairs" if pairs else "") + f" to {out}")


@main.group()
def captioner() -> None:
    """Relative-captioning user simulator."""


@captioner.command("train")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--attrs", type=click.Choice(["on", "off"]), default="on",
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--category", default="dresses", show_default=True)
@click.option("--epochs", default=10, show_default=True)
@click.option("--batch-size", default=64, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@_model_size_options
def captioner_train(corpus_dir, out, attrs, seed, category, epochs, batch_size,
                    lr, layers, hidden, heads, ffn) -> None:
    items, vocab, pairs = corpus_mod.load_corpus(corpus_dir)
    if pairs is None:
        raise click.ClickException("corpus has no pairs.jsonl; rerun gen-corpus")
    cat_items = corpus_mod.filter_items(items, category=category)
    cat_ids = {i.id for i in cat_items}
    cat_pairs = [p for p in pairs if p.target_id in cat_ids]
    config = CaptionerConfig(
        num_layers=layers, hidden_dim=hidden, num_heads=heads,
        feedforward_dim=ffn or 4 * hidden, use_attributes=attrs == "on",
        feature_dim=cat_items[0].feature.shape[0], seed=seed,
    )
    predictor = fit_predictor(cat_items, vocab, seed=seed,
                              view_seed=corpus_mod.load_corpus_seed(corpus_dir))
    simulator, history = train_simulator(
        cat_items, cat_pairs, vocab, config, predictor=predictor,
        epochs=epochs, batch_size=batch_size, lr=lr, log=_echo,
    )
    save_simulator(out, simulator)
    _echo(f"saved captioner to {out} (final loss {history[-1]:.4f})")


@captioner.command("eval")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--decode", type=click.Choice(["greedy", "beam5"]),
              default="beam5", show_default=True)
@click.option("--category", default="dresses", show_default=True)
@click.option("--split", default="test", show_default=True)
@click.option("--out", type=click.Path(), default=None)
def captioner_eval(corpus_dir, checkpoint, decode, category, split, out) -> None:
    items, vocab, pairs = corpus_mod.load_corpus(corpus_dir)
    simulator = load_simulator(checkpoint, vocab)
    simulator.freeze()
    scores = evaluate_captioning(simulator, items, pairs or [], category,
                                 split=split, decode_mode=decode)
    payload = {"captioning": scores,
               "metadata": {"checkpoint": file_sha256(checkpoint),
                            "decode": decode, "category": category,
                            "split": split}}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    _echo(text)


@captioner.command("generate")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--reference", "reference_id", required=True)
@click.option("--target", "target_id", required=True)
@click.option("--decode", type=click.Choice(["greedy", "beam5"]),
              default="beam5", show_default=True)
def captioner_generate(corpus_dir, checkpoint, reference_id, target_id,
                       decode) -> None:
    items, vocab, _ = corpus_mod.load_corpus(corpus_dir)
    by_id = corpus_mod.index_by_id(items)
    simulator = load_simulator(checkpoint, vocab)
    simulator.freeze()
    fb = simulator.feedback([by_id[reference_id]], [by_id[target_id]],
                            mode=decode)
    _echo(" ".join(simulator.caption_vocab.decode(fb[0])))


@main.group()
def retriever() -> None:
    """Dialog-based retrieval model."""


@retriever.command("train")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--simulator", "simulator_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--attrs", type=click.Choice(["on", "off"]), default="on",
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--category", default="dresses", show_default=True)
@click.option("--epochs", default=4, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--margin", default=0.2, show_default=True)
@click.option("--turns", default=5, show_default=True)
@click.option("--allow-repeats/--no-repeats", default=False, show_default=True,
              help="Allow re-retrieving already shown items.")
@_model_size_options
def retriever_train(corpus_dir, simulator_path, out, attrs, seed, category,
                    epochs, batch_size, lr, margin, turns, allow_repeats,
                    layers, hidden, heads, ffn) -> None:
    items, vocab, _ = corpus_mod.load_corpus(corpus_dir)
    simulator = load_simulator(simulator_path, vocab)
    simulator.freeze()
    config = RetrieverConfig(
        num_layers=layers, hidden_dim=hidden, num_heads=heads,
        feedforward_dim=ffn or 4 * hidden, use_attributes=attrs == "on",
        feature_dim=items[0].feature.shape[0], max_turns=max(turns, 5),
        seed=seed,
    )
    model = RetrievalModel(config, simulator.caption_vocab)
    pool = CandidatePool(
        corpus_mod.filter_items(items, category=category, split="train"),
        name=f"{category}/train")
    train_retriever(model, simulator, pool, epochs=epochs,
                    batch_size=batch_size, lr=lr, margin=margin, turns=turns,
                    seed=seed, allow_repeats=allow_repeats, log=_echo)
    save_retriever(out, model, simulator.predictor)
    _echo(f"saved retriever to {out}")


@retriever.command("eval")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--simulator", "simulator_path", required=True,
              type=click.Path(exists=True))
@click.option("--category", default="dresses", show_default=True)
@click.option("--split", default="test", show_default=True)
@click.option("--turns", default=5, show_default=True)
@click.option("--decode", type=click.Choice(["greedy", "beam5"]),
              default="beam5", show_default=True)
@click.option("--seed", default=0, show_default=True,
              help="Seed for the frozen initial-pair list.")
@click.option("--out", type=click.Path(), default=None)
def retriever_eval(corpus_dir, checkpoint, simulator_path, category, split,
                   turns, decode, seed, out) -> None:
    items, vocab, _ = corpus_mod.load_corpus(corpus_dir)
    model, _, _ = load_retriever(checkpoint, vocab)
    simulator = load_simulator(simulator_path, vocab)
    simulator.freeze()
    ranks = evaluate_retrieval(model, simulator, items, category, split=split,
                               turns=turns, seed=seed, decode_mode=decode)
    pool_size = len(corpus_mod.filter_items(items, category=category, split=split))
    report = build_eval_report(ranks, pool_size, metadata={
        "seed": seed, "category": category, "split": split, "decode": decode,
        "retriever_checkpoint": file_sha256(checkpoint),
        "simulator_checkpoint": file_sha256(simulator_path),
        "flags": {"turns": turns},
    })
    text = report.to_json()
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    _echo(text)


@retriever.command("dialog")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--simulator", "simulator_path", required=True,
              type=click.Path(exists=True))
@click.option("--target", "target_id", required=True)
@click.option("--reference", "reference_id", required=True)
@click.option("--turns", default=5, show_default=True)
@click.option("--decode", type=click.Choice(["greedy", "beam5"]),
              default="beam5", show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="Append the session as one JSONL line.")
def retriever_dialog(corpus_dir, checkpoint, simulator_path, target_id,
                     reference_id, turns, decode, out) -> None:
    items, vocab, _ = corpus_mod.load_corpus(corpus_dir)
    by_id = corpus_mod.index_by_id(items)
    model, _, _ = load_retriever(checkpoint, vocab)
    simulator = load_simulator(simulator_path, vocab)
    simulator.freeze()
    target = by_id[target_id]
    pool = CandidatePool(
        corpus_mod.filter_items(items, category=target.category,
                                split=target.split),
        name=f"{target.category}/{target.split}")
    session = run_dialog(model, simulator, target, by_id[reference_id], pool,
                         turns=turns, decode_mode=decode)
    line = json.dumps(session.to_json())
    if out:
        with open(out, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    _echo(line)


@main.group()
def singleturn() -> None:
    """Single-turn composition study (variants A-F)."""


@singleturn.command("train")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--variant", type=click.Choice(list("ABCDEF")), required=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--category", default="dresses", show_default=True)
@click.option("--epochs", default=5, show_default=True)
@click.option("--hidden", default=256, show_default=True)
@click.option("--margin", default=None, type=float,
              help="Fixed margin; omit to grid-search {0.1, 0.2, 0.5}.")
def singleturn_train(corpus_dir, variant, out, seed, category, epochs, hidden,
                     margin) -> None:
    from .pipeline import save_single_turn
    from .singleturn import (CompositionModel, SingleTurnConfig, build_queries,
                             margin_grid_search, train_single_turn)

    items, vocab, pairs = corpus_mod.load_corpus(corpus_dir)
    if pairs is None:
        raise click.ClickException("corpus has no pairs.jsonl")
    predictor = fit_predictor(
        corpus_mod.filter_items(items, category=category), vocab, seed=seed,
        view_seed=corpus_mod.load_corpus_seed(corpus_dir))
    caption_vocab = CaptionVocabulary(vocab)
    by_id = corpus_mod.index_by_id(items)

    def pool_and_queries(split):
        pool = CandidatePool(
            corpus_mod.filter_items(items, category=category, split=split),
            name=f"{category}/{split}")
        ids = {i.id for i in pool.items}
        qs = build_queries([p for p in pairs if p.target_id in ids],
                           caption_vocab)
        return pool, qs

    pool_train, q_train = pool_and_queries("train")
    pool_val, q_val = pool_and_queries("val")
    config = SingleTurnConfig(variant=variant, hidden_dim=hidden,
                              feature_dim=items[0].feature.shape[0], seed=seed)
    if margin is None:
        model, manifest = margin_grid_search(
            lambda: CompositionModel(config, caption_vocab),
            q_train, q_val, pool_train, pool_val, predictor,
            epochs=epochs, seed=seed, log=_echo)
    else:
        model = CompositionModel(config, caption_vocab)
        train_single_turn(model, q_train, pool_train, predictor, margin=margin,
                          epochs=epochs, seed=seed, log=_echo)
        manifest = {"margins": [], "selected_margin": margin}
    save_single_turn(out, model, predictor, manifest)
    _echo(f"saved single-turn model {variant} to {out} "
          f"(margin {manifest['selected_margin']})")


@singleturn.command("eval")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--category", default="dresses", show_default=True)
@click.option("--split", default="test", show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="Append one CSV row (variant, R@10, R@50).")
def singleturn_eval(corpus_dir, checkpoint, category, split, out) -> None:
    from .pipeline import load_single_turn
    from .singleturn import build_queries, evaluate_single_turn

    items, vocab, pairs = corpus_mod.load_corpus(corpus_dir)
    model, predictor, manifest = load_single_turn(checkpoint, vocab)
    caption_vocab = CaptionVocabulary(vocab)
    pool = CandidatePool(
        corpus_mod.filter_items(items, category=category, split=split),
        name=f"{category}/{split}")
    ids = {i.id for i in pool.items}
    queries = build_queries([p for p in (pairs or []) if p.target_id in ids],
                            caption_vocab)
    ranks = evaluate_single_turn(model, queries, pool, predictor)
    r10, r50 = recall_at(ranks, 10), recall_at(ranks, 50)
    row = f"{model.config.variant},{r10:.6f},{r50:.6f}"
    if out:
        path = Path(out)
        if not path.exists():
            path.write_text("variant,R@10,R@50\n", encoding="utf-8")
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(row + "\n")
    _echo(f"variant={model.config.variant} R@10={r10:.4f} R@50={r50:.4f}")


@main.command("eval")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--retriever", "retriever_path", required=True,
              type=click.Path(exists=True))
@click.option("--simulator", "simulator_path", required=True,
              type=click.Path(exists=True))
@click.option("--category", default="dresses", show_default=True)
@click.option("--split", default="test", show_default=True)
@click.option("--turns", default=5, show_default=True)
@click.option("--decode", type=click.Choice(["greedy", "beam5"]),
              default="beam5", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--captioning/--no-captioning", default=True, show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="Basename for report (.json and .csv written).")
def eval_command(corpus_dir, retriever_path, simulator_path, category, split,
                 turns, decode, seed, captioning, out) -> None:
    """Full evaluation: per-turn retrieval table plus captioning metrics."""
    items, vocab, pairs = corpus_mod.load_corpus(corpus_dir)
    model, _, _ = load_retriever(retriever_path, vocab)
    simulator = load_simulator(simulator_path, vocab)
    simulator.freeze()
    ranks = evaluate_retrieval(model, simulator, items, category, split=split,
                               turns=turns, seed=seed, decode_mode=decode)
    pool_size = len(corpus_mod.filter_items(items, category=category, split=split))
    cap_scores = None
    if captioning and pairs:
        cap_scores = evaluate_captioning(simulator, items, pairs, category,
                                         split=split, decode_mode=decode)
    report = build_eval_report(ranks, pool_size, captioning=cap_scores,
                               metadata={
        "seed": seed, "category": category, "split": split, "decode": decode,
        "retriever_checkpoint": file_sha256(retriever_path),
        "simulator_checkpoint": file_sha256(simulator_path),
        "flags": {"turns": turns, "captioning": bool(cap_scores)},
    })
    if out:
        Path(out + ".json").write_text(report.to_json() + "\n", encoding="utf-8")
        Path(out + ".csv").write_text(report.to_csv(), encoding="utf-8")
    _echo(report.to_json())


@main.command("serve")
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--data-dir", default=None, type=click.Path(),
              help="Session journal root (default $DIARC_DATA_DIR).")
@click.option("--allow-repeats/--no-repeats", default=False, show_default=True)
@click.option("--ui", "ui_dir", default=None, type=click.Path(exists=True),
              help="Serve a built web UI from this directory at /.")
def serve(port, host, corpus_dir, checkpoint, data_dir, allow_repeats,
          ui_dir) -> None:
    """Run the interactive session service."""
    import uvicorn

    from .service import create_app

    app = create_app(corpus_dir, checkpoint, data_dir=data_dir,
                     allow_repeats=allow_repeats)
    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    uvicorn.run(app, host=host, port=port)


@main.group()
def session() -> None:
    """Thin HTTP client for a running service."""


def _client(server: str):
    import httpx

    return httpx.Client(base_url=server.rstrip("/"), timeout=30.0)


@session.command("start")
@click.option("--server", default="http://127.0.0.1:8000", show_default=True)
@click.option("--category", required=True)
@click.option("--pool-split", default="test", show_default=True)
@click.option("--seed", default=None, type=int)
def session_start(server, category, pool_split, seed) -> None:
    with _client(server) as client:
        resp = client.post("/v1/sessions", json={
            "category": category, "pool_split": pool_split, "seed": seed})
        _echo(json.dumps(resp.json(), indent=2))
        if resp.status_code >= 400:
            sys.exit(1)


@session.command("feedback")
@click.option("--server", default="http://127.0.0.1:8000", show_default=True)
@click.option("--id", "session_id", required=True)
@click.argument("text")
def session_feedback(server, session_id, text) -> None:
    with _client(server) as client:
        resp = client.post(f"/v1/sessions/{session_id}/feedback",
                           json={"text": text})
        _echo(json.dumps(resp.json(), indent=2))
        if resp.status_code >= 400:
            sys.exit(1)


@session.command("show")
@click.option("--server", default="http://127.0.0.1:8000", show_default=True)
@click.option("--id", "session_id", required=True)
def session_show(server, session_id) -> None:
    with _client(server) as client:
        resp = client.get(f"/v1/sessions/{session_id}")
        _echo(json.dumps(resp.json(), indent=2))
        if resp.status_code >= 400:
            sys.exit(1)


@session.command("select")
@click.option("--server", default="http://127.0.0.1:8000", show_default=True)
@click.option("--id", "session_id", required=True)
@click.option("--item", "item_id", required=True)
def session_select(server, session_id, item_id) -> None:
    with _client(server) as client:
        resp = client.post(f"/v1/sessions/{session_id}/select",
                           json={"item_id": item_id})
        _echo(json.dumps(resp.json(), indent=2))
        if resp.status_code >= 400:
            sys.exit(1)


if __name__ == "__main__":
    main()
