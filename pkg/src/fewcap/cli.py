"""Command line entry point: ``fewcap <command> [options]``.

Commands::

    synth-data    toy corpus, lexicon and feature files
    pseudo-label  fit the scorers on the visible sentences and write pseudo labels
    train         fit the captioning model, keep the best-epoch checkpoint
    eval          metric report for a checkpoint on a corpus split
    caption       caption a single feature file

Every failure ends with exit status 1 (2 for usage errors) and a single
``error: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import ModelCheckpoint
from .config import TrainConfig, load_config
from .data import ToyGrammar, ingest_features, read_feature_file, synth_data
from .errors import FewcapError
from .model import generate_caption
from .pipeline import (check_splits, load_scorers, read_pseudo_labels, run_pseudo_label,
                       save_scorers, write_pseudo_labels)
from .text import KeywordLexicon, decode, read_corpus
from .train import directory_lock, evaluate, load_features, model_from_checkpoint, train

log = logging.getLogger("fewcap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="random seed")
    parser.add_argument("--config", type=Path, default=default, help="key=value config file")
    parser.add_argument("--out", type=Path, default=default, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser():
    parser = _Parser(prog="fewcap", description="Few-supervised video captioning on toy data.")
    parser.add_argument("--version", action="version", version=f"fewcap {__version__}")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", parents=[common], help="generate a toy corpus")
    p.add_argument("--grammar", type=Path, help="grammar JSON (default: bundled)")
    p.add_argument("--videos", type=int, default=200)
    p.add_argument("--sentences", type=int, default=5, help="sentences per video")
    p.add_argument("--noise", type=float, help="feature noise scale (default: grammar)")

    p = sub.add_parser("pseudo-label", parents=[common], help="write pseudo labels")
    p.add_argument("--data", type=Path, required=True, help="synth-data output directory")
    p.add_argument("--scorers", type=Path, help="reuse scorers saved by an earlier run")

    p = sub.add_parser("train", parents=[common], help="train the captioning model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pseudo", type=Path, help="pseudo-label file (default: none)")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("caption", parents=[common], help="caption one feature file")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("features", type=Path, help="a .pkgf feature file")
    return parser


def _config(args):
    cfg = load_config(args.config, TrainConfig.desk()) if args.config else TrainConfig.desk()
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _out(args, default):
    out = args.out or Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _corpus(data_dir):
    data_dir = Path(data_dir)
    records = read_corpus(data_dir / "corpus.jsonl")
    lexicon = KeywordLexicon.load(data_dir / "lexicon.tsv")
    return records, lexicon


def cmd_synth_data(args):
    grammar = ToyGrammar.load(args.grammar) if args.grammar else ToyGrammar.default()
    out = _out(args, "data")
    seed = 0 if args.seed is None else args.seed
    records = synth_data(grammar, args.videos, seed, out, n_sentences=args.sentences,
                         noise=args.noise)
    print(f"wrote {len(records)} videos to {out}")


def cmd_pseudo_label(args):
    cfg = _config(args)
    out = _out(args, "pseudo")
    records, lexicon = _corpus(args.data)
    check_splits(records)
    feats, _ = load_features(args.data / "features", records, cfg.encoder)
    scorers = load_scorers(args.scorers, records, lexicon) if args.scorers else None
    items, errors, scorers = run_pseudo_label(records, lexicon, cfg, set(feats), scorers)
    write_pseudo_labels(items, out / "pseudo.jsonl")
    (out / "errors.jsonl").write_text(
        "".join(json.dumps({"video_id": v, "error": e}) + "\n" for v, e in sorted(errors.items())),
        encoding="utf-8")
    if scorers is not None:
        save_scorers(scorers, out / "scorers")
    print(f"wrote pseudo labels for {len(items)} videos to {out / 'pseudo.jsonl'} "
          f"({len(errors)} skipped)")


def cmd_train(args):
    cfg = _config(args)
    out = _out(args, "run")
    records, lexicon = _corpus(args.data)
    check_splits(records)
    pseudo = read_pseudo_labels(args.pseudo) if args.pseudo else {}
    with directory_lock(out):
        feats, errors = load_features(args.data / "features", records, cfg.encoder)
        for vid, err in sorted(errors.items()):
            log.warning("train: %s skipped (%s)", vid, err)
        log_path = out / "train_log.jsonl"
        log_path.write_text("", encoding="utf-8")

        def on_epoch(entry, _model):
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            print(f"epoch {entry['epoch']} loss {entry['loss']:.4f} "
                  f"sentence {entry['sentence_loss']:.4f} word {entry['word_loss']:.4f} "
                  f"val CIDEr-D {entry['val_cider']:.4f}", flush=True)

        result = train(records, pseudo, feats, lexicon, cfg,
                       checkpoint_path=out / "model.pkgc", on_epoch=on_epoch)
    print(f"best epoch {result.best_epoch} val CIDEr-D {result.best_cider:.4f}; "
          f"checkpoint {out / 'model.pkgc'}")


def cmd_eval(args):
    out = _out(args, "report")
    ckpt = ModelCheckpoint.load(args.checkpoint)
    records, _ = _corpus(args.data)
    enc = TrainConfig.from_dict(ckpt.config["train"]).encoder
    feats, _ = load_features(args.data / "features", records, enc)
    report = evaluate(ckpt, records, feats, split=args.split)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    for name, value in report.scores.items():
        print(f"{name}\t{value:.6f}")


def cmd_caption(args):
    model, vocab, cfg = model_from_checkpoint(ModelCheckpoint.load(args.checkpoint))
    enc = cfg.encoder
    raw = read_feature_file(args.features, (enc.d_a, enc.d_m, enc.d_o))
    video = ingest_features(raw, enc.N, enc.N_obj, args.features.stem)
    print(decode(generate_caption(model, video), vocab))


COMMANDS = {"synth-data": cmd_synth_data, "pseudo-label": cmd_pseudo_label,
            "train": cmd_train, "eval": cmd_eval, "caption": cmd_caption}


def _fail(kind, message, code):
    message = " ".join(str(message).split())
    print(f"error: {kind}: {message}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except FewcapError as exc:
        return _fail(exc.kind, exc, 1)
    except FileNotFoundError as exc:
        return _fail("io", f"{exc.strerror}: {exc.filename}", 1)
    except OSError as exc:
        return _fail("io", exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
