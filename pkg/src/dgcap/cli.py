"""Command-line entry point: ``dgcap <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ModelConfig, tiny_config
from .data import (
    SyntheticVocabSpec,
    Vocabulary,
    build_vocabulary,
    generate_synthetic_dataset,
    load_feature_dir,
    read_corpus,
    read_results,
    save_feature_bundle,
    write_corpus,
)
from .errors import ContractError, DataError, NumericError
from .metrics import EvalCorpus, evaluate_corpus
from .gradcheck import e2e_grad_check
from .search import beam_search, greedy_decode

log = logging.getLogger("dgcap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with ModelConfig keys")
    p.add_argument("--seed", type=int, help="overrides config.seed")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="where outputs are written")
    p.add_argument("--forg-raw-sum", action="store_true",
                   help="sum object messages without dividing by the object count")


def _load_config(args, default: ModelConfig | None = None) -> ModelConfig:
    cfg = ModelConfig.load(args.config) if args.config else (default or ModelConfig())
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.forg_raw_sum:
        cfg = cfg.replace(forg_raw_sum=True)
    return cfg


# -- commands -------------------------------------------------------------
def cmd_gen_synthetic(args) -> int:
    base = _load_config(args, tiny_config(feature_dim=16, encoder_hidden=16, hidden_size=16, embed_dim=16))
    spec = SyntheticVocabSpec(words_per_slot=args.words_per_slot)
    dims = (base.appearance_dim, base.motion_dim, base.object_dim)
    bundles, caps = generate_synthetic_dataset(base.seed, args.n_videos, base.frames, base.objects_per_frame, dims, spec)
    out = args.out_dir
    (out / "features").mkdir(parents=True, exist_ok=True)
    for b in bundles:
        save_feature_bundle(b, out / "features" / f"{b.video_id}.dgvc")
    write_corpus(out / "captions.tsv", sorted(caps.items()))
    vocab = build_vocabulary(caps.values(), min_count=1)
    vocab.save(out / "vocab.tsv")
    base.replace(vocab_size=len(vocab), min_count=1).save(out / "config.json")
    print(f"wrote {len(bundles)} bundles, {len(caps)} captions, vocabulary of {len(vocab)} to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .plotting import plot_loss_curve
    from .train import load_checkpoint, train

    cfg = _load_config(args)
    captions = read_corpus(args.captions)
    if args.vocab:
        vocab = Vocabulary.load(args.vocab)
    else:
        vocab = build_vocabulary([c for cs in captions.values() for c in cs], cfg.min_count)
        if len(vocab) != cfg.vocab_size:
            log.info("vocab_size set to %d from the corpus", len(vocab))
            cfg = cfg.replace(vocab_size=len(vocab))
    bundles = list(load_feature_dir(args.features).values())
    resume = load_checkpoint(args.resume) if args.resume else None
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.tsv")
    cfg.save(out / "config.json")
    result = train(cfg, bundles, captions, vocab, out, epochs=args.epochs, resume=resume,
                   stop_below=args.stop_below)
    plot_loss_curve(result.losses, out / "loss.png")
    print(f"final epoch loss {result.epoch_losses[-1]:.6f}; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_caption(args) -> int:
    from .train import load_checkpoint, model_from_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    cfg = ModelConfig.load(args.config) if args.config else None
    model = model_from_checkpoint(ckpt, cfg)
    vocab = Vocabulary(ckpt.vocab) if ckpt.vocab else Vocabulary.load(args.vocab)
    beam = args.beam or model.config.beam_size
    bundles = load_feature_dir(args.features)
    rows = []
    for vid, b in bundles.items():
        max_len = args.max_len or model.config.max_len
        ids = beam_search(model, b, beam, max_len) if beam > 1 else greedy_decode(model, b, max_len)
        rows.append((vid, " ".join(vocab.decode(ids))))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = args.out_dir / "results.tsv"
    write_corpus(path, rows)
    print(f"wrote {len(rows)} captions to {path}")
    return EXIT_OK


def format_report(metrics: dict[str, float]) -> str:
    lines = ["metric   score", "-------  --------"]
    lines += [f"{k:<7}  {v:.6f}" for k, v in metrics.items()]
    lines += [f"{k}={v!r}" for k, v in metrics.items()]
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    from .plotting import plot_metrics

    hyps = read_results(args.results)
    refs = read_corpus(args.references)
    for vid in refs:
        if vid not in hyps:
            raise DataError(f"results file has no caption for video {vid!r}")
    for vid in hyps:
        if vid not in refs:
            raise DataError(f"no reference captions for video {vid!r}")
    metrics = evaluate_corpus(EvalCorpus.from_text(hyps, refs))
    report = format_report(metrics)
    print(report)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "metrics.txt").write_text(report + "\n", encoding="utf-8")
    plot_metrics(metrics, args.out_dir / "metrics.png")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = _load_config(args, tiny_config())
    err = e2e_grad_check(cfg, args.coords, cfg.seed)
    print(f"max_rel_error={err:.3e}")
    if err >= args.tol:
        print(f"gradient check failed: {err:.3e} >= {args.tol:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dgcap", description="Dual-graph gated-fusion video captioning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-synthetic", help="write a seeded synthetic dataset")
    _common(s)
    s.add_argument("--n-videos", type=int, default=8)
    s.add_argument("--words-per-slot", type=int, default=3)
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("train", help="train on feature bundles and a caption corpus")
    _common(s)
    s.add_argument("--features", type=Path, required=True, help="directory of .dgvc bundles")
    s.add_argument("--captions", type=Path, required=True, help="video_id<TAB>caption corpus")
    s.add_argument("--vocab", type=Path, help="vocabulary file; built from the corpus if omitted")
    s.add_argument("--epochs", type=int)
    s.add_argument("--resume", type=Path, help="checkpoint to continue from")
    s.add_argument("--stop-below", type=float, help="stop once an epoch's mean loss is below this")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("caption", help="beam-search captions for feature bundles")
    _common(s)
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--features", type=Path, required=True)
    s.add_argument("--vocab", type=Path)
    s.add_argument("--beam", type=int)
    s.add_argument("--max-len", type=int)
    s.set_defaults(func=cmd_caption)

    s = sub.add_parser("evaluate", help="BLEU-4 / ROUGE-L / CIDEr of a results file")
    _common(s)
    s.add_argument("--results", type=Path, required=True)
    s.add_argument("--references", type=Path, required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("grad-check", help="finite-difference check of the full model")
    _common(s)
    s.add_argument("--coords", type=int, default=20)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ContractError, UsageError) as exc:
        print(f"dgcap: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"dgcap: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        print(f"dgcap: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
