"""Command-line interface.

Exit codes: 0 on success, 1 on any expected runtime failure (reported as a
single ``error: ...`` line on stderr), 2 on usage errors (argparse).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import corpus as corpus_mod
from .decoding import Hypothesis, nbest, viterbi
from .errors import ConfigurationError, FsmnChainError
from .graphs import (
    PhoneLm,
    build_denominator_graph,
    read_graph_text,
)
from .lm import NGramScorer, train_tiny_rnnlm
from .network import (
    Network,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_checkpoint,
    param_count,
    preset_config,
    receptive_field,
    save_checkpoint,
)
from .rescoring import oracle_accuracy, sweep_lm_weight, top1_accuracy
from .training import (
    TrainConfig,
    alpha_ablation,
    evaluate,
    format_ablation_table,
    train,
)
from .verification import run_gradient_suite


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _parse_grid(text: str) -> list[float]:
    """Either comma-separated values or start:stop:step (stop inclusive)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise FsmnChainError(f"bad weight grid {text!r}, want start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise FsmnChainError("grid step must be positive")
        out = []
        w = start
        while w <= stop + 1e-9:
            out.append(round(w, 10))
            w += step
        return out
    return [float(p) for p in text.split(",") if p]


def _network_config_from_args(args, feature_dim: int, num_phones: int):
    if args.config is not None:
        return config_from_dict(_load_json(args.config))
    overrides = {"feature_dim": feature_dim}
    if args.preset == "desk":
        overrides["num_phones"] = num_phones
        if args.num_blocks is not None:
            overrides["num_blocks"] = args.num_blocks
        if args.variant is not None:
            overrides["variant"] = args.variant
    else:
        overrides["output_dim"] = 2 * num_phones
        if args.variant is not None:
            overrides["variant"] = args.variant
    return preset_config(args.preset, **overrides)


def _corpus_num_phones(utts) -> int:
    return 1 + max(p for u in utts for p in u.phones)


# ---------------------------------------------------------------------------
# Subcommands.


def _cmd_gradcheck(args) -> int:
    started = time.monotonic()
    items = run_gradient_suite(seeds=args.seeds, max_coords=args.max_coords)
    failed = False
    for item in items:
        status = "pass" if item.report.passed else "FAIL"
        print(
            f"{item.name:<20} max_rel_err={item.report.max_rel_err:.3e} "
            f"tol={item.tol:.0e} coords={item.report.checked_coords} {status}"
        )
        if not item.report.passed:
            failed = True
            if item.report.worst:
                print(f"  worst: {item.report.worst}")
    print(f"elapsed: {time.monotonic() - started:.1f}s")
    return 1 if failed else 0


def _cmd_gen(args) -> int:
    if args.spec is not None:
        spec = corpus_mod.GeneratorSpec.from_dict(_load_json(args.spec))
    else:
        spec = corpus_mod.desk_generator_spec()
    if args.seed is not None:
        spec = corpus_mod.GeneratorSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    if args.skip < 0:
        raise ConfigurationError("--skip must be >= 0")
    # One spec seed fixes one synthetic language; a held-out split must come
    # from the same stream, so skip past the training portion instead of
    # reseeding (a new seed would redraw the phone-to-feature mapping).
    utts = corpus_mod.generate_corpus(spec, args.skip + args.count)[args.skip :]
    corpus_mod.save_corpus(args.out, utts)
    frames = sum(u.num_frames for u in utts)
    print(
        f"wrote {len(utts)} utterances ({frames} frames, "
        f"{spec.num_phones} phones, dim {spec.feature_dim}) to {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    utts = corpus_mod.load_corpus(args.corpus)
    num_phones = _corpus_num_phones(utts)
    feature_dim = utts[0].features.shape[1]
    cfg = _network_config_from_args(args, feature_dim, num_phones)
    tcfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        max_grad_norm=args.max_grad_norm if args.max_grad_norm > 0 else None,
        alpha=args.alpha,
        acoustic_scale=args.acoustic_scale,
        l2=args.l2,
        lm_order=args.lm_order,
        seed=args.seed,
    )
    history_f = open(args.history, "w", encoding="utf-8") if args.history else None
    try:
        def log(record: dict) -> None:
            line = json.dumps(record, sort_keys=True)
            print(line)
            if history_f is not None:
                history_f.write(line + "\n")
                history_f.flush()

        result = train(cfg, utts, tcfg, log=log)
    finally:
        if history_f is not None:
            history_f.close()
    save_checkpoint(args.out, result.network)
    if result.skipped_utterances:
        print(f"skipped {result.skipped_utterances} infeasible utterances")
    print(f"saved checkpoint to {args.out} (config {config_hash(cfg)[:12]})")
    return 0


def _lm_from_corpus(path: str | None, fallback_utts, order: int) -> PhoneLm:
    utts = corpus_mod.load_corpus(path) if path else fallback_utts
    return PhoneLm.estimate(
        [u.phones for u in utts],
        vocab_size=_corpus_num_phones(utts),
        order=order,
    )


def _cmd_ablate(args) -> int:
    train_utts = corpus_mod.load_corpus(args.corpus)
    test_utts = corpus_mod.load_corpus(args.test_corpus)
    num_phones = _corpus_num_phones(train_utts)
    cfg = preset_config(
        args.preset,
        feature_dim=train_utts[0].features.shape[1],
        num_phones=num_phones,
    ) if args.preset == "desk" else preset_config(args.preset)
    base = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    alphas = [float(a) for a in args.alphas.split(",") if a]

    def log(row: dict) -> None:
        print(
            f"seed={row['seed']} alpha={row['alpha']}: "
            f"frame_error={row['frame_error']:.4f} phone_error={row['phone_error']:.4f}"
        )

    rows = alpha_ablation(cfg, train_utts, test_utts, seeds, alphas, base, log=log)
    table = format_ablation_table(rows)
    print(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(table + "\n")
    return 0


def _cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    utts = corpus_mod.load_corpus(args.corpus)
    lm = _lm_from_corpus(args.lm_corpus, utts, args.lm_order)
    metrics = evaluate(net, utts, lm, acoustic_scale=args.acoustic_scale)
    if args.out:
        _write_json(args.out, metrics.to_dict())
    print(
        f"frame_error={metrics.frame_error_rate:.4f} "
        f"phone_error={metrics.phone_error_rate:.4f} "
        f"({metrics.utterances} utts, {metrics.frames} frames)"
    )
    return 0


def _cmd_decode(args) -> int:
    net = load_checkpoint(args.checkpoint)
    utts = corpus_mod.load_corpus(args.corpus)
    lm = _lm_from_corpus(args.lm_corpus, utts, args.lm_order)
    dens: dict[int, object] = {}
    records = []
    for u in utts:
        t = u.num_frames
        if t not in dens:
            dens[t] = build_denominator_graph(lm, t)
        out = net.forward(u.features)
        if args.nbest <= 1:
            hyps = [viterbi(dens[t], out.chain, args.acoustic_scale)]
        else:
            hyps = nbest(
                dens[t], out.chain, args.acoustic_scale, n=args.nbest, beam=args.beam
            )
        records.append(
            {
                "utt_id": u.utt_id,
                "ref_phones": u.phones,
                "hyps": [h.to_dict() for h in hyps],
            }
        )
    payload = {
        "acoustic_scale": args.acoustic_scale,
        "nbest": args.nbest,
        "beam": args.beam,
        "utts": records,
    }
    _write_json(args.out, payload)
    refs = [u.phones for u in utts]
    lists = [
        [Hypothesis(phones=tuple(h["phones"]), am_score=h["am_score"]) for h in r["hyps"]]
        for r in records
    ]
    print(
        f"decoded {len(utts)} utterances; top1_acc={top1_accuracy(lists, refs):.4f} "
        f"oracle_acc={oracle_accuracy(lists, refs):.4f}"
    )
    return 0


def _cmd_rescore(args) -> int:
    data = _load_json(args.nbest)
    nbest_lists = []
    refs = []
    for r in data["utts"]:
        refs.append(list(r["ref_phones"]))
        nbest_lists.append(
            [
                Hypothesis(
                    phones=tuple(h["phones"]),
                    am_score=float(h["am_score"]),
                )
                for h in r["hyps"]
            ]
        )
    train_utts = corpus_mod.load_corpus(args.train_corpus)
    transcripts = [u.phones for u in train_utts]
    vocab = _corpus_num_phones(train_utts)
    if args.lm == "ngram":
        scorer = NGramScorer(
            PhoneLm.estimate(transcripts, vocab_size=vocab, order=args.lm_order)
        )
    else:
        scorer = train_tiny_rnnlm(
            transcripts,
            vocab_size=vocab,
            epochs=args.rnn_epochs,
            hidden_dim=args.rnn_hidden,
            seed=args.seed,
        )
        print(f"tiny rnnlm held-out perplexity: {scorer.held_out_perplexity:.3f}")
    weights = _parse_grid(args.lmwt_grid)
    sweep = sweep_lm_weight(nbest_lists, refs, scorer, weights)
    best = min(sweep, key=lambda r: (r["phone_error"], r["lmwt"]))
    payload = {
        "lm": args.lm,
        "weights": weights,
        "sweep": sweep,
        "best_lmwt": best["lmwt"],
        "best_phone_error": best["phone_error"],
    }
    _write_json(args.out, payload)
    for rec in sweep:
        print(
            f"lmwt={rec['lmwt']:.2f} phone_error={rec['phone_error']:.4f} "
            f"top1_acc={rec['top1_accuracy']:.4f}"
        )
    print(f"best lmwt={best['lmwt']:.2f} phone_error={best['phone_error']:.4f}")
    return 0


def _cmd_inspect(args) -> int:
    shown = False
    if args.checkpoint:
        net = load_checkpoint(args.checkpoint)
        cfg = net.cfg
        past, future = receptive_field(cfg)
        print(f"checkpoint: {args.checkpoint}")
        print(f"  config_hash: {config_hash(cfg)}")
        print(f"  feature_dim: {cfg.feature_dim}  output_dim: {cfg.output_dim}")
        print(f"  blocks: {len(cfg.blocks)}  hidden: {cfg.hidden_dim}  variant: {cfg.variant}")
        print(f"  parameters: {param_count(cfg)}")
        print(f"  receptive_field: past={past} future={future}")
        shown = True
    if args.corpus:
        utts = corpus_mod.load_corpus(args.corpus)
        lens = np.array([u.num_frames for u in utts])
        print(f"corpus: {args.corpus}")
        print(f"  utterances: {len(utts)}")
        print(f"  feature_dim: {utts[0].features.shape[1]}")
        print(f"  phones: {_corpus_num_phones(utts)}")
        print(
            f"  frames: total={int(lens.sum())} min={int(lens.min())} "
            f"mean={float(lens.mean()):.1f} max={int(lens.max())}"
        )
        aligned = sum(1 for u in utts if u.alignment is not None)
        print(f"  alignments: {aligned}/{len(utts)}")
        shown = True
    if args.graph:
        g = read_graph_text(args.graph)
        print(f"graph: {args.graph}")
        print(f"  states: {g.num_states}  arcs: {g.num_arcs}  start: {g.start}")
        print(f"  finals: {g.final_states.size}")
        pdfs = np.unique(g.arc_pdf)
        print(f"  pdf ids: {pdfs.min()}..{pdfs.max()} ({pdfs.size} distinct)")
        shown = True
    if not shown:
        raise FsmnChainError("nothing to inspect; pass --checkpoint, --corpus, or --graph")
    return 0


def _cmd_curves(args) -> int:
    if not args.history and not args.sweep:
        raise FsmnChainError("pass --history and/or --sweep")
    if args.history:
        rows = []
        with open(args.history, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        if not rows:
            raise FsmnChainError(f"no records in {args.history}")
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "joint_loss", "lfmmi", "ce", "frame_accuracy", "learning_rate"])
            for r in rows:
                writer.writerow(
                    [
                        r["epoch"],
                        r["joint_loss"],
                        r["lfmmi"],
                        r["ce"],
                        r["frame_accuracy"],
                        r["learning_rate"],
                    ]
                )
        print(f"wrote learning curves for {len(rows)} epochs to {args.out}")
    if args.sweep:
        data = _load_json(args.sweep)
        with open(args.sweep_out or args.out, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["lmwt", "phone_error", "top1_accuracy"])
            for r in data["sweep"]:
                writer.writerow([r["lmwt"], r["phone_error"], r["top1_accuracy"]])
        print(
            f"wrote {len(data['sweep'])} sweep points to {args.sweep_out or args.out}"
        )
    return 0


# ---------------------------------------------------------------------------
# Parser.


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fsmnchain",
        description="Desk-scale CNN + pyramidal-FSMN chain-training toolkit",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    g.add_argument("--seeds", type=int, default=20)
    g.add_argument("--max-coords", type=int, default=16)
    g.set_defaults(fn=_cmd_gradcheck)

    g = sub.add_parser("gen", help="synthesize a corpus")
    g.add_argument("--spec", help="GeneratorSpec JSON file (default: desk preset)")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, help="override the spec's seed")
    g.add_argument("--skip", type=int, default=0,
                   help="discard this many leading utterances so a held-out "
                        "split shares the training stream")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen)

    g = sub.add_parser("train", help="train a model on a corpus")
    g.add_argument("--corpus", required=True)
    g.add_argument("--out", required=True, help="checkpoint path")
    g.add_argument("--history", help="JSONL per-epoch history path")
    g.add_argument("--config", help="NetworkConfig JSON file")
    g.add_argument("--preset", default="desk", choices=["desk", "flagship"])
    g.add_argument("--num-blocks", type=int)
    g.add_argument("--variant", choices=["pyramidal", "dfsmn"])
    g.add_argument("--epochs", type=int, default=20)
    g.add_argument("--batch-size", type=int, default=16)
    g.add_argument("--learning-rate", type=float, default=0.05)
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--max-grad-norm", type=float, default=1.0,
                   help="clip batch gradients above this global norm (0: off)")
    g.add_argument("--alpha", type=float, default=0.1, help="CE branch weight")
    g.add_argument("--acoustic-scale", type=float, default=1.0)
    g.add_argument("--l2", type=float, default=None)
    g.add_argument("--lm-order", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_cmd_train)

    g = sub.add_parser("eval", help="frame and phone error of a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--corpus", required=True)
    g.add_argument("--lm-corpus", help="corpus for the decode LM (default: --corpus)")
    g.add_argument("--lm-order", type=int, default=2)
    g.add_argument("--acoustic-scale", type=float, default=1.0)
    g.add_argument("--out", help="metrics JSON path")
    g.set_defaults(fn=_cmd_eval)

    g = sub.add_parser("decode", help="write n-best lists as JSON")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--corpus", required=True)
    g.add_argument("--lm-corpus", help="corpus for the decode LM (default: --corpus)")
    g.add_argument("--lm-order", type=int, default=2)
    g.add_argument("--acoustic-scale", type=float, default=1.0)
    g.add_argument("--nbest", type=int, default=20)
    g.add_argument("--beam", type=int, default=200)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_decode)

    g = sub.add_parser("rescore", help="LM-rescore an n-best file over a weight grid")
    g.add_argument("--nbest", required=True, help="decode output JSON")
    g.add_argument("--train-corpus", required=True, help="transcripts for LM training")
    g.add_argument("--lm", choices=["ngram", "rnn"], default="ngram")
    g.add_argument("--lm-order", type=int, default=2)
    g.add_argument("--rnn-epochs", type=int, default=30)
    g.add_argument("--rnn-hidden", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lmwt-grid", default="0.0:2.0:0.2")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_rescore)

    g = sub.add_parser("ablate", help="CE-weight ablation: train per (seed, alpha), tabulate")
    g.add_argument("--corpus", required=True)
    g.add_argument("--test-corpus", required=True)
    g.add_argument("--seeds", default="1,2,3", help="comma-separated training seeds")
    g.add_argument("--alphas", default="0.1,0.0", help="comma-separated CE weights")
    g.add_argument("--preset", default="desk", choices=["desk", "flagship"])
    g.add_argument("--epochs", type=int, default=20)
    g.add_argument("--learning-rate", type=float, default=0.05)
    g.add_argument("--out", help="also write the table to this path")
    g.set_defaults(fn=_cmd_ablate)

    g = sub.add_parser("inspect", help="describe a checkpoint, corpus, or graph file")
    g.add_argument("--checkpoint")
    g.add_argument("--corpus")
    g.add_argument("--graph", help="text-format graph file")
    g.set_defaults(fn=_cmd_inspect)

    g = sub.add_parser("curves", help="emit learning-curve / sweep CSV data")
    g.add_argument("--history", help="JSONL history from train")
    g.add_argument("--sweep", help="rescore output JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--sweep-out", help="separate CSV for --sweep when both given")
    g.set_defaults(fn=_cmd_curves)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FsmnChainError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
