"""Command-line driver: ``textmdd {synth,train,eval,score,oracle,compare}``.

Exit codes: 0 success, 1 usage or configuration error, 2 oracle failure,
3 numeric failure during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import nullcontext
from pathlib import Path

from . import __version__
from .corpus import (
    CorpusConfig,
    CorpusConfigError,
    CorpusFormatError,
    generate,
    read_splits,
    write_splits,
)
from .ctc import PhoneInventory
from .metrics import MddCounts, percent, score_triples
from .train import (
    InfeasibleTargetError,
    NumericError,
    TrainConfig,
    evaluate,
    run_report,
    scoring_report,
    train,
    with_overrides,
)

log = logging.getLogger("textmdd")

EXIT_OK, EXIT_CONFIG, EXIT_ORACLE, EXIT_NUMERIC = 0, 1, 2, 3

TABLE_COLUMNS = (
    ("TA%", lambda e: percent(e["rates"]["ta_rate"])),
    ("FR%", lambda e: percent(e["rates"]["fr_rate"])),
    ("FA%", lambda e: percent(e["rates"]["fa_rate"])),
    ("CD%", lambda e: percent(e["rates"]["correct_diagnosis_rate"])),
    ("DE%", lambda e: percent(e["rates"]["diagnosis_error_rate"])),
    ("P%", lambda e: percent(e["rates"]["precision"])),
    ("R%", lambda e: percent(e["rates"]["recall"])),
    ("F1%", lambda e: percent(e["rates"]["f1"])),
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _load_json(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _threads(deterministic):
    if not deterministic:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(1)


def format_table(rows: list) -> str:
    """Aligned console table; each row is ``(label, evaluation dict)``."""
    header = ["config", "PER%"] + [name for name, _ in TABLE_COLUMNS]
    body = [
        [label, percent(ev["per"])] + [fmt(ev) for _, fmt in TABLE_COLUMNS] for label, ev in rows
    ]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _corpus_meta(corpus_dir):
    meta_path = Path(corpus_dir) / "corpus.json"
    return json.loads(meta_path.read_text()) if meta_path.exists() else {}


def _read_corpus_dir(corpus_dir):
    splits = read_splits(corpus_dir)
    meta = _corpus_meta(corpus_dir)
    n_phones = meta.get("config", {}).get("n_phones")
    return splits, meta, n_phones


def _train_config(args) -> TrainConfig:
    data = _load_json(getattr(args, "config", None))
    try:
        cfg = TrainConfig.from_dict(data)
        cfg = with_overrides(
            cfg,
            seed=args.seed,
            variant=getattr(args, "variant", None),
            margin=args.contrast_margin,
            epochs=args.epochs,
            max_steps=args.max_steps,
            lr=args.lr,
            batch_size=args.batch_size,
            freeze_encoder_steps=args.freeze_encoder_steps,
            d=args.dim,
        )
        if getattr(args, "contrast", None) is not None:
            cfg = with_overrides(cfg, contrast=args.contrast)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return cfg


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    data = _load_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.utterances is not None:
        data["n_utterances"] = args.utterances
    try:
        cfg = CorpusConfig.from_dict(data)
    except CorpusConfigError as exc:
        raise UsageError(f"invalid corpus config field {exc.field!r}: {exc}") from None
    except TypeError as exc:
        raise UsageError(f"invalid corpus config: {exc}") from None
    splits = generate(cfg)
    counts = write_splits(splits, args.out)
    inventory = PhoneInventory.numbered(cfg.n_phones)
    _dump({"version": __version__, "config": cfg.to_dict(), "phones": list(inventory.phones), "counts": counts},
          Path(args.out) / "corpus.json")
    for name, n in counts.items():
        print(f"{name}: {n} utterances")
    return EXIT_OK


def _train_one(cfg, splits, n_phones, corpus_meta, out_dir, plots=True):
    model, history = train(splits["train"], splits["dev"], cfg, n_phones=n_phones)
    evaluation = evaluate(model, splits["test"])
    report = run_report(cfg, history, evaluation, corpus_meta)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        from .model import save_checkpoint

        save_checkpoint(model, out_dir / "checkpoint.npz")
        _dump(report, out_dir / "report.json")
        if plots:
            from .plotting import plot_training_curves

            plot_training_curves(history, out_dir / "training.png", cfg.label)
    return model, report


def cmd_train(args) -> int:
    cfg = _train_config(args)
    splits, meta, n_phones = _read_corpus_dir(args.corpus)
    with _threads(args.deterministic):
        _, report = _train_one(cfg, splits, n_phones, meta.get("config", {}), args.out, not args.no_plots)
    print(format_table([(cfg.label, report["evaluation"])]))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .model import forward, load_checkpoint

    model = load_checkpoint(args.checkpoint)
    splits, meta, _ = _read_corpus_dir(args.corpus)
    utts = splits[args.split]
    try:
        with _threads(args.deterministic):
            evaluation = evaluate(model, utts, args.hypothesis)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = {"version": __version__, "split": args.split, "hypothesis": args.hypothesis, "evaluation": evaluation}
    label = f"{model.variant.kind}/{model.variant.activation}"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(report, out / f"eval_{args.split}.json")
        if not args.no_plots and utts:
            from .plotting import plot_attention

            utt = utts[0]
            result = forward(model, utt.frames, utt.canonical)
            if result.alpha is not None:
                inv = PhoneInventory.numbered(model.dims.n_phones)
                plot_attention(result.alpha, inv.decode(utt.canonical), out / "attention.png", f"{label} {utt.id}")
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    print(format_table([(label, evaluation)]))
    return EXIT_OK


def _read_triples(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append((list(rec["canonical"]), list(rec["annotation"]), list(rec["hypothesis"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusFormatError(path, line_no, f"bad triple record ({exc})") from None
    return records


def _counts_rows(args):
    if args.counts is not None:
        return [("counts", MddCounts(*args.counts))]
    try:
        data = json.loads(Path(args.counts_file).read_text(encoding="utf-8"))
        rows = data["rows"] if isinstance(data, dict) else data
        return [
            (str(r.get("label", f"row{i}")), MddCounts(r["ta"], r["fr"], r["fa"], r["tr_correct_diag"], r["tr_diag_error"]))
            for i, r in enumerate(rows)
        ]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read counts file {args.counts_file}: {exc}") from None


def cmd_score(args) -> int:
    if args.triples:
        records = _read_triples(args.triples)
        counts, edits, ref_len = score_triples(records)
        rows = [("triples", scoring_report(counts, edits, ref_len, len(records)))]
    else:
        rows = [(label, scoring_report(c, 0, 0, 0)) for label, c in _counts_rows(args)]
    report = {"version": __version__, "rows": [{"label": label, "evaluation": ev} for label, ev in rows]}
    if args.out:
        _dump(report, args.out)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    print(format_table(rows))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracles import run_all

    start = time.perf_counter()
    results = run_all(args.mutate)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name.ljust(width)}  max err {r.max_error:.3e}  (tol {r.tolerance:.0e}, {r.cases} cases)")
    elapsed = time.perf_counter() - start
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} oracle suites passed in {elapsed:.1f}s")
    return EXIT_ORACLE if failed else EXIT_OK


def compare_rows(base: TrainConfig, labels: list, splits, n_phones, corpus_meta, out_dir=None, plots=True):
    rows = []
    for label in labels:
        cfg = with_overrides(base, variant=label, contrast=label.endswith("Contrast"))
        sub = None if out_dir is None else Path(out_dir) / cfg.label
        _, report = _train_one(cfg, splits, n_phones, corpus_meta, sub, plots)
        rows.append(report)
    return rows


def fa_expectations(rows: list) -> list:
    """For each contrast row with a non-contrast twin, record whether its FA rate is no higher."""
    by_label = {r["label"]: r for r in rows}
    out = []
    for r in rows:
        if not r["label"].endswith("Contrast"):
            continue
        twin = by_label.get(r["label"][: -len("Contrast")])
        if twin is None:
            continue
        fa, fa_twin = r["evaluation"]["rates"]["fa_rate"], twin["evaluation"]["rates"]["fa_rate"]
        out.append({"contrast": r["label"], "twin": twin["label"], "fa_rate": fa, "twin_fa_rate": fa_twin,
                    "holds": fa <= fa_twin})
    return out


def cmd_compare(args) -> int:
    if len(args.variants) < 2:
        raise UsageError("compare needs at least two configurations")
    base = _train_config(args)
    splits, meta, n_phones = _read_corpus_dir(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _threads(args.deterministic):
        try:
            rows = compare_rows(base, args.variants, splits, n_phones, meta.get("config", {}), out, not args.no_plots)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    table = format_table([(r["label"], r["evaluation"]) for r in rows])
    report = {
        "version": __version__,
        "rows": [
            {"label": r["label"], "final_dev_per": r["history"][-1]["dev_per"], "evaluation": r["evaluation"],
             "config": r["config"]}
            for r in rows
        ],
        "expectations": {"contrast_fa_not_higher": fa_expectations(rows)},
    }
    _dump(report, out / "compare.json")
    (out / "compare.txt").write_text(table + "\n", encoding="utf-8")
    if not args.no_plots:
        from .plotting import plot_per_f1

        plot_per_f1(rows, out / "per_f1.png")
    print(table)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def _add_train_flags(p, variant=True):
    p.add_argument("--corpus", required=True, help="directory written by 'synth'")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    if variant:
        p.add_argument("--variant", help="e.g. Baseline, BaselineAdd, DoubleGate, TextGate, TextGateSigma, "
                                         "TextGatePhi, AudioGate; a 'Contrast' suffix enables the contrastive loss")
        p.add_argument("--contrast", dest="contrast", action="store_true", default=None)
        p.add_argument("--no-contrast", dest="contrast", action="store_false")
    p.add_argument("--contrast-margin", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--freeze-encoder-steps", type=int)
    p.add_argument("--dim", type=int, help="model width d")
    p.add_argument("--deterministic", action="store_true", help="pin BLAS to one thread")
    p.add_argument("--no-plots", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="textmdd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="JSON corpus config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--utterances", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one configuration and evaluate it on the test split")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode and score a split with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--hypothesis", choices=("model", "annotation", "canonical"), default="model",
                   help="score model output, or inject a perfect / accept-all recognizer")
    p.add_argument("--out")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score triples or raw counts without a model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--triples", help="JSON lines with canonical/annotation/hypothesis")
    src.add_argument("--counts", type=int, nargs=5, metavar=("TA", "FR", "FA", "CD", "DE"))
    src.add_argument("--counts-file", help="JSON list of {label, ta, fr, fa, tr_correct_diag, tr_diag_error}")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("oracle", help="run the brute-force and finite-difference self-checks")
    p.add_argument("--mutate", choices=("ctc-skip",), help="inject a known fault (the run must fail)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="train several configurations on one corpus and tabulate")
    _add_train_flags(p, variant=False)
    p.add_argument("--variants", nargs="+", default=["Baseline", "TextGate", "TextGateContrast"])
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"textmdd {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusFormatError, FileNotFoundError, InfeasibleTargetError) as exc:
        print(f"textmdd {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"textmdd {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
