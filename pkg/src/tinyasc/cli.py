"""Batch command line: make-corpus, extract, train, quantize, size-report, evaluate, selftest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 size budget violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .data import DataError, RunConfig, make_corpus, parse_manifest, read_config
from .frontend import FilterbankKind, build_filterbank, extract, read_features, read_wav, write_features
from .fusion import evaluate, predict_many
from .models import KB
from .quant import FormatError, checkpoint, deployment_model, load_model, save_model, to_network
from .train import fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3
BUDGET_BYTES = 128_000

log = logging.getLogger("tinyasc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _run_config(args, flag_keys) -> RunConfig:
    items = read_config(args.config) if getattr(args, "config", None) else {}
    for key in flag_keys:
        value = getattr(args, key, None)
        if value is not None:
            items[key] = str(value)
    try:
        return RunConfig.from_items(items)
    except (ValueError, DataError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None


def feature_path(feature_dir, audio_path: str) -> Path:
    return Path(feature_dir) / Path(audio_path).with_suffix(".lcft")


# --- commands -----------------------------------------------------------------------


def cmd_make_corpus(args) -> int:
    manifest = make_corpus(args.out, per_class=args.per_class, eval_per_class=args.eval_per_class, seed=args.seed)
    print(f"wrote {len(manifest.entries)} clips to {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _run_config(args, ("filterbank_kind",)).frontend
    root = Path(args.data_root)
    wavs = sorted(root.rglob("*.wav"))
    if not wavs:
        raise DataError(f"no .wav files under {root}")
    fb = build_filterbank(cfg)
    written = cached = 0
    for wav in wavs:
        out = Path(args.out) / wav.relative_to(root).with_suffix(".lcft")
        if out.exists() and not args.force:
            cached += 1
            continue
        try:
            spec = extract(read_wav(wav), cfg, fb)
        except ValueError as exc:
            raise DataError(f"{wav}: {exc}") from None
        write_features(out, spec, cfg.filterbank_kind)
        written += 1
    print(f"{cfg.filterbank_kind.short}: {written} extracted, {cached} cached -> {args.out}")
    return EXIT_OK


def _load_split(entries, feature_dir, kind: FilterbankKind) -> np.ndarray:
    feats = []
    for e in entries:
        path = feature_path(feature_dir, e.path)
        if not path.exists():
            raise DataError(f"missing feature file {path}")
        try:
            data, file_kind = read_features(path)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        if file_kind != kind:
            raise DataError(f"{path} holds {file_kind.short} features, expected {kind.short}")
        feats.append(data)
    return np.stack(feats)


def cmd_train(args) -> int:
    keys = ("epochs", "seed", "learning_rate", "batch_size", "train_csv", "meta_csv", "feature_dir")
    cfg = _run_config(args, keys)
    if not cfg.train_csv:
        raise UsageError("train needs --train-csv (or train_csv in --config)")
    manifest = parse_manifest(cfg.train_csv, None, cfg.meta_csv)
    entries = manifest.split("train")
    if not entries:
        raise DataError("training split is empty")
    kind = FilterbankKind.parse(args.feature)
    x = _load_split(entries, cfg.feature_dir, kind)
    y = [e.label for e in entries]
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        spec, params, _ = fit(
            x, y, args.model, args.decomposed, cfg.train, cfg.augment,
            on_epoch=lambda e: (fh.write(e.line() + "\n"), fh.flush(), print(e.line())),
        )
    size = save_model(out, checkpoint(spec, params))
    print(f"saved fp32 checkpoint {out} ({size} bytes), log {log_path}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    model = load_model(args.inp)
    spec, params = to_network(model)
    q = deployment_model(spec, params, quantize=not args.fp32)
    size = save_model(args.out, q)
    print(f"wrote {'fp32' if args.fp32 else 'int8'} model {args.out} ({size} bytes, {size / KB:.1f} KB)")
    return EXIT_OK


def cmd_size_report(args) -> int:
    rows = []
    for path in _split(args.models):
        model = load_model(path)
        rows.append((path, model, Path(path).stat().st_size))
    total = sum(r[2] for r in rows)
    print(f"{'model file':<40} {'id':>3} {'dec':>4} {'dtype':>6} {'bytes':>8} {'KB':>7}")
    for path, m, size in rows:
        dtype = "int8" if m.is_quantized else "fp32"
        print(f"{path:<40} {m.model_id:>3} {int(m.decomposed):>4} {dtype:>6} {size:>8} {size / KB:>7.1f}")
    status = "ok" if total < BUDGET_BYTES else "over"
    print(f"{'total':<40} {'':>3} {'':>4} {'':>6} {total:>8} {total / KB:>7.1f}  (1 KB = 1000 bytes; budget {BUDGET_BYTES})")
    print()
    for path, m, size in rows:
        print(f"model={path} id={m.model_id} decomposed={int(m.decomposed)} bytes={size} kb={size / KB:.3f}")
    print(f"total bytes={total} kb={total / KB:.3f} budget={BUDGET_BYTES} status={status}")
    return EXIT_OK if total < BUDGET_BYTES else EXIT_BUDGET


def cmd_evaluate(args) -> int:
    cfg = _run_config(args, ("eval_csv", "meta_csv"))
    if args.fusion != "prod":
        raise UsageError(f"unsupported fusion rule {args.fusion!r}")
    models, kinds = _split(args.models), [FilterbankKind.parse(k) for k in _split(args.features)]
    if len(models) != len(kinds) or not models:
        raise UsageError("--models and --features need the same number (>= 1) of entries")
    if not cfg.eval_csv:
        raise UsageError("evaluate needs --eval-csv (or eval_csv in --config)")
    entries = parse_manifest(None, cfg.eval_csv, cfg.meta_csv).split("eval")
    if not entries:
        raise DataError("evaluation split is empty; nothing to evaluate")
    dirs = _split(args.feature_dirs) if args.feature_dirs else None
    if dirs is not None and len(dirs) != len(models):
        raise UsageError("--feature-dirs needs one directory per model")
    if dirs is None and not args.data_root:
        raise UsageError("evaluate needs --feature-dirs or --data-root")

    outputs = []
    solo = []
    for i, (path, kind) in enumerate(zip(models, kinds)):
        spec, params = to_network(load_model(path))
        if dirs is not None:
            x = _load_split(entries, dirs[i], kind)
        else:
            fcfg = RunConfig.from_items({"filterbank_kind": kind.short}).frontend
            fb = build_filterbank(fcfg)
            x = np.stack([extract(read_wav(Path(args.data_root) / e.path), fcfg, fb) for e in entries])
        probs = predict_many(spec, params, x)
        outputs.append(probs)
        solo.append((path, kind, evaluate(entries, [probs], title=kind.short)))
    report = evaluate(entries, outputs, fusion="prod", title="PROD")
    text = report.to_text()
    records = report.to_records()
    records += "".join(
        f"solo model={p} feature={k.short} acc={r.overall.acc:.4f} n={r.overall.total}\n" for p, k, r in solo
    )
    print(text, end="")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n" + records, encoding="utf-8")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .checks import run_selftest

    ok = True
    for name, passed, detail in run_selftest(range(args.seeds)):
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if ok else EXIT_DATA


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tinyasc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-corpus", help="write a synthetic labeled corpus with DCASE-style CSVs")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=4)
    s.add_argument("--eval-per-class", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_corpus)

    s = sub.add_parser("extract", help="extract LCFT feature files mirroring the audio tree")
    s.add_argument("--features", dest="filterbank_kind", required=True, choices=["mel", "gam", "cqt"])
    s.add_argument("--data-root", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--force", action="store_true", help="re-extract files already present")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="train one model on cached features; writes an fp32 checkpoint")
    s.add_argument("--feature", required=True, choices=["mel", "gam", "cqt"])
    s.add_argument("--model", required=True, choices=["m1", "m2", "m3", "M1", "M2", "M3"])
    s.add_argument("--decomposed", action="store_true")
    s.add_argument("--config")
    s.add_argument("--feature-dir", dest="feature_dir")
    s.add_argument("--train-csv", dest="train_csv")
    s.add_argument("--meta-csv", dest="meta_csv")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--lr", dest="learning_rate", type=float)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("quantize", help="fold BN and quantize weights to int8")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fp32", action="store_true", help="fold only, keep fp32 weights")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("size-report", help="print the model size budget table")
    s.add_argument("--models", required=True, help="comma-separated model files")
    s.set_defaults(func=cmd_size_report)

    s = sub.add_parser("evaluate", help="PROD-fused evaluation report")
    s.add_argument("--models", required=True, help="comma-separated model files")
    s.add_argument("--features", required=True, help="comma-separated kinds, one per model")
    s.add_argument("--feature-dirs", help="comma-separated LCFT directories, one per model")
    s.add_argument("--data-root", help="extract features from audio when no --feature-dirs")
    s.add_argument("--eval-csv", dest="eval_csv")
    s.add_argument("--meta-csv", dest="meta_csv")
    s.add_argument("--config")
    s.add_argument("--fusion", default="prod")
    s.add_argument("--out", default="report.txt")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("selftest", help="run gradient and invariant checks")
    s.add_argument("--seeds", type=int, default=5)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tinyasc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"tinyasc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
