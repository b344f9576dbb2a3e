"""Pipeline driver.

Subcommands: synth, encode, split, train, eval, repro.  Each stage reads
files written by earlier stages and writes new files only (inputs are
never mutated), so a stage is idempotent given identical inputs and seed.

One global --seed reproduces everything.  Stage seeds derive from it by
fixed offsets: synth uses seed, the pretrain/test split seed+1, the
bootstrap seed+2, the train/validation split seed+3, model init
seed+10+arch_index and epoch shuffling seed+20+arch_index, where
arch_index is 0/1/2 for nn2/nn4/nn8.

Flags may also come from a key=value config file (--config); explicit
flags win on conflict.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import encode, evaluation, mlp, resample, schema, synth
from . import train as training

ARCH_INDEX = {"nn2": 0, "nn4": 1, "nn8": 2}
# the published runs pair nn8 with plain SGD and the shallower nets with momentum
ARCH_OPTIMIZER = {"nn2": "sgd_momentum", "nn4": "sgd_momentum", "nn8": "sgd"}


class ConfigError(Exception):
    pass


class StageInputMissing(Exception):
    pass


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise StageInputMissing(f"{what} not found: {path}")
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _log_stage(out_dir: Path, stage: str, started: float, inputs: list[Path]):
    with open(out_dir / "run.log", "a", encoding="utf-8") as f:
        hashes = " ".join(f"{p.name}={_sha256(p)}" for p in inputs if p.exists())
        f.write(f"stage={stage} duration={time.time() - started:.2f}s {hashes}\n")


# ---------------------------------------------------------------------------
# stages


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    cfg = synth.default_config(n_patients=args.patients, seed=args.seed)
    spec = schema.default_spec()
    records = synth.generate(cfg, spec)
    spec.save(out / "spec.txt")
    schema.write_visits(records, out / "cohort.csv")
    summary = schema.validate_cohort(records)
    print(
        f"synth: {summary.patients} patients, {summary.visits} visits, "
        f"prevalence {summary.prevalence:.4f}" if summary.prevalence is not None else "synth: empty cohort"
    )
    _log_stage(out, "synth", t0, [out / "cohort.csv", out / "spec.txt"])
    return 0


def cmd_encode(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    spec = schema.CategoricalSpec.load(_require(Path(args.spec), "categorical spec"))
    records = schema.parse_visits(_require(Path(args.cohort), "cohort file"), spec)
    ds = encode.encode_cohort(records, spec)
    encode.save_dataset(ds, out / "features.hdr", out / "features.f64", out / "meta.tsv")
    print(f"encode: {ds.n_rows} rows x {ds.raw_width} columns")
    _log_stage(out, "encode", t0, [out / "features.hdr", out / "features.f64"])
    return 0


def cmd_split(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    ds = encode.load_dataset(
        _require(out / "features.hdr", "encoded header"),
        _require(out / "features.f64", "encoded matrix"),
        _require(out / "meta.tsv", "row metadata"),
    )
    sp = resample.split(ds.n_rows, args.fraction, args.seed + 1)
    resample.save_indices(sp.first, sp.seed, out / "pretrain.idx")
    resample.save_indices(sp.second, sp.seed, out / "test.idx")
    # normalization stats are learned from the pretraining rows only
    stats = encode.fit_stats(ds.features[sp.first], ds.column_names)
    encode.save_stats(stats, out / "stats.tsv")
    plan = resample.balance_bootstrap(ds.labels[sp.first], args.seed + 2)
    resample.save_indices(plan.indices, plan.seed, out / "bootstrap.idx")
    tv = resample.train_val_split(plan.n_rows, args.fraction, args.seed + 3)
    resample.save_indices(tv.first, tv.seed, out / "train.idx")
    resample.save_indices(tv.second, tv.seed, out / "val.idx")
    print(
        f"split: pretrain {len(sp.first)} / test {len(sp.second)}, bootstrap {plan.n_rows}, "
        f"train {len(tv.first)} / val {len(tv.second)}, retained columns {stats.p}"
    )
    _log_stage(out, "split", t0, [out / "pretrain.idx", out / "stats.tsv"])
    return 0


def _load_train_inputs(out: Path):
    ds = encode.load_dataset(
        _require(out / "features.hdr", "encoded header"),
        _require(out / "features.f64", "encoded matrix"),
        _require(out / "meta.tsv", "row metadata"),
    )
    stats = encode.load_stats(_require(out / "stats.tsv", "stats file"))
    pre, _ = resample.load_indices(_require(out / "pretrain.idx", "pretrain indices"))
    plan, _ = resample.load_indices(_require(out / "bootstrap.idx", "bootstrap plan"))
    tr, _ = resample.load_indices(_require(out / "train.idx", "train indices"))
    val, _ = resample.load_indices(_require(out / "val.idx", "validation indices"))
    return ds, stats, pre, plan, tr, val


def cmd_train(args) -> int:
    out = Path(args.out_dir)
    t0 = time.time()
    arch = args.arch.lower()
    if arch not in ARCH_INDEX:
        raise ConfigError(f"unknown --arch {args.arch!r}")
    ds, stats, pre, plan, tr, val = _load_train_inputs(out)
    X_pre = encode.apply_stats(ds.features[pre], stats)
    y_pre = ds.labels[pre]
    X_boot, y_boot = X_pre[plan], y_pre[plan]
    cfg = training.TrainConfig(
        optimizer=ARCH_OPTIMIZER[arch],
        eta0=args.eta0,
        total_steps=args.steps,
        batch_size=args.batch_size,
        patience=args.patience,
        seed=args.seed + 20 + ARCH_INDEX[arch],
    )
    model = mlp.init(mlp.Architecture.named(arch), stats.p, seed=args.seed + 10 + ARCH_INDEX[arch])
    model, log, reason = training.train(
        model, (X_boot[tr], y_boot[tr]), (X_boot[val], y_boot[val]), cfg
    )
    mlp.save_model(model, out / f"model_{arch}.mlp")
    log.save(out / f"trainlog_{arch}.tsv")
    last = log.entries[-1]
    print(
        f"train {arch}: {reason} at step {last.step}, "
        f"val acc {last.val_accuracy:.4f} sens {last.val_sensitivity:.4f} spec {last.val_specificity:.4f}"
    )
    _log_stage(out, f"train_{arch}", t0, [out / f"model_{arch}.mlp"])
    return 0


def _parse_filters(args) -> list[evaluation.SubgroupFilter]:
    if not args.min_visits and not args.ccs_filter:
        return evaluation.standard_filters()
    filters = [evaluation.SubgroupFilter.all_rows()]
    for n in args.min_visits or []:
        filters.append(evaluation.SubgroupFilter.min_visits(n))
    for spec in args.ccs_filter or []:
        filters.append(evaluation.SubgroupFilter.ccs_any(int(c) for c in spec.split("/")))
    return filters


def cmd_eval(args) -> int:
    out = Path(args.out_dir)
    t0 = time.time()
    arch = args.arch.lower()
    ds = encode.load_dataset(
        _require(out / "features.hdr", "encoded header"),
        _require(out / "features.f64", "encoded matrix"),
        _require(out / "meta.tsv", "row metadata"),
    )
    stats = encode.load_stats(_require(out / "stats.tsv", "stats file"))
    test_idx, _ = resample.load_indices(_require(out / "test.idx", "test indices"))
    model = mlp.load_model(_require(out / f"model_{arch}.mlp", "model file"))
    report = evaluation.evaluate(
        model, ds.subset(test_idx), stats, _parse_filters(args), args.threshold, arch
    )
    evaluation.write_report(report, out / f"report_{arch}.txt", out / f"report_{arch}.tsv")
    for r in report.results:
        if r.label == "all" and r.roc is not None:
            evaluation.write_roc(r, out / f"roc_{arch}_all.tsv")
    print(evaluation.format_report(report), end="")
    _log_stage(out, f"eval_{arch}", t0, [out / f"report_{arch}.tsv"])
    return 0


def cmd_repro(args) -> int:
    """Run every stage for nn2, nn4, nn8 and emit one combined report."""
    out = Path(args.out_dir)
    cmd_synth(args)
    args.cohort = str(out / "cohort.csv")
    args.spec = str(out / "spec.txt")
    cmd_encode(args)
    cmd_split(args)
    combined = []
    for arch in ("nn2", "nn4", "nn8"):
        args.arch = arch
        cmd_train(args)
        cmd_eval(args)
        with open(out / f"report_{arch}.tsv", encoding="utf-8") as f:
            lines = f.read().splitlines()
        combined.extend(lines[1:] if combined else lines)
    with open(out / "report.tsv", "w", encoding="utf-8") as f:
        f.write("\n".join(combined) + "\n")
    with open(out / "report.txt", "w", encoding="utf-8") as f:
        for arch in ("nn2", "nn4", "nn8"):
            f.write(open(out / f"report_{arch}.txt", encoding="utf-8").read())
            f.write("\n")
    print(f"repro: combined report at {out / 'report.txt'}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _read_config_file(path) -> dict[str, str]:
    kv = {}
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value")
            k, v = line.split("=", 1)
            kv[k.strip().replace("-", "_")] = v.strip()
    return kv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edrisk", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value config file; explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default="out")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    common(p)
    p.add_argument("--patients", type=int, default=50_000)

    p = sub.add_parser("encode", help="encode a cohort file into the feature matrix")
    common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--spec", required=True)

    p = sub.add_parser("split", help="pretrain/test split, stats fit, bootstrap, train/val split")
    common(p)
    p.add_argument("--fraction", type=float, default=0.8)

    def train_flags(p):
        p.add_argument("--eta0", type=float, default=0.01)
        p.add_argument("--steps", type=int, default=8000)
        p.add_argument("--batch-size", type=int, default=256)
        p.add_argument("--patience", type=int, default=5)

    p = sub.add_parser("train", help="train one architecture")
    common(p)
    p.add_argument("--arch", required=True, choices=sorted(ARCH_INDEX))
    train_flags(p)

    def eval_flags(p):
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--min-visits", type=int, action="append")
        p.add_argument("--ccs-filter", action="append", help="e.g. 662 or 651/657")

    p = sub.add_parser("eval", help="evaluate a trained model on the test rows")
    common(p)
    p.add_argument("--arch", required=True, choices=sorted(ARCH_INDEX))
    eval_flags(p)

    p = sub.add_parser("repro", help="full pipeline for nn2, nn4, nn8 with a combined report")
    common(p)
    p.add_argument("--patients", type=int, default=50_000)
    p.add_argument("--fraction", type=float, default=0.8)
    train_flags(p)
    eval_flags(p)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "encode": cmd_encode,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "repro": cmd_repro,
}


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = parser.parse_args(argv)
    try:
        if args.config:
            # config file supplies values for flags not given on the command line
            kv = _read_config_file(args.config)
            given = {a.lstrip("-").split("=")[0].replace("-", "_") for a in argv if a.startswith("--")}
            for k, v in kv.items():
                if k in ("command", "config") or k in given or not hasattr(args, k):
                    continue
                cur = getattr(args, k)
                cast = type(cur) if cur is not None else str
                setattr(args, k, cast(v))
        return COMMANDS[args.command](args)
    except (ConfigError, schema.SpecFormatError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except StageInputMissing as e:
        print(f"missing stage input: {e}", file=sys.stderr)
        return 3
    except (
        schema.SchemaError,
        encode.EncodeError,
        resample.ResampleError,
        mlp.MLPError,
        training.TrainError,
        evaluation.EvalError,
        synth.SynthError,
    ) as e:
        print(f"pipeline error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
