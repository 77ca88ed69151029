"""Command-line pipeline: corpus generation, the two training phases,
candidate collection, evaluation, sweep harnesses over the four analysis
axes, and report aggregation.

Config files are flat KEY=VALUE text (one pair per line, # comments). Every
documented key can also be overridden on the command line with
``--config KEY=VALUE``. Exit codes: 0 success, 1 usage error, 2 runtime
failure. SPANFORGE_THREADS (>= 1) caps intra-run parallelism; the current
implementation is single-threaded, so any cap is honored trivially.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import CorpusSpec, Dataset, DistractorPolicy, generate_corpus, read_examples_jsonl, Vocab
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .losses import LossConfig
from .metrics import EvalReport
from .mining import MiningStrategy
from .spandecode import read_candidate_store
from .trainer import TrainConfig, collect_candidates, finetune, run_eval, train_base


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); the contract wants 1
        raise UsageError(message)


DEFAULT_AXIS_VALUES = {
    "tau": ["1", "2", "4", "8", "10", "12", "20"],
    "alpha": ["0.1", "0.3", "0.5", "0.7", "0.9"],
    "z_size": ["1", "5", "10", "20", "50"],
    "mining": ["most_similar:1", "most_similar:10", "most_similar:20", "top1", "random"],
}


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple[str, ...]
    seeds: tuple[int, ...]

    def __post_init__(self):
        if self.axis not in DEFAULT_AXIS_VALUES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if not self.values or not self.seeds:
            raise ValueError("sweep needs non-empty values and seeds")


def parse_kv_file(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected KEY=VALUE, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--config expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


CORPUS_KEYS = {
    "vocab_size": int,
    "num_examples": int,
    "passage_len": int,
    "answer_len_min": int,
    "answer_len_max": int,
    "prefix_overlap_count": int,
    "suffix_overlap_count": int,
    "full_decoys": int,
    "seed": int,
    "num_dev": int,
    "num_test": int,
}


def corpus_spec_from_kv(kv: dict[str, str]) -> CorpusSpec:
    unknown = set(kv) - set(CORPUS_KEYS)
    if unknown:
        raise ValueError(f"unknown corpus keys: {sorted(unknown)}")
    typed = {k: CORPUS_KEYS[k](v) for k, v in kv.items()}
    policy = DistractorPolicy(
        prefix_overlap_count=typed.pop("prefix_overlap_count", 2),
        suffix_overlap_count=typed.pop("suffix_overlap_count", 2),
        full_decoys=typed.pop("full_decoys", 2),
    )
    lo = typed.pop("answer_len_min", 1)
    hi = typed.pop("answer_len_max", 4)
    return CorpusSpec(answer_len_range=(lo, hi), distractors=policy, **typed)


TRAIN_KEYS = {
    "d_model": int,
    "d_ff": int,
    "max_len": int,
    "tau": float,
    "alpha": float,
    "k_frozen": int,
    "k_dynamic": int,
    "mining_variant": str,
    "mining_theta": int,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "weight_decay": float,
    "epochs": int,
    "batch_size": int,
    "checkpoint_every": int,
    "eval_every": int,
    "seed": int,
    "warmup": float,
    "max_answer_len": int,
    "question_max_len": int,
    "objective": str,
    "phase": str,
    "z_match": str,
    "z_refresh_every": int,
    "remine_every": int,
    "probe_count": int,
    "probe_top_n": int,
    "z_store": str,
}


def train_config_from_kv(kv: dict[str, str], vocab_size: int) -> tuple[TrainConfig, dict[str, str]]:
    """Build a TrainConfig from flat keys; returns leftover path-like keys."""
    unknown = set(kv) - set(TRAIN_KEYS)
    if unknown:
        raise ValueError(f"unknown train keys: {sorted(unknown)}")
    typed = {k: TRAIN_KEYS[k](v) for k, v in kv.items()}
    extras = {"z_store": typed.pop("z_store", "")}
    k_frozen = typed.pop("k_frozen", 20)
    encoder = EncoderConfig(
        vocab_size=vocab_size,
        d_model=typed.pop("d_model", 32),
        d_ff=typed.pop("d_ff", 64),
        max_len=typed.pop("max_len", 64),
        num_hard_weights=k_frozen,
    )
    loss = LossConfig(
        tau=typed.pop("tau", 10.0),
        alpha=typed.pop("alpha", 0.5),
        k_frozen=k_frozen,
        k_dynamic=typed.pop("k_dynamic", 50),
        batch_size=int(typed.get("batch_size", 32)),
        mining=MiningStrategy(
            variant=typed.pop("mining_variant", "most_similar"),
            theta=typed.pop("mining_theta", 1),
        ),
    )
    betas = (typed.pop("beta1", 0.9), typed.pop("beta2", 0.999))
    return TrainConfig(encoder=encoder, loss=loss, betas=betas, **typed), extras


def _load_train_inputs(args, overrides) -> tuple[TrainConfig, dict, Dataset]:
    data_dir = Path(args.data)
    ds = Dataset.load(data_dir)
    kv = parse_kv_file(args.base) if args.base else {}
    kv.update(overrides)
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    cfg, extras = train_config_from_kv(kv, len(ds.vocab))
    return cfg, extras, ds


def _threads_cap() -> int:
    raw = os.environ.get("SPANFORGE_THREADS", "")
    if not raw:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"SPANFORGE_THREADS must be an integer >= 1, got {raw!r}")
    if cap < 1:
        raise ValueError(f"SPANFORGE_THREADS must be >= 1, got {cap}")
    return cap


def _cmd_gen(args) -> int:
    kv = parse_kv_file(args.spec) if args.spec else {}
    kv.update(parse_overrides(args.config))
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    spec = corpus_spec_from_kv(kv)
    ds = generate_corpus(spec)
    out = Path(args.out)
    ds.save(out)
    with open(out / "corpus_meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {
                "vocab_size": spec.vocab_size,
                "num_examples": spec.num_examples,
                "passage_len": spec.passage_len,
                "answer_len_range": list(spec.answer_len_range),
                "distractors": {
                    "prefix_overlap_count": spec.distractors.prefix_overlap_count,
                    "suffix_overlap_count": spec.distractors.suffix_overlap_count,
                    "full_decoys": spec.distractors.full_decoys,
                },
                "seed": spec.seed,
                "splits": {"train": spec.num_train, "dev": spec.num_dev, "test": spec.num_test},
            },
            fh,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"wrote {spec.num_train}/{spec.num_dev}/{spec.num_test} examples to {out}")
    return 0


def _cmd_train_base(args) -> int:
    cfg, _, ds = _load_train_inputs(args, parse_overrides(args.config))
    cfg = replace(cfg, phase="base")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, log = train_base(cfg, ds.train, ds.vocab, dev_examples=ds.dev, out_dir=out)
    report = run_eval(params, cfg, ds.dev, ds.vocab)
    report.save_json(out / "dev_report.json")
    print(f"base training done: dev em={report.em:.4f} f1={report.f1:.4f}")
    return 0


def _cmd_collect(args) -> int:
    overrides = parse_overrides(args.config)
    enc_cfg, params = load_checkpoint(args.ckpt)
    ds = Dataset.load(Path(args.data))
    kv = parse_kv_file(args.base) if args.base else {}
    kv.update(overrides)
    cfg, _ = train_config_from_kv(kv, len(ds.vocab))
    cfg = replace(cfg, encoder=replace(enc_cfg, num_hard_weights=cfg.loss.k_frozen), phase="collect")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, summary = collect_candidates(params, cfg, ds.train, ds.vocab, out / "candidates.jsonl")
    print(f"collected {summary['count']} candidate sets (k={summary['k']}); recall@1={summary['recall_at']['1']:.4f}")
    return 0


def _cmd_train(args) -> int:
    overrides = parse_overrides(args.config)
    cfg, extras, ds = _load_train_inputs(args, overrides)
    enc_cfg, params = load_checkpoint(args.ckpt)
    cfg = replace(cfg, encoder=replace(enc_cfg, num_hard_weights=cfg.loss.k_frozen), phase="finetune")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.objective == "combined":
        store_path = Path(extras["z_store"]) if extras["z_store"] else Path(args.ckpt).parent / "candidates.jsonl"
        if not store_path.exists():
            raise FileNotFoundError(f"candidate store not found at {store_path}; run collect first or set z_store=")
        store = read_candidate_store(store_path)
    else:
        store = {}
    tuned, log = finetune(cfg, ds.train, ds.vocab, store, params, dev_examples=ds.dev, out_dir=out)
    report = run_eval(tuned, cfg, ds.dev, ds.vocab)
    report.save_json(out / "dev_report.json")
    print(f"finetune done: dev em={report.em:.4f} f1={report.f1:.4f}")
    return 0


def _cmd_eval(args) -> int:
    enc_cfg, params = load_checkpoint(args.ckpt)
    data_path = Path(args.data)
    examples = read_examples_jsonl(data_path)
    overrides = parse_overrides(args.config)
    vocab_path = Path(overrides.pop("vocab", data_path.parent / "vocab.txt"))
    vocab = Vocab.load(vocab_path)
    k_list = tuple(int(k) for k in args.k.split(","))
    max_answer_len = int(overrides.pop("max_answer_len", 8))
    if overrides:
        raise ValueError(f"unknown eval overrides: {sorted(overrides)}")
    cfg = TrainConfig(encoder=enc_cfg, max_answer_len=max_answer_len)
    report = run_eval(params, cfg, examples, vocab, k_list=k_list)
    out_csv = Path(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    report.save_csv(out_csv)
    report.save_json(out_csv.with_suffix(".json"))
    print(f"eval: em={report.em:.4f} f1={report.f1:.4f} over {len(report.records)} examples")
    return 0


def _axis_overrides(axis: str, value: str) -> dict[str, str]:
    if axis == "tau":
        return {"tau": value}
    if axis == "alpha":
        return {"alpha": value}
    if axis == "z_size":
        return {"k_frozen": value}
    if axis == "mining":
        if value.startswith("most_similar"):
            theta = value.split(":", 1)[1] if ":" in value else "1"
            return {"mining_variant": "most_similar", "mining_theta": theta}
        return {"mining_variant": value}
    raise ValueError(f"unknown axis {axis!r}")


def _cmd_sweep(args) -> int:
    overrides = parse_overrides(args.config)
    spec = SweepSpec(
        axis=args.axis,
        values=tuple(args.values.split(",")) if args.values else tuple(DEFAULT_AXIS_VALUES[args.axis]),
        seeds=tuple(int(s) for s in args.seeds.split(",")) if args.seeds else (0,),
    )
    ds = Dataset.load(Path(args.data))
    base_kv = parse_kv_file(args.base) if args.base else {}
    base_kv.update(overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # one shared base checkpoint so axis effects are not confounded
    base_cfg, _ = train_config_from_kv(dict(base_kv), len(ds.vocab))
    base_params, _ = train_base(replace(base_cfg, phase="base"), ds.train, ds.vocab)
    save_checkpoint(out / "base.ckpt", base_cfg.encoder, base_params)

    rows = []
    for value in spec.values:
        kv = dict(base_kv)
        kv.update(_axis_overrides(spec.axis, value))
        cfg, _ = train_config_from_kv(kv, len(ds.vocab))
        cfg = replace(cfg, phase="finetune")
        records, _ = collect_candidates(base_params, cfg, ds.train, ds.vocab)
        store = {r["id"]: r for r in records}
        for seed in spec.seeds:
            run_cfg = replace(cfg, seed=seed)
            run_dir = out / f"{spec.axis}_{value.replace(':', '_')}" / f"seed_{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            tuned, _ = finetune(run_cfg, ds.train, ds.vocab, store, base_params, out_dir=run_dir)
            report = run_eval(tuned, run_cfg, ds.test, ds.vocab)
            report.save_json(run_dir / "report.json")
            report.save_csv(run_dir / "report.csv")
            with open(run_dir / "meta.json", "w", encoding="utf-8", newline="\n") as fh:
                json.dump({"axis": spec.axis, "value": value, "seed": seed}, fh, sort_keys=True)
                fh.write("\n")
            rows.append({"value": value, "seed": seed, "em": report.em, "f1": report.f1})
            print(f"{spec.axis}={value} seed={seed}: test em={report.em:.4f} f1={report.f1:.4f}")

    _write_aggregate(out / f"sweep_{spec.axis}", spec.axis, rows)
    return 0


def _write_aggregate(base_path: Path, axis: str, rows: list[dict]) -> None:
    by_value: dict[str, list[dict]] = {}
    for row in rows:
        by_value.setdefault(row["value"], []).append(row)
    means = {
        v: {
            "em": sum(r["em"] for r in rs) / len(rs),
            "f1": sum(r["f1"] for r in rs) / len(rs),
        }
        for v, rs in by_value.items()
    }
    with open(base_path.with_suffix(".csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["axis", "value", "seed", "em", "f1"])
        for row in rows:
            writer.writerow([axis, row["value"], row["seed"], repr(row["em"]), repr(row["f1"])])
        for value, agg in means.items():
            writer.writerow([axis, value, "mean", repr(agg["em"]), repr(agg["f1"])])
    best = max(means, key=lambda v: means[v]["f1"])
    worst = min(means, key=lambda v: means[v]["f1"])
    lines = [
        f"| {axis} | mean em | mean f1 |",
        "|---|---|---|",
    ]
    for value, agg in means.items():
        lines.append(f"| {value} | {agg['em']:.4f} | {agg['f1']:.4f} |")
    lines.append("")
    lines.append(f"best {axis}={best} (f1 {means[best]['f1']:.4f}), worst {axis}={worst} (f1 {means[worst]['f1']:.4f})")
    base_path.with_suffix(".txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_report(args) -> int:
    rows = []
    missing = []
    for run_dir in args.run_dirs:
        rd = Path(run_dir)
        report_path = rd / "report.json"
        if not report_path.exists():
            missing.append(str(rd))
            continue
        report = EvalReport.load_json(report_path)
        meta = {}
        meta_path = rd / "meta.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        rows.append(
            {
                "value": str(meta.get("value", rd.name)),
                "seed": meta.get("seed", ""),
                "em": report.em,
                "f1": report.f1,
            }
        )
    if missing:
        for m in missing:
            print(f"missing report.json in {m}", file=sys.stderr)
        return 2
    if not rows:
        print("no run directories given", file=sys.stderr)
        return 2
    axis = "value"
    _write_aggregate(Path(args.out), axis, rows)
    print(Path(args.out).with_suffix(".txt").read_text(encoding="utf-8"))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="spanforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seed=True, config=True):
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if config:
            p.add_argument("--config", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--spec", default=None, help="corpus spec file (KEY=VALUE lines)")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train-base", help="train the base model on span cross-entropy")
    p.add_argument("--base", default=None, help="train config file")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=_cmd_train_base)

    p = sub.add_parser("collect", help="decode and store frozen candidate sets")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--base", default=None)
    common(p, seed=False)
    p.set_defaults(func=_cmd_collect)

    p = sub.add_parser("train", help="finetune with the combined objective")
    p.add_argument("--base", default=None)
    p.add_argument("--ckpt", required=True, help="base checkpoint to start from")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a JSONL split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="examples JSONL file")
    p.add_argument("--k", default="1,3,5,10")
    p.add_argument("--out", required=True, help="aggregate CSV path")
    common(p, seed=False)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="run one analysis axis from a shared base checkpoint")
    p.add_argument("--axis", required=True, choices=sorted(DEFAULT_AXIS_VALUES))
    p.add_argument("--base", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--values", default=None, help="comma-separated axis values")
    p.add_argument("--seeds", default=None, help="comma-separated finetune seeds")
    p.add_argument("--out", required=True)
    common(p, seed=False)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="aggregate EvalReports from run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True, help="output path stem (.csv/.txt added)")
    common(p, seed=False, config=False)
    p.set_defaults(func=_cmd_report)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        _threads_cap()
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime failures map to exit 2
        print(f"error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
