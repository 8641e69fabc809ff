"""Command-line front end: ``seqsynth {fit,generate,risk,evaluate,stats}``.

Settings come from one INI config file; command-line flags win over it.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .core import (
    SchemaConfig,
    SeqSynthError,
    format_timestamp,
    load_dataset,
    parse_timestamp,
    read_config,
    summarize,
    write_dataset,
)
from .evaluation import EvaluationConfig, evaluate
from .generator import GenerationConfig, generate
from .models import ModelBundle, ModelConfig, fit_bundle
from .privacy import MAX_RISK, QidSpec, estimate_epsilon_s, risk_report
from .trees import ForestParams

log = logging.getLogger("seqsynth")


@dataclass
class RunConfig:
    schema: SchemaConfig | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    paths: dict[str, str] = field(default_factory=dict)

    def snapshot(self) -> dict:
        return {
            "schema": self.schema.to_dict() if self.schema else None,
            "model": self.model.to_dict(),
            "generation": asdict(self.generation),
            "evaluation": asdict(self.evaluation),
        }


def _opt_int(value: str | None) -> int | None:
    if value is None or value.strip().lower() in ("", "none"):
        return None
    return int(value)


def _max_features(value: str | None, default):
    if value is None:
        return default
    v = value.strip().lower()
    if v in ("none", "all"):
        return None
    if v in ("sqrt", "third"):
        return v
    return float(v) if "." in v else int(v)


def _forest(sec, prefix: str, default: ForestParams) -> ForestParams:
    g = lambda key: sec.get(prefix + key) if sec is not None else None  # noqa: E731
    return ForestParams(
        n_trees=int(g("n_trees") or default.n_trees),
        max_depth=_opt_int(g("max_depth")) if g("max_depth") is not None else default.max_depth,
        min_samples_leaf=int(g("min_samples_leaf") or default.min_samples_leaf),
        max_features=_max_features(g("max_features"), default.max_features),
        bootstrap=(g("bootstrap") or str(default.bootstrap)).strip().lower() in ("1", "true", "yes"),
        max_bins=int(g("max_bins") or default.max_bins),
    )


def _base_date(value: str | None) -> int | None:
    if value is None or not value.strip():
        return None
    value = value.strip()
    if value.lstrip("-").isdigit():
        return int(value)
    return parse_timestamp(value, "%Y-%m-%d")


def run_config_from(parser: configparser.ConfigParser) -> RunConfig:
    cfg = RunConfig()
    if parser.has_section("schema"):
        cfg.schema = SchemaConfig.from_config(parser)
    sec = lambda name: parser[name] if parser.has_section(name) else None  # noqa: E731
    feat, mod, gen, ev = sec("features"), sec("model"), sec("generation"), sec("evaluation")
    base = ModelConfig()
    get = lambda s, key, default: s.get(key, default) if s is not None else default  # noqa: E731
    cfg.model = ModelConfig(
        variant=get(mod, "variant", base.variant).strip(),
        markov_order=int(get(mod, "markov_order", base.markov_order)),
        window_size=int(get(feat, "window_size", base.window_size)),
        bins=int(get(feat, "bins", base.bins)),
        state_forest=_forest(mod, "", base.state_forest),
        time_forest=_forest(mod, "time_", base.time_forest),
        seed=int(get(gen, "seed", base.seed)),
        n_jobs=int(get(mod, "n_jobs", base.n_jobs)),
    )
    cfg.generation = GenerationConfig(
        n=_opt_int(get(gen, "n", None)),
        max_steps=_opt_int(get(gen, "max_steps", None)),
        seed=int(get(gen, "seed", 0)),
        base_date=_base_date(get(gen, "base_date", None)),
    )
    e = EvaluationConfig()
    k_values = get(ev, "k", None)
    cfg.evaluation = EvaluationConfig(
        folds=int(get(ev, "folds", e.folds)),
        tstr_synthetic_n=int(get(ev, "tstr_synthetic_n", e.tstr_synthetic_n)),
        synthetic_fraction=float(get(ev, "synthetic_fraction", e.synthetic_fraction)),
        k_values=tuple(int(k) for k in k_values.split(",")) if k_values else e.k_values,
        max_len=int(get(ev, "max_len", e.max_len)),
        versions=int(get(ev, "versions", e.versions)),
        max_steps=_opt_int(get(ev, "max_steps", None)),
        topk_max_steps=_opt_int(get(ev, "topk_max_steps", None)),
        seed=int(get(gen, "seed", e.seed)),
    )
    if parser.has_section("paths"):
        cfg.paths = dict(parser["paths"])
    return cfg


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = run_config_from(read_config(args.config)) if args.config else RunConfig()
    if args.seed is not None:
        cfg.model = replace(cfg.model, seed=args.seed)
        cfg.generation = replace(cfg.generation, seed=args.seed)
        cfg.evaluation = replace(cfg.evaluation, seed=args.seed)
    if getattr(args, "jobs", None):
        cfg.model = replace(cfg.model, n_jobs=args.jobs)
    if getattr(args, "variant", None):
        cfg.model = replace(cfg.model, variant=args.variant)
    if getattr(args, "n", None) is not None:
        cfg.generation = replace(cfg.generation, n=args.n)
    if getattr(args, "max_steps", None) is not None:
        cfg.generation = replace(cfg.generation, max_steps=args.max_steps)
    if getattr(args, "k", None):
        cfg.evaluation = replace(cfg.evaluation, k_values=tuple(int(k) for k in args.k.split(",")))
    for key in ("input", "output", "model"):
        value = getattr(args, key, None)
        if value:
            cfg.paths[key] = value
    return cfg


def _path(cfg: RunConfig, key: str) -> Path:
    if key not in cfg.paths:
        raise SeqSynthError(f"no {key} path: pass --{key} or set it in [paths]")
    return Path(cfg.paths[key])


def _require_schema(cfg: RunConfig) -> SchemaConfig:
    if cfg.schema is None:
        raise SeqSynthError("a config file with a [schema] section is required")
    return cfg.schema


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def cmd_fit(cfg: RunConfig) -> int:
    d = load_dataset(_path(cfg, "input"), _require_schema(cfg))
    bundle = fit_bundle(d, cfg.model)
    bundle.save(_path(cfg, "model"))
    print(f"states |E|={len(bundle.alphabet)}  owners={bundle.object_count}  records={len(d.records)}  "
          f"features={bundle.feature_spec.n_features}  variant={cfg.model.variant}  seed={cfg.model.seed}")
    return 0


def cmd_generate(cfg: RunConfig) -> int:
    bundle = ModelBundle.load(_path(cfg, "model"))
    gen = cfg.generation
    if gen.window_size is None:
        gen = replace(gen, window_size=bundle.feature_spec.window_size)
    out = _path(cfg, "output")
    synth = generate(bundle, gen)
    write_dataset(synth, out)
    check = load_dataset(out, bundle.schema)
    if len(check.records) != len(synth.records):
        raise SeqSynthError(f"{out}: written output failed to reload")
    print(f"generated {len(synth.sequences)} sequences / {len(synth.records)} records -> {out}  seed={gen.seed}")
    return 0


def cmd_risk(
    cfg: RunConfig, epsilon_s: float | None, estimate: bool, threshold: float | None, decimals: int | None = None
) -> int:
    d = load_dataset(_path(cfg, "input"), _require_schema(cfg))
    eps_note = "given"
    if epsilon_s is None and estimate:
        if len(d.sequences) >= cfg.evaluation.folds:
            epsilon_s = estimate_epsilon_s(d, cfg.model, cfg.evaluation.folds, cfg.model.seed)
            eps_note = f"estimated ({cfg.evaluation.folds}-fold held-out argmax error)"
        else:
            eps_note = f"not estimated: fewer than {cfg.evaluation.folds} objects"
    elif epsilon_s is None:
        eps_note = "not requested"
    report = risk_report(d, QidSpec(), epsilon_s, threshold, decimals)
    out = _path(cfg, "output")
    fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "object_id", "p", "uniqueness", "risk", "adjusted_risk"])
        for r in report.records:
            w.writerow([r.record_index, r.object_id, fmt(r.reconstruction_probability), fmt(r.uniqueness),
                        fmt(r.risk), fmt(r.adjusted_risk)])
    summary = {
        "records": len(report.records),
        "max_risk": report.max_risk,
        "mean_risk": report.mean_risk,
        "epsilon_s": report.epsilon_s,
        "epsilon_s_source": eps_note,
        "threshold": threshold,
        "decimals": decimals,
        "records_over_threshold": len(report.exceeding),
        "at_theoretical_maximum": report.at_maximum,
        "risk_product": report.risk_product,
        "config": cfg.snapshot(),
    }
    _dump_json(summary, out.with_name(out.name + ".summary.json"))
    print(f"records={len(report.records)}  max_risk={report.max_risk:.6g}  mean_risk={report.mean_risk:.6g}  "
          f"epsilon_s={'n/a' if epsilon_s is None else f'{epsilon_s:.4g}'}")
    if report.at_maximum:
        print(f"note: some records sit at the theoretical maximum risk {MAX_RISK}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    d = load_dataset(_path(cfg, "input"), _require_schema(cfg))
    report = evaluate(d, cfg.model, cfg.evaluation)
    out = _path(cfg, "output")
    out.mkdir(parents=True, exist_ok=True)
    data = report.to_dict()
    data["config"] = cfg.snapshot()
    _dump_json(data, out / "report.json")
    with open(out / "tstr_folds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "acc_source", "acc_synth", "rmse_source", "rmse_synth"])
        for f in report.folds:
            w.writerow([f.fold, repr(f.acc_source), repr(f.acc_synth), repr(f.rmse_source), repr(f.rmse_synth)])
    with open(out / "stats.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "source", "synthetic", "delta"])
        for s in report.stat_deltas:
            w.writerow([s.name] + ["" if v is None else repr(v) for v in (s.source, s.synthetic, s.delta)])
    with open(out / "state_frequencies.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "source", "synthetic"])
        for st, (a, b) in report.state_frequency_table.items():
            w.writerow([st, "" if a is None else repr(a), "" if b is None else repr(b)])
    with open(out / "topk_precision.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "max_len", "precision"])
        for (k, L), p in sorted(report.topk_precision.items()):
            w.writerow([k, L, repr(p)])
    lines = [
        f"seed: {cfg.model.seed}",
        f"state accuracy  source-trained {report.acc_source:.4f}  synthetic-trained {report.acc_synth:.4f}",
        f"time RMSE (s)   source-trained {report.rmse_source:.4f}  synthetic-trained {report.rmse_synth:.4f}",
    ]
    lines += [f"top-{k} precision (max_len {L}): {p:.3f}" for (k, L), p in sorted(report.topk_precision.items())]
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_stats(cfg: RunConfig) -> int:
    schema = _require_schema(cfg)
    d = load_dataset(_path(cfg, "input"), schema)
    rows = summarize(d).rows(schema.time_format)
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    if "output" in cfg.paths:
        stats = summarize(d)
        with open(cfg.paths["output"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic", "value"])
            for key, value in asdict(stats).items():
                if key in ("min_date", "max_date") and value is not None:
                    value = format_timestamp(value, schema.time_format)
                w.writerow([key, "" if value is None else value])
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file ([schema], [attributes], [features], [model], ...)")
    common.add_argument("--seed", type=int, help="master seed (overrides [generation] seed)")
    common.add_argument("--input", help="input CSV")
    common.add_argument("--output", help="output file or directory")
    common.add_argument("--model", help="model bundle file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="seqsynth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fit", parents=[common], help="fit a model bundle on a CSV dataset")
    p.add_argument("--variant", help="random_selection | markov | decision_tree | random_forest")
    p.add_argument("--jobs", type=int, help="worker threads for forest fitting")
    p = sub.add_parser("generate", parents=[common], help="generate synthetic sequences from a bundle")
    p.add_argument("--n", type=int, help="number of objects (default: source object count)")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p = sub.add_parser("risk", parents=[common], help="re-identification risk report of a dataset")
    p.add_argument("--epsilon-s", type=float, dest="epsilon_s", help="state-model error for adjusted risk")
    p.add_argument("--no-estimate", action="store_true", help="do not estimate epsilon_s by cross-validation")
    p.add_argument("--threshold", type=float, help="list records whose risk exceeds this value")
    p.add_argument("--decimals", type=int, help="round probabilities to this many decimals before the risk")
    p = sub.add_parser("evaluate", parents=[common], help="utility report: TSTR, statistics, top-k precision")
    p.add_argument("--variant")
    p.add_argument("--jobs", type=int)
    p.add_argument("--k", help="comma-separated top-k sizes")
    sub.add_parser("stats", parents=[common], help="summary statistics of a dataset")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "risk":
            return cmd_risk(cfg, args.epsilon_s, not args.no_estimate, args.threshold, args.decimals)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_stats(cfg)
    except (SeqSynthError, ValueError, OSError, configparser.Error) as exc:
        print(f"seqsynth {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
