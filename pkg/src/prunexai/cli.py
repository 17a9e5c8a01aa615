"""``prunexai`` command line: generate, train, explain, prune, pipeline, report.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. The effective configuration of every run is printed
to stderr as one JSON line so stdout stays clean for payloads.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from ._rng import derive_seed
from .dataset import SyntheticConfig, generate_synthetic, load_dataset, normalize, save_dataset, split
from .errors import ConfigError, DataError, PruneXAIError
from .explain import (
    EXHAUSTIVE,
    KERNEL_SHAP,
    LIME,
    ExplainConfig,
    GlobalImportance,
    explain_dataset,
    global_heatmap,
    heatmap_csv,
    rank_features,
    select_background,
)
from .model import KINDS, RegressorConfig, load_model, metrics, predict, save_model, train
from .pipeline import PipelineConfig, emit_report, load_config, parse_report, run_pipeline
from .prune import (
    MAX,
    SELECTIVE,
    FeaturePruneConfig,
    SamplePruneConfig,
    apply,
    combine,
    plan_feature_prune,
    plan_sample_prune,
    score_samples,
    size_percent,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prunexai", description="Explanation-guided data pruning for temporal regression.")
    p.add_argument("--version", action="version", version=f"prunexai {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help="cap on explanation fan-out (default: available cores)")
    p.add_argument("--json-errors", action="store_true",
                   help="report failures as {stage, message} JSON on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--samples", type=int, default=1000)
    g.add_argument("--t-steps", type=int, default=1)
    g.add_argument("--structured", type=int, default=20)
    g.add_argument("--noise", type=int, default=10)
    g.add_argument("--sigma", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="train a regressor on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=KINDS, default="mlp")
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--out", required=True, help="model file to write")

    e = sub.add_parser("explain", help="attribute a trained model on the validation split")
    e.add_argument("--data", required=True)
    e.add_argument("--model-file", required=True)
    e.add_argument("--method", choices=("shap", "lime"), default="shap")
    budget = e.add_mutually_exclusive_group()
    budget.add_argument("--exhaustive", action="store_true", help="enumerate every coalition")
    budget.add_argument("--coalitions", type=int, default=None, help="sampled coalition budget")
    e.add_argument("--background", type=int, default=50, help="background set size")
    e.add_argument("--seed", type=int, default=42)
    e.add_argument("--out", required=True, help="global heatmap JSON to write")

    r = sub.add_parser("prune", help="turn a global heatmap into a prune plan")
    r.add_argument("--heatmap", required=True)
    r.add_argument("--strategy", choices=(SELECTIVE, MAX), default=SELECTIVE)
    r.add_argument("--tau", type=float, default=None)
    r.add_argument("--top-k", type=int, default=None)
    r.add_argument("--sample-q", type=float, default=None,
                   help="also drop this share of highest-residual samples (needs --data)")
    r.add_argument("--model", choices=KINDS, default="mlp", help="model used for residual scoring")
    r.add_argument("--data", default=None, help="dataset directory to prune")
    r.add_argument("--seed", type=int, default=42)
    r.add_argument("--out", required=True, help="prune plan JSON to write")
    r.add_argument("--pruned-out", default=None, help="directory for the pruned dataset")

    pl = sub.add_parser("pipeline", help="run the full experiment",
                        epilog="Any config field can be overridden with a dotted flag, "
                               "e.g. --model.kind ridge --feature_prune.tau 0.1")
    pl.add_argument("--config", default=None, help="JSON pipeline config")
    pl.add_argument("--seed", type=int, default=None)
    pl.add_argument("--out", default=None, help="output directory")

    rp = sub.add_parser("report", help="render a stored report.json")
    rp.add_argument("--in", dest="input", required=True)
    rp.add_argument("--format", choices=("md", "csv"), default="md")
    return p


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def split_overrides(argv):
    """Separate ``--a.b value`` pairs from ordinary arguments."""
    plain, overrides = [], {}
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg.startswith("--") and "." in arg.split("=", 1)[0]:
            key, eq, val = arg[2:].partition("=")
            if not eq:
                if i + 1 >= len(argv):
                    raise UsageError(f"override --{key} needs a value")
                i += 1
                val = argv[i]
            overrides[key] = _parse_value(val)
        else:
            plain.append(arg)
        i += 1
    return plain, overrides


def apply_overrides(config: dict, overrides: dict) -> dict:
    for dotted, value in overrides.items():
        node = config
        *parents, leaf = dotted.split(".")
        for key in parents:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"override --{dotted}: {key!r} is not a config section")
            node = node[key]
        if leaf not in node:
            raise ConfigError(f"override --{dotted}: unknown field {leaf!r}")
        node[leaf] = value
    return config


def _echo_config(cfg):
    print("effective config: " + json.dumps(cfg, sort_keys=True), file=sys.stderr)


def _prepared(data_dir, seed):
    ds, _ = normalize(load_dataset(data_dir))
    return ds, split(ds, seed=derive_seed(seed, "split"))


def cmd_generate(a):
    cfg = SyntheticConfig(a.samples, a.t_steps, a.structured, a.noise, a.sigma, a.seed)
    _echo_config({"command": "generate", **cfg.to_dict(), "out": a.out})
    ds = generate_synthetic(cfg)
    save_dataset(ds, a.out)
    print(f"wrote {ds.n_samples} samples x {ds.t_steps} steps x {ds.n_features} features to {a.out}")


def cmd_train(a):
    cfg = RegressorConfig(kind=a.model, seed=derive_seed(a.seed, "model"))
    _echo_config({"command": "train", "data": a.data, "seed": a.seed, "model": cfg.to_dict()})
    _, (tr, va, te) = _prepared(a.data, a.seed)
    model, rep = train(tr, va, cfg)
    m = metrics(te.targets, predict(model, te))
    save_model(model, a.out)
    print(json.dumps({"model_file": a.out, "test": m.to_dict(), "train": rep.to_dict()}, indent=2))


def cmd_explain(a):
    n = EXHAUSTIVE if a.exhaustive else (a.coalitions or 2048)
    cfg = ExplainConfig(n_coalitions=n, background_size=a.background, seed=derive_seed(a.seed, "explain"))
    method = LIME if a.method == "lime" else KERNEL_SHAP
    _echo_config({"command": "explain", "data": a.data, "model_file": a.model_file,
                  "method": method, "seed": a.seed, "explain": cfg.to_dict()})
    ds, (tr, va, _) = _prepared(a.data, a.seed)
    model = load_model(a.model_file)
    background = select_background(tr, cfg.background_size, derive_seed(a.seed, "background"))
    maps = explain_dataset(model, va, background, cfg, method=method, threads=a.threads)
    gi = global_heatmap(maps, ds.feature_names)
    out = Path(a.out)
    out.write_text(json.dumps(gi.to_dict(), indent=2) + "\n")
    out.with_suffix(".csv").write_text(heatmap_csv(gi))
    for rank, (i, score) in enumerate(rank_features(gi)[:10], 1):
        print(f"{rank:2d}. {ds.feature_names[i]}  {score:.6g}")


def cmd_prune(a):
    if a.strategy == SELECTIVE and a.top_k is not None:
        raise UsageError("--top-k conflicts with --strategy selective (use --tau)")
    if a.strategy == MAX and a.tau is not None:
        raise UsageError("--tau conflicts with --strategy max (use --top-k)")
    if a.strategy == MAX and a.top_k is None:
        raise UsageError("--strategy max needs --top-k")
    if a.sample_q is not None and a.data is None:
        raise UsageError("--sample-q needs --data")
    fcfg = FeaturePruneConfig(a.strategy, 0.05 if a.tau is None else a.tau, a.top_k)
    scfg = None
    if a.sample_q is not None:
        scfg = SamplePruneConfig(quantile_q=a.sample_q, seed=derive_seed(a.seed, "sample_prune"))
    _echo_config({"command": "prune", "heatmap": a.heatmap, "feature_prune": fcfg.to_dict(),
                  "sample_prune": scfg.to_dict() if scfg else None, "data": a.data, "seed": a.seed})
    try:
        gi = GlobalImportance.from_dict(json.loads(Path(a.heatmap).read_text()))
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"cannot read heatmap {a.heatmap}: {exc}", stage="prune") from None
    plan = plan_feature_prune(gi, fcfg)
    if a.data is not None:
        ds, _ = normalize(load_dataset(a.data))
        if ds.n_features != gi.per_feature.size:
            raise DataError(f"heatmap has {gi.per_feature.size} features, data has {ds.n_features}",
                            stage="prune")
        if scfg is not None:
            reduced = apply(ds, plan.features_only())
            mcfg = RegressorConfig(kind=a.model, seed=derive_seed(a.seed, "model"))
            plan = combine(plan, plan_sample_prune(score_samples(reduced, mcfg, scfg), scfg))
        pruned = apply(ds, plan)
        print(f"retained {size_percent(ds, pruned):.1f}% of cells")
        if a.pruned_out:
            raw = apply(load_dataset(a.data), plan)
            save_dataset(raw, a.pruned_out)
    Path(a.out).write_text(plan.to_json())
    names = plan.params.get("removed_names", plan.features_removed)
    print(f"removed {len(plan.features_removed)} features: {', '.join(map(str, names))}")
    if plan.samples_removed:
        print(f"removed {len(plan.samples_removed)} samples")


def cmd_pipeline(a, overrides):
    base = load_config(a.config).to_dict() if a.config else PipelineConfig().to_dict()
    if a.seed is not None:
        base["seed"] = a.seed
    if a.out is not None:
        base["output_dir"] = a.out
    cfg = PipelineConfig.from_dict(apply_overrides(base, overrides))
    _echo_config(cfg.to_dict())
    report = run_pipeline(cfg, threads=a.threads)
    print(emit_report(report, "markdown"), end="")


def cmd_report(a):
    _echo_config({"command": "report", "in": a.input, "format": a.format})
    try:
        text = Path(a.input).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {a.input}: {exc}", stage="report") from None
    print(emit_report(parse_report(text), a.format), end="")


def _fail(args_json, stage, message, code):
    if args_json:
        print(json.dumps({"stage": stage, "message": message}), file=sys.stderr)
    else:
        print(message if stage == "usage" else f"prunexai: {stage}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        plain, overrides = split_overrides(argv)
        a = parser.parse_args(plain)
        if a.command is None:
            raise UsageError(parser.format_usage().rstrip())
        if overrides and a.command != "pipeline":
            raise UsageError(f"dotted overrides only apply to 'pipeline': {sorted(overrides)}")
        if a.threads is not None and a.threads < 1:
            raise UsageError("--threads must be at least 1")
        if a.command == "pipeline":
            cmd_pipeline(a, overrides)
        else:
            globals()[f"cmd_{a.command}"](a)
        return EXIT_OK
    except UsageError as exc:
        return _fail(json_errors, "usage", str(exc), EXIT_USAGE)
    except PruneXAIError as exc:
        default = {EXIT_USAGE: "config", EXIT_NUMERIC: "numeric"}.get(exc.exit_code, "data")
        return _fail(json_errors, exc.stage or default, str(exc), exc.exit_code)
    except OSError as exc:
        return _fail(json_errors, "io", str(exc), EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
