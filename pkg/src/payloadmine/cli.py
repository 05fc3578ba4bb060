"""Command line entry point: ``payloadmine <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .evalgen import GroundTruth, SynthSpec, clustering_precision_recall, generate_corpus
from .mining import group_apps, mine
from .pipeline import (
    OPT_LEVELS,
    PARAM_TYPES,
    STAGES,
    PipelineError,
    RunConfig,
    Workspace,
    cluster_candidates,
    parse_app_clusters,
    parse_config_file,
)


def _add_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, required=True, help="output / working directory")
    p.add_argument("--config", type=Path, help="key=value config file (flags win)")
    p.add_argument("--input", type=Path, action="append", default=[], help="extra directory to read upstream artifacts from")
    p.add_argument("--corpus", type=Path, help="directory of APP IR documents (*.ir)")
    p.add_argument("--libs", type=Path, help="directory of LIBRARY IR documents (*.ir)")
    p.add_argument("--ngram", type=int)
    p.add_argument("--bits", type=int, help="fingerprint width in bits")
    p.add_argument("--theta", type=float, help="clustering similarity threshold")
    p.add_argument("--linkage", choices=("single", "average"))
    p.add_argument("--min-k", type=int, dest="min_k")
    p.add_argument("--min-l", type=int, dest="min_l")
    p.add_argument("--min-bits", type=int, dest="min_bits")
    p.add_argument("--refine-step", type=float, dest="refine_step")
    p.add_argument("--opt", choices=OPT_LEVELS)
    p.add_argument("--minhash-k", type=int, dest="minhash_k")
    p.add_argument("--group-size", type=int, dest="group_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < params recorded in the output manifest < config file < flags."""
    values: dict[str, Any] = {}
    manifest = args.out / "manifest.json"
    if manifest.exists():
        recorded = json.loads(manifest.read_text(encoding="utf-8")).get("params", {})
        for key, value in recorded.items():
            if key in PARAM_TYPES and value is not None:
                values[key] = PARAM_TYPES[key](value) if key in ("corpus", "libs", "out") else value
    if args.config is not None:
        values.update(parse_config_file(args.config.read_text(encoding="utf-8")))
    for key in PARAM_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    values["out"] = args.out
    return RunConfig(**values)


def _parse_sweep(text: str) -> list[float]:
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected start:stop:step") from None
    if step <= 0 or hi < lo:
        raise argparse.ArgumentTypeError("expected start <= stop and step > 0")
    count = int(round((hi - lo) / step)) + 1
    return [round(lo + i * step, 6) for i in range(count)]


def cmd_stage(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ws = Workspace(cfg, args.input)
    stages = STAGES if args.command == "run" else (args.command,)
    for stage in stages:
        ws.run_stage(stage)
    if args.command in ("run", "mine"):
        sys.stdout.write(ws.need_mining(args.command).to_text())
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    ws = Workspace(cfg, args.input)
    reference = None
    if args.truth is not None:
        reference = GroundTruth.from_tsv(args.truth.read_text(encoding="utf-8")).partition(args.level)
    elif args.compare is not None:
        reference = parse_app_clusters((args.compare / "app_clusters.tsv").read_text(encoding="utf-8"))
    if reference is None:
        raise SystemExit("eval needs --truth or --compare")

    if args.sweep_theta:
        candidates = ws.need_candidates("eval")
        apps = ws.need_apps("eval")
        print("theta\tprecision\trecall\tf1\tclusters")
        for theta in args.sweep_theta:
            sweep_cfg = RunConfig(**{**cfg.params(), "theta": theta})
            clusters = cluster_candidates(candidates, sweep_cfg)
            result = mine(clusters, candidates, sweep_cfg.mining_config(), sweep_cfg.clustering_config(), apps=apps)
            groups = group_apps(result)
            p, r = clustering_precision_recall(groups, reference)
            f1 = 2 * p * r / (p + r) if p + r else 0.0
            print(f"{theta:.2f}\t{p:.4f}\t{r:.4f}\t{f1:.4f}\t{len(groups)}")
        return 0

    produced = parse_app_clusters(ws.find("app_clusters.tsv", "mine", "eval").read_text(encoding="utf-8"))
    p, r = clustering_precision_recall(produced, reference)
    print(f"precision\t{p:.4f}\nrecall\t{r:.4f}\nclusters\t{len(produced)}\nreference_clusters\t{len(reference)}")
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    spec = SynthSpec.from_config(args.spec.read_text(encoding="utf-8")) if args.spec else SynthSpec()
    if args.seed is not None:
        spec.seed = args.seed
    corpus = generate_corpus(spec)
    corpus.write(args.out)
    (args.out / "spec.cfg").write_text(spec.to_config(), encoding="utf-8")
    print(f"wrote {len(corpus.apps)} apps and {len(corpus.libraries)} library documents to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="payloadmine", description="Cluster apps by mined shared payloads.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", *STAGES):
        p = sub.add_parser(name, help="run every stage" if name == "run" else f"run the {name} stage")
        _add_params(p)
        p.set_defaults(func=cmd_stage)
    p = sub.add_parser("eval", help="score app clusters against ground truth or another run")
    _add_params(p)
    p.add_argument("--truth", type=Path, help="ground truth file app_id<TAB>family<TAB>version")
    p.add_argument("--level", choices=("version", "family"), default="version")
    p.add_argument("--compare", type=Path, help="reference output directory")
    p.add_argument("--sweep-theta", type=_parse_sweep, dest="sweep_theta", help="start:stop:step")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("gen", help="generate a synthetic corpus with ground truth")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--spec", type=Path, help="key=value synthetic corpus spec")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
