"""Command-line entry point.

One subcommand per pipeline stage plus ``run`` (the full pipeline) and
``synth`` (labeled synthetic corpus generation for smoke tests).  All
pipeline subcommands share the same config handling: ``--config`` loads a
JSON file, repeatable ``--set dotted.key=value`` overrides it, and
``VECFOLD_OUTPUT_DIR`` supplies ``output_dir`` when the config omits it.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__, pipeline
from .pipeline import ConfigError, PipelineError
from .synth import write_synthetic_corpus

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

_STAGE_COMMANDS = {
    "ingest": ("ingest",),
    "template": ("ingest", "template"),
    "embed": ("ingest", "template", "embed"),
    "cluster": ("cluster",),
    "project": ("project",),
    "report": ("report",),
    "run": pipeline.STAGES,
}


def _add_pipeline_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="PATH", help="JSON pipeline config file")
    sub.add_argument(
        "--set",
        dest="overrides",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        help="override a config value (dotted keys, JSON values); repeatable",
    )
    sub.add_argument("--threads", type=int, default=1, metavar="N")
    sub.add_argument(
        "--resume",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="reuse completed stages whose inputs are unchanged (default on)",
    )
    sub.add_argument(
        "--deterministic",
        action="store_true",
        help="pin run timestamps so artifacts are byte-reproducible",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vecfold",
        description="Embed, cluster, and project marketplace post corpora.",
    )
    parser.add_argument("--version", action="version", version=f"vecfold {__version__}")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="more logging (-v, -vv)"
    )
    subs = parser.add_subparsers(dest="command", required=True)

    descriptions = {
        "ingest": "validate the corpus and write corpus_stats.json",
        "template": "render prompt previews into template_preview.json",
        "embed": "embed every post into embeddings.embm",
        "cluster": "fit k-means over the embeddings",
        "project": "project a sample to 2D coordinates",
        "report": "write the cluster report and scatter plot",
        "run": "run the full pipeline end to end",
    }
    for name, desc in descriptions.items():
        sub = subs.add_parser(name, help=desc)
        _add_pipeline_args(sub)
        sub.set_defaults(func=_cmd_pipeline, stages=_STAGE_COMMANDS[name])

    synth = subs.add_parser("synth", help="generate a labeled synthetic corpus")
    synth.add_argument("--out", required=True, metavar="PATH", help="corpus JSONL path")
    synth.add_argument("--posts", type=int, default=800, metavar="N")
    synth.add_argument("--seed", type=int, default=0, metavar="N")
    synth.set_defaults(func=_cmd_synth)

    return parser


def _cmd_pipeline(args: argparse.Namespace) -> int:
    data = pipeline.load_config_file(args.config) if args.config else {}
    data = pipeline.apply_overrides(data, args.overrides)
    config = pipeline.config_from_dict(data)
    run_dir = pipeline.run_pipeline(
        config,
        stages=tuple(args.stages),
        threads=max(1, args.threads),
        resume=args.resume,
        deterministic=args.deterministic,
    )
    print(run_dir)
    return EXIT_OK


def _cmd_synth(args: argparse.Namespace) -> int:
    if args.posts < 1:
        raise ConfigError("--posts must be >= 1")
    corpus_path, labels_path = write_synthetic_corpus(
        args.out, n_posts=args.posts, seed=args.seed
    )
    print(corpus_path)
    print(labels_path)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"vecfold: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"vecfold: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
