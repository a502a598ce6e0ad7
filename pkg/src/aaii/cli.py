"""Command-line interface: ``aaii {validate,synth,run,report,mixplan}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .augment import plan_adversarial, plan_stratified
from .dataset import DatasetError, load_manifest, split_scenario
from .forest import derive_seed
from .runner import (ConfigError, ExperimentConfig, Runner, _STREAM_ADVERSARIAL,
                     _STREAM_STRATIFIED, load_reports)
from .synthgen import SynthSpec, generate


def _fmt(v, digits=4):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def format_table(rows: list[list], header: list[str]) -> str:
    cells = [header] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def report_table(reports: list[dict]) -> str:
    header = ["scenario", "mode", "features", "aug", "exbg", "n_eval", "macro_auc",
              "detection_auc", "rmse_shift"]
    rows = []
    for r in reports:
        s = r["scenario"]
        rows.append([s["name"], r["eval_mode"], r["feature_kind"],
                     "on" if s["use_stratified_augmentation"] else "off",
                     "on" if s["use_explicit_background"] else "off",
                     r["n_eval"], r["macro_auc"], r["detection_auc"], r["rmse_shift"]])
    return format_table(rows, header)


def cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    from .dataset import read_wav
    rates = {}
    problems = 0
    for r in manifest.records:
        try:
            clip = read_wav(r.path)
            rates.setdefault(clip.sample_rate, 0)
            rates[clip.sample_rate] += 1
        except (OSError, DatasetError) as exc:
            print(f"error: {r.path}: {exc}", file=sys.stderr)
            problems += 1
    if len(rates) > 1:
        print(f"error: mixed sample rates {sorted(rates)}", file=sys.stderr)
        problems += 1
    print(f"{args.manifest}: {manifest.summary()}"
          + (f", {next(iter(rates))} Hz" if len(rates) == 1 else ""))
    return 1 if problems else 0


def cmd_synth(args) -> int:
    spec = SynthSpec.from_yaml(args.specfile)
    manifest = generate(spec, args.outdir)
    print(f"wrote {len(manifest.records)} clips and manifest to {args.outdir}: {manifest.summary()}")
    return 0


def cmd_run(args) -> int:
    overrides = {}
    if args.output_dir:
        overrides["output_dir"] = str(Path(args.output_dir).resolve())
    if args.dump_mel:
        overrides["dump_mel_dir"] = str(Path(args.dump_mel).resolve())
    config = ExperimentConfig.from_yaml(args.config, overrides)
    config.validate_paths()
    results = Runner(config).run()
    failed = [r for r in results if r.error]
    for r in failed:
        print(f"error: scenario {r.name}: {r.error}", file=sys.stderr)
    n_reports = sum(len(r.reports) for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} scenarios ok, {n_reports} reports "
          f"written to {config.output_dir}")
    return 1 if failed else 0


def cmd_report(args) -> int:
    reports = load_reports(args.dir)
    if not reports:
        print(f"error: no reports under {args.dir}/reports", file=sys.stderr)
        return 1
    print(report_table(reports))
    return 0


def cmd_mixplan(args) -> int:
    config = ExperimentConfig.from_yaml(args.config)
    config.validate_paths()
    manifest = load_manifest(config.manifest)
    specs = config.scenarios
    if args.scenario:
        specs = [s for s in specs if s.name == args.scenario]
        if not specs:
            print(f"error: no scenario named {args.scenario!r}", file=sys.stderr)
            return 2
    spec = specs[0]
    split = split_scenario(manifest, spec)
    if args.kind == "stratified":
        plan = plan_stratified(split.train_fg(), split.train_bg(), derive_seed(spec.seed, _STREAM_STRATIFIED))
    else:
        plan = plan_adversarial(split.eval_fg(), split.eval_bg(), derive_seed(spec.seed, _STREAM_ADVERSARIAL))
    if args.output:
        plan.write_csv(args.output)
    else:
        plan.write_csv(sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aaii", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a manifest and its audio files")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("synth", help="generate a synthetic confounded dataset")
    s.add_argument("specfile", help="YAML file with SynthSpec fields")
    s.add_argument("outdir")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="run an experiment config")
    s.add_argument("config")
    s.add_argument("-o", "--output-dir", help="override output_dir from the config")
    s.add_argument("--dump-mel", metavar="DIR",
                   help="write every noise-reduced mel spectrogram as CSV (T rows x 40 columns)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="tabulate the JSON reports of a run")
    s.add_argument("dir")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("mixplan", help="emit a mix plan as CSV")
    s.add_argument("config")
    s.add_argument("--kind", choices=["stratified", "adversarial"], required=True)
    s.add_argument("--scenario", help="scenario name (default: first in config)")
    s.add_argument("-o", "--output", help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_mixplan)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
