"""Command-line entry point: ``synthrm <stage> --config FILE [--seed N]``.

Exit codes: 0 success, 1 configuration error, 2 some samples failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from collections import defaultdict

import numpy as np

from .analysis import CONCEPTS, HIST_EDGES, concept_correlations, gain_statistics
from .datasetio import CampaignConfig, ConfigError, read_pfm, read_pgm, run_campaign, validate_dataset

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _load_config(args) -> CampaignConfig:
    cfg = CampaignConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "output", None):
        overrides["output_dir"] = args.output
    if overrides:
        d = {**cfg.to_dict(), "output_dir": cfg.output_dir, **overrides}
        cfg = CampaignConfig.from_dict(d)
    return cfg


def _run_stage(args) -> int:
    cfg = _load_config(args)
    result = run_campaign(cfg, args.command)
    problems = validate_dataset(result.root) if args.command in ("simulate", "campaign") and args.validate else []
    for p in problems:
        logging.error("validation: %s", p)
    n_err = len(result.manifest.errors)
    print(f"{args.command}: {result.num_samples} samples, {n_err} failed -> {result.root}")
    return EXIT_PARTIAL if n_err or problems else EXIT_OK


def _nan_to_none(x):
    return None if isinstance(x, float) and not math.isfinite(x) else x


def analyze_dataset(root: str, out_dir: str, seed: int = 0) -> dict:
    """Per-sample statistics, concept correlations and histograms for a finished dataset."""
    with open(os.path.join(root, "manifest.json")) as fh:
        manifest = json.load(fh)
    ids, maps, rows = [], [], []
    for s in manifest["samples"]:
        pg = read_pfm(os.path.join(root, s["files"]["path_gain"]))
        sem = read_pgm(os.path.join(root, s["files"]["semantic"]))
        ids.append(s["id"])
        maps.append(pg)
        rows.append((s, concept_correlations(sem, pg)))
    if not maps:
        raise ValueError("dataset has no samples")
    stats = gain_statistics(maps, ids)
    by_id = {r["sample"]: r for r in stats.table()}
    os.makedirs(out_dir, exist_ok=True)

    with open(os.path.join(out_dir, "per_sample.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "archetype", "mean_db", "max_db", "std_db", *[f"rpb_{c}" for c in CONCEPTS]])
        for s, corr in rows:
            g = by_id.get(s["id"], {})
            w.writerow([s["id"], s["archetype"], *(repr(g[k]) if k in g else "" for k in ("mean_db", "max_db", "std_db")),
                        *(repr(corr[c]) for c in CONCEPTS)])

    with open(os.path.join(out_dir, "histograms.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low_db", "bin_high_db", "mean_db", "max_db", "std_db"])
        for k in range(len(HIST_EDGES) - 1):
            w.writerow([HIST_EDGES[k], HIST_EDGES[k + 1], *(int(stats.histograms[n][k]) for n in
                                                           ("mean_db", "max_db", "std_db"))])

    per_arch = defaultdict(lambda: defaultdict(list))
    for s, corr in rows:
        for c in CONCEPTS:
            if math.isfinite(corr[c]):
                per_arch[s["archetype"]][c].append(corr[c])
    summary = {
        "num_samples": len(ids),
        "skipped_empty_maps": stats.skipped,
        "bic": None if stats.bic is None else {"one_component": stats.bic[0], "two_component": stats.bic[1]},
        "bimodal": stats.bimodal,
        "concept_correlation": {
            arch: {c: {"mean": _nan_to_none(float(np.mean(v))) if v else None,
                       "std": _nan_to_none(float(np.std(v))) if v else None, "count": len(v)}
                   for c, v in sorted(cs.items())}
            for arch, cs in sorted(per_arch.items())
        },
        "seed": seed,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _analyze(args) -> int:
    cfg = _load_config(args)
    root = args.dataset or cfg.output_dir
    out = args.report or os.path.join(root, "analysis")
    summary = analyze_dataset(root, out, cfg.seed)
    print(json.dumps({"bimodal": summary["bimodal"], "num_samples": summary["num_samples"]}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthrm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "generate scenes only",
        "render": "generate and render views",
        "simulate": "render, reconstruct VAS and trace radio maps",
        "orchestrate": "render views and detect perception communities",
        "campaign": "run every stage and write the full dataset",
        "analyze": "statistics and correlation reports for a finished dataset",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="campaign JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        if name == "analyze":
            p.add_argument("--dataset", help="dataset root (default: the config's output_dir)")
            p.add_argument("--report", help="report directory (default: <dataset>/analysis)")
        else:
            p.add_argument("--output", help="override the output directory")
            p.add_argument("--no-validate", dest="validate", action="store_false",
                           help="skip the post-run manifest validation")
    return parser


def main(argv=None) -> int:
    warnings.filterwarnings("ignore", message=".*TBB.*")  # numba falls back to another threading layer
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _analyze(args) if args.command == "analyze" else _run_stage(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
