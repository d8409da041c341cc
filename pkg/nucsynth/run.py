import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd

from .biomarkers import METRICS
from .config import DatasetConfig, apply_overrides, load_config
from .dataset import generate_dataset, verify_manifest
from .errors import NucsynthError
from .pipeline import emit_plot_data, evaluate_command, extract_command, report_command, sensitivity_command

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_PARTIAL = 0, 1, 2


def _int_list(text: str):
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nucsynth", description="Synthetic nucleus datasets, biomarkers and reports")
    ap.add_argument("-c", "--config", default=None, help="YAML/JSON dataset config (e.g. config/dataset.yaml)")
    ap.add_argument("--seed", type=int, default=None, help="master seed")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default=None, help="output root (generate) or output file/dir (other commands)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a dataset and its manifest")
    g.add_argument("--modality", choices=["adversarial", "cspws", "he"])
    g.add_argument("--counts", type=_int_list, help="train,val,test image counts")
    g.add_argument("--class-mix", type=float, help="fraction of dysplasia nuclei")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    g.add_argument("--dump-fields", metavar="DIR", help="write the first image's fields as 16-bit PNGs")

    v = sub.add_parser("verify", help="re-hash a dataset against its manifest")
    v.add_argument("dataset")

    e = sub.add_parser("extract", help="per-nucleus biomarker CSV")
    e.add_argument("dataset")
    e.add_argument("--pixel-size", type=float, default=0.5)

    ev = sub.add_parser("evaluate", help="per-image overlap metrics")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--resamples", type=int, default=10000)
    ev.add_argument("--emit-plot-data", metavar="DIR")

    r = sub.add_parser("report", help="population statistics from a biomarker CSV")
    r.add_argument("csv")
    r.add_argument("--alpha", type=float, default=0.05)
    r.add_argument("--resamples", type=int, default=10000)
    r.add_argument("--emit-plot-data", metavar="DIR")

    s = sub.add_parser("sensitivity", help="biomarker error under mask dilation/erosion")
    s.add_argument("dataset")
    s.add_argument("--offsets", type=_int_list, default=[1, 2, 3, 4, 5])
    s.add_argument("--limit", type=int, default=None, help="use only the first N images")
    s.add_argument("--pixel-size", type=float, default=0.5)
    return ap


def _dataset_config(args) -> DatasetConfig:
    cfg = load_config(args.config) if args.config else DatasetConfig()
    top = {}
    if args.seed is not None:
        top["master_seed"] = args.seed
    if args.workers is not None:
        top["workers"] = args.workers
    if args.out is not None:
        top["out"] = args.out
    if args.modality:
        top["modality"] = args.modality
    if args.counts:
        if len(args.counts) != 3:
            raise NucsynthError("--counts takes train,val,test")
        top["counts"] = dict(zip(("train", "val", "test"), args.counts))
    if args.class_mix is not None:
        top["class_mix"] = args.class_mix
    return apply_overrides(replace(cfg, **top), args.set)


def run(args) -> int:
    workers = args.workers or 1
    seed = args.seed if args.seed is not None else 0

    if args.command == "generate":
        cfg = _dataset_config(args)
        _, manifest = generate_dataset(cfg, dump_fields=args.dump_fields)
        return EXIT_PARTIAL if manifest["failures"] else EXIT_OK

    if args.command == "verify":
        problems = verify_manifest(args.dataset)
        for p in problems:
            print(f"{p.status}\t{p.path}", file=sys.stderr)
        log.info(f"[verify] {'ok' if not problems else f'{len(problems)} mismatches'}")
        return EXIT_PARTIAL if problems else EXIT_OK

    if args.command == "extract":
        out = args.out or str(Path(args.dataset) / "biomarkers.csv")
        _, errors = extract_command(args.dataset, out, args.pixel_size, workers)
        return EXIT_PARTIAL if errors else EXIT_OK

    if args.command == "evaluate":
        out = args.out or "evaluation.csv"
        frame, _ = evaluate_command(args.pred, args.truth, out, seed=seed, resamples=args.resamples)
        if args.emit_plot_data:
            emit_plot_data(frame, ["dice", "iou", "precision", "recall"], args.emit_plot_data)
        return EXIT_OK

    if args.command == "report":
        report_command(args.csv, args.out or "report", args.alpha, args.resamples, seed)
        if args.emit_plot_data:
            emit_plot_data(pd.read_csv(args.csv), METRICS, args.emit_plot_data, by="tissue_class")
        return EXIT_OK

    if args.command == "sensitivity":
        sensitivity_command(args.dataset, args.out or "sensitivity.csv", args.offsets, args.pixel_size, args.limit)
        return EXIT_OK
    return EXIT_INPUT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s [%(levelname)s] %(message)s")
    try:
        return run(args)
    except NucsynthError as e:
        log.error(f"[ERROR] {e}")
        return EXIT_INPUT
    except OSError as e:
        # missing config, unreadable input or unwritable output
        log.error(f"[ERROR] {e}")
        return EXIT_INPUT
    except KeyboardInterrupt:
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
