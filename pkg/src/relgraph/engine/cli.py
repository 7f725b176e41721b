"""Command-line entry point: ``relgraph <command> ...``.

Every command writes CSV (to stdout or ``--out``) on success and exits
with status 1 on any error, 2 on bad usage.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from ..backbone import NodeGraph
from ..dataio import Manifest, SyntheticSpec, generate, read_array
from ..evalkit import DIRECTIONS, MODES, run_protocol
from ..hgam import cross_edges, local_distance, trace_path
from .checkpoint import checkpoint_save, load_model
from .config import load_config, parse_config_text, save_config
from .trainer import Trainer, write_trace

logger = logging.getLogger("relgraph")


def _writer(out):
    return csv.writer(out, lineterminator="\n")


def _load_manifest(config):
    if not config.manifest:
        raise ValueError("config has no manifest path")
    return Manifest.read(config.manifest)


def cmd_synth(args, out) -> None:
    text = Path(args.spec).read_text(encoding="utf-8") if args.spec else ""
    spec = parse_config_text(text, cls=SyntheticSpec)
    manifest = generate(spec, args.out)
    save_config(spec, Path(args.out) / "spec.txt")
    w = _writer(out)
    w.writerow(("split", "modality", "images"))
    for split in ("train", "query", "gallery"):
        for modality in ("vis", "ir"):
            w.writerow((split, modality, len(manifest.select(split, modality))))


def cmd_train(args, out) -> None:
    config = load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(config)
    train = manifest.select("train")
    save_config(config, out_dir / "config.txt")
    trainer = Trainer(config, train.load_images(), train.labels, train.modalities)
    trainer.run()
    write_trace(trainer.trace, out_dir / "trace.csv")
    checkpoint_save(out_dir / "checkpoint.rgck", trainer)
    w = _writer(out)
    w.writerow(("direction", "mode", "rank1", "mAP"))
    for direction in DIRECTIONS:
        report = run_protocol(manifest, trainer.model, direction, "global", config.eval_local_weight,
                              out_csv=out_dir / f"eval_{direction}.csv")
        w.writerow((direction, "global", repr(report.rank1), repr(report.mAP)))


def cmd_evaluate(args, out) -> None:
    config = load_config(args.config)
    model = load_model(args.checkpoint, config)
    report = run_protocol(_load_manifest(config), model, args.direction, args.mode, config.eval_local_weight)
    if args.out:
        report.write_csv(args.out)
    w = _writer(out)
    w.writerow(("rank", "cmc"))
    for k, value in enumerate(report.cmc, start=1):
        w.writerow((k, repr(float(value))))
    w.writerow(("mAP", repr(report.mAP)))


def cmd_gradcheck(args, out) -> int:
    from ..gradsuite import run_suite

    seeds = range(10) if args.seed is None else [args.seed]
    w = _writer(out)
    w.writerow(("case", "seed", "max_rel_error", "passed"))
    failed = 0
    for name, seed, err, ok in run_suite(seeds, tol=args.tol):
        w.writerow((name, seed, f"{err:.3e}", int(ok)))
        failed += not ok
    if failed:
        logger.error("%d gradient checks failed", failed)
        return 1
    return 0


def cmd_align(args, out) -> None:
    vis = read_array(args.vis).astype(np.float64)
    ir = read_array(args.ir).astype(np.float64)
    for name, arr in (("vis", vis), ("ir", ir)):
        if arr.ndim != 2:
            raise ValueError(f"{name} node graph must be 2-D (nodes, dim), got shape {arr.shape}")
    m = cross_edges(NodeGraph(vis, "vis"), NodeGraph(ir, "ir"))
    dist = float(local_distance(m).data)
    path = trace_path(m)
    w = _writer(out)
    for section, matrix in (("raw", m.raw.data), ("normalized", m.normalized.data), ("dp", m.dp)):
        for i, row in enumerate(matrix):
            w.writerow([section, i] + [repr(float(v)) for v in row])
    w.writerow(["path"] + [f"{i}:{j}" for i, j in path])
    w.writerow(["distance", repr(dist)])


def cmd_export(args, out) -> None:
    model = load_model(args.checkpoint)
    manifest = Manifest.read(args.manifest)
    feats = np.zeros((len(manifest), model.config.feat_dim), dtype=np.float32)
    modalities = manifest.modalities
    images = manifest.load_images()
    for m in ("vis", "ir"):
        mask = modalities == m
        if mask.any():
            feats[mask] = model.embed(images[mask], m)[0]
    target = open(args.out, "w", newline="") if args.out else out
    try:
        w = _writer(target)
        w.writerow(["path", "identity", "modality", "camera", "split"] + [f"f{k}" for k in range(feats.shape[1])])
        for row, f in zip(manifest.rows, feats):
            w.writerow([row.path, row.identity, row.modality, row.camera, row.split] + [repr(float(v)) for v in f])
    finally:
        if target is not out:
            target.close()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relgraph", description="Relational-graph cross-modality re-identification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic two-modality dataset")
    p.add_argument("--spec", help="key = value file overriding the generator defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and write trace.csv, config.txt, checkpoint.rgck, eval reports")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the query/gallery splits")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--direction", choices=sorted(DIRECTIONS), default="v2i")
    p.add_argument("--mode", choices=MODES, default="global")
    p.add_argument("--out", help="also write the report and its _ranks sidecar here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and loss")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("align", help="align two node graphs stored as tensor files")
    p.add_argument("--vis", required=True)
    p.add_argument("--ir", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("export-embeddings", help="global features for every manifest row")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None, stdout=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    buf = io.StringIO()
    try:
        status = args.func(args, buf) or 0
    except Exception as exc:  # every failure becomes a one-line message and exit 1
        print(f"relgraph {args.command}: error: {exc}", file=sys.stderr)
        return 1
    stdout.write(buf.getvalue())
    return status


if __name__ == "__main__":
    sys.exit(main())
