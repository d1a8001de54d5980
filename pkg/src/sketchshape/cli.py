"""Command-line entry points mirroring the HTTP service plus batch tooling."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen
from .adjacency import dendrogram_merges, hierarchical_cluster, pseudo_adjacency
from .encoders import PartDescription, SketchRaster
from .gmm import apply_edit, edit_from_dict, shape_from_json, shape_to_json
from .mesh import extract_mesh, mesh_from_obj, mesh_to_obj, sample_surface
from .metrics import chamfer, emd, fid_lite
from .model import ModelConfig, Pipeline, load_checkpoint, save_checkpoint
from .training import LossWeights, TrainConfig, evaluate, train


def _cmd_datagen(args):
    manifest = datagen.write_dataset(
        args.out, args.category, count=args.count, seed=args.seed,
        side=args.side, jitter_px=args.jitter,
    )
    print(json.dumps(manifest))


def _cmd_train(args):
    manifest, samples = datagen.load_dataset(args.data)
    config = ModelConfig(
        category=manifest["category"],
        depth=args.blocks,
        alpha=args.alpha,
        raster_side=manifest["side"],
        d_latent=manifest["d_latent"],
        use_text=not args.no_text,
        use_refine=not args.no_refine,
        text_style=args.style,
        seed=args.seed,
    )
    pipeline = Pipeline(config)
    tcfg = TrainConfig(
        batch=args.batch,
        peak_lr=args.peak_lr,
        epochs=args.epochs,
        seed=args.seed,
        weights=LossWeights(args.lambda_align, args.lambda_indiv, args.lambda_part),
        checkpoint_every=args.checkpoint_every,
    )
    history = train(pipeline, samples, tcfg, out_path=args.out, log_every=args.log_every)
    last = history[-1]
    print(json.dumps({k: last[k] for k in ("step", "total", "align", "indiv", "part")}))


def _cmd_eval(args):
    _, samples = datagen.load_dataset(args.data)
    pipeline, ckpt_hash = load_checkpoint(args.ckpt)
    report = evaluate(
        pipeline, samples, n_points=args.points, seed=args.seed,
        mesh_resolution=args.resolution, with_fid=args.fid,
    )
    report["checkpoint"] = ckpt_hash
    Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps({k: report[k] for k in ("count", "median_cd", "median_emd")}))


def _load_points(path: str, n: int, seed: int, resolution: int):
    text = Path(path).read_text()
    if path.endswith(".obj"):
        mesh = mesh_from_obj(text)
    else:
        mesh = extract_mesh(shape_from_json(text), resolution=resolution)
    return mesh, sample_surface(mesh, n=n, seed=seed)


def _cmd_metrics(args):
    mesh_a, pa = _load_points(args.a, args.points, args.seed, args.resolution)
    mesh_b, pb = _load_points(args.b, args.points, args.seed, args.resolution)
    sub = min(args.points, args.subsample)
    idx = np.random.default_rng([args.seed, 915]).choice(args.points, size=sub, replace=False)
    report = {
        "cd": chamfer(pa, pb),
        "emd": emd(pa[idx], pb[idx]),
        "fid_lite": fid_lite(mesh_a, mesh_b),
        "n": args.points,
        "seed": args.seed,
        "subsample": sub,
    }
    out = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(out + "\n")
    print(out)


def _cmd_generate(args):
    pipeline, _ = load_checkpoint(args.ckpt)
    raster = SketchRaster.from_png_bytes(Path(args.sketch).read_bytes())
    desc = None
    if args.desc:
        desc = PartDescription.from_dict(json.loads(Path(args.desc).read_text()))
    shape = pipeline.infer_shape(raster, desc)
    Path(args.out_gmm).write_text(shape_to_json(shape) + "\n")
    if args.out_obj:
        Path(args.out_obj).write_text(mesh_to_obj(extract_mesh(shape, resolution=args.resolution)))
    print(args.out_gmm)


def _cmd_edit(args):
    shape = shape_from_json(Path(args.gmm).read_text())
    script = json.loads(Path(args.script).read_text())
    for entry in script:
        shape = apply_edit(shape, edit_from_dict(entry))
    Path(args.out).write_text(shape_to_json(shape) + "\n")
    if args.obj:
        Path(args.obj).write_text(mesh_to_obj(extract_mesh(shape, resolution=args.resolution)))
    print(args.out)


def _cmd_export_obj(args):
    shape = shape_from_json(Path(args.gmm).read_text())
    Path(args.out).write_text(mesh_to_obj(extract_mesh(shape, resolution=args.resolution)))
    print(args.out)


def _cmd_cluster_dump(args):
    shape = shape_from_json(Path(args.gmm).read_text())
    adjacency = pseudo_adjacency(shape.means())
    assign = hierarchical_cluster(adjacency, args.k)
    payload = {"k": assign.k, "labels": list(assign.labels), "dendrogram": dendrogram_merges(adjacency)}
    out = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(out + "\n")
    print(out)


def _cmd_serve(args):
    import uvicorn

    from .service import create_app

    app = create_app(ckpt_path=args.ckpt)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sketchshape")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--category", default="chair", choices=sorted(datagen.TEMPLATES))
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--jitter", type=float, default=1.0)
    p.set_defaults(func=_cmd_datagen)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.8)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--style", default="single-sentence", choices=["part-type", "single-sentence", "verbose"])
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--peak-lr", type=float, default=1e-4)
    p.add_argument("--lambda-align", type=float, default=1.0)
    p.add_argument("--lambda-indiv", type=float, default=0.1)
    p.add_argument("--lambda-part", type=float, default=0.1)
    p.add_argument("--no-text", action="store_true")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--fid", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("metrics", help="compare two OBJ meshes or GMM JSON files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subsample", type=int, default=256)
    p.add_argument("--resolution", type=int, default=48)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("generate", help="run inference on one sketch PNG")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sketch", required=True)
    p.add_argument("--desc")
    p.add_argument("--out-gmm", required=True)
    p.add_argument("--out-obj")
    p.add_argument("--resolution", type=int, default=48)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("edit", help="apply an edit script to a GMM JSON file")
    p.add_argument("--gmm", required=True)
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--obj")
    p.add_argument("--resolution", type=int, default=48)
    p.set_defaults(func=_cmd_edit)

    p = sub.add_parser("export-obj", help="extract a mesh from a GMM JSON file")
    p.add_argument("--gmm", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(func=_cmd_export_obj)

    p = sub.add_parser("cluster-dump", help="dendrogram and part assignment of a GMM")
    p.add_argument("--gmm", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_cluster_dump)

    p = sub.add_parser("serve", help="run the HTTP editing service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
