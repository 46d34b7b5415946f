"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error.  All commands operate on
a shared directory layout rooted at a stack manifest:

    out/
      manifest.json             stack manifest (synth, recover)
      sections/*.plir           parameter-map rasters
      truth/*.plir              phantom ground truth (synth)
      checkpoints/*.plck        training checkpoints (train)
      features/<name>/          feature maps + meta.json (features, embed)
      pca/model.plck            PCA model (pca)
      clusters/                 label volumes, dendrogram, silhouettes (cluster)
      retrieval/                affinity rasters and heatmaps (retrieve)
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .analysis import (ClusterModel, assign, cross_section_iou, cut,
                       evaluate_probe_classifier, evaluate_probe_regressor,
                       fit_probe_classifier, fit_probe_regressor, kmeans,
                       rbf_retrieve, silhouette, ward_agglomerate)
from .augment import AugmentationSpec, sample_augmentation
from .containers import (load_manifest, load_stack, optics_from_manifest,
                         read_checkpoint, read_raster, write_checkpoint, write_raster)
from .engine import (EncoderConfig, TrainConfig, embed, load_train_state,
                     save_train_state, train)
from .errors import DataError, PlitexError
from .features import (FeatureMap, classical_feature_map, collect_foreground,
                       fit_pca, load_feature_maps, PcaModel, project_map,
                       save_feature_maps, smooth)
from .phantoms import PhantomSpec, generate
from .render import grayscale_image, heatmap_image, label_image, to_png_bytes
from .sampling import PairSpec
from .signal import ParameterMaps, estimate_inclination, recover_maps, render_fom


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_features(path) -> list:
    maps = load_feature_maps(path)
    if not maps:
        raise DataError(f"{path}: empty feature directory")
    return maps


def _load_pca(path) -> PcaModel:
    tensors, meta = read_checkpoint(path)
    if meta.get("kind") != "pca":
        raise DataError(f"{path}: not a PCA model")
    return PcaModel(mean=tensors["mean"].astype(float),
                    components=tensors["components"].astype(float),
                    explained_variance_ratio=tensors["explained_variance_ratio"].astype(float),
                    rank_deficient=bool(meta.get("rank_deficient", False)))


def _save_pca(path, model: PcaModel) -> None:
    write_checkpoint(path, {
        "mean": model.mean, "components": model.components,
        "explained_variance_ratio": model.explained_variance_ratio,
    }, {"kind": "pca", "k": model.k, "rank_deficient": model.rank_deficient})


def _prepare_retrieval_volume(fmaps, pca_model, components, smooth_sigma):
    processed = []
    for fm in fmaps:
        out = fm
        if pca_model is not None:
            out = project_map(out, pca_model)
            if components and components < out.channels:
                out = FeatureMap(out.data[..., :components], out.mask, out.section_id,
                                 out.extractor, out.stride, out.pixel_size_um)
        if smooth_sigma > 0:
            out = smooth(out, smooth_sigma)
        processed.append(out)
    volume = np.stack([fm.data for fm in processed])
    masks = np.stack([fm.mask for fm in processed])
    return volume, masks, processed


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args):
    spec = PhantomSpec.from_json(Path(args.spec).read_text())
    stack, truth = generate(spec)
    outdir = Path(args.out)
    from .containers import save_stack
    save_stack(stack, outdir, with_intensity=not args.no_intensity)
    truth_dir = outdir / "truth"
    truth_dir.mkdir(exist_ok=True)
    write_raster(truth_dir / "label.plir", truth.label.astype(np.float32), ["label"])
    write_raster(truth_dir / "cortical_depth.plir",
                 truth.cortical_depth.astype(np.float32), ["depth"])
    write_raster(truth_dir / "wm_depth_mm.plir", truth.wm_depth_mm.astype(np.float32), ["wm_depth"])
    write_raster(truth_dir / "obliqueness_deg.plir",
                 truth.obliqueness_deg.astype(np.float32), ["obliqueness"])
    (truth_dir / "regions.json").write_text(json.dumps(
        {str(k): v for k, v in truth.region_names.items()}, indent=2))
    print(f"wrote {len(stack.sections)} sections to {outdir}")
    return 0


def cmd_recover(args):
    manifest = load_manifest(args.stack)
    root = Path(args.stack).parent
    outdir = Path(args.out)
    (outdir / "sections").mkdir(parents=True, exist_ok=True)
    incident = float(manifest.get("incident", 1.0))
    entries = []
    for entry in manifest["sections"]:
        from .containers import load_intensity
        angles, data = load_intensity(args.stack, root, entry)
        from .signal import IntensityStack
        maps = recover_maps(IntensityStack(angles, data), incident=incident,
                            pixel_size=float(manifest["pixel_size_um"]))
        sid = entry["id"]
        base = f"sections/{sid}"
        write_raster(outdir / f"{base}_it.plir", maps.transmittance, ["transmittance"])
        write_raster(outdir / f"{base}_dir.plir", maps.direction, ["direction_deg"])
        write_raster(outdir / f"{base}_ret.plir", maps.retardation, ["retardation"])
        mask, _ = read_raster(root / entry["mask"])
        write_raster(outdir / f"{base}_mask.plir", mask[..., 0].astype(np.uint8), ["foreground"])
        new_entry = {"id": sid, "transmittance": f"{base}_it.plir",
                     "direction": f"{base}_dir.plir", "retardation": f"{base}_ret.plir",
                     "mask": f"{base}_mask.plir"}
        if "displacement" in entry:
            df, names = read_raster(root / entry["displacement"])
            write_raster(outdir / f"{base}_dfield.plir", df, names)
            new_entry["displacement"] = f"{base}_dfield.plir"
        if "split" in entry:
            new_entry["split"] = entry["split"]
        entries.append(new_entry)
    new_manifest = dict(manifest)
    new_manifest["sections"] = entries
    (outdir / "manifest.json").write_text(json.dumps(new_manifest, indent=2))
    print(f"recovered {len(entries)} sections into {outdir}")
    return 0


def cmd_augment(args):
    data, names = read_raster(args.input)
    if data.shape[2] != 3:
        raise DataError("augment expects a 3-channel raster (transmittance, direction, retardation)")
    if data.shape[0] != data.shape[1]:
        raise DataError("augment expects a square patch")
    spec = AugmentationSpec.from_json(Path(args.aug).read_text())
    if spec.patch_size != data.shape[0]:
        raise DataError(f"augmentation spec expects {spec.patch_size} px patches, "
                        f"got {data.shape[0]}")
    maps = ParameterMaps(data[..., 0].astype(float), data[..., 1].astype(float),
                         data[..., 2].astype(float))
    chain = sample_augmentation(spec, np.random.default_rng(args.seed))
    out = chain.apply(maps)
    stacked = np.stack([out.transmittance, out.direction, out.retardation], axis=-1)
    write_raster(args.out, stacked.astype(np.float32), list(names))
    print(f"augmented patch written to {args.out}")
    return 0


def cmd_features(args):
    stack = load_stack(args.stack)
    fmaps = []
    if args.method == "encoder":
        if not args.ckpt:
            raise DataError("--ckpt is required for the encoder extractor")
        state = load_train_state(args.ckpt)
        for record in stack.sections:
            fmaps.append(embed(record.maps, state, tile=args.tile, overlap=args.overlap,
                               mask=record.mask, section_id=record.section_id))
    else:
        for record in stack.sections:
            fmaps.append(classical_feature_map(record.maps, args.method, tile=args.tile,
                                               stride=args.tile // 2, mask=record.mask,
                                               section_id=record.section_id))
    save_feature_maps(args.out, fmaps)
    print(f"wrote {len(fmaps)} feature maps ({fmaps[0].channels} channels) to {args.out}")
    return 0


def cmd_train(args):
    config = json.loads(Path(args.config).read_text()) if args.config else {}
    encoder = EncoderConfig.from_dict(config.get("encoder", {}))
    train_cfg = TrainConfig.from_dict(config.get("train", {}))
    aug_raw = config.get("augmentation")
    aug = (AugmentationSpec.from_json(json.dumps(aug_raw)) if aug_raw
           else AugmentationSpec())
    pair = PairSpec(mode=args.mode, radius_um=args.radius,
                    patch_side=config.get("patch_side", aug.patch_size))
    stack = load_stack(args.stack)
    t0 = time.time()
    state, history = train(stack, pair, aug, encoder, train_cfg,
                           log_every=args.log_every)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_train_state(args.out, state, {"mode": args.mode, "radius_um": args.radius,
                                       "history_val": history["val_loss"]})
    print(f"trained {state.steps} steps in {time.time() - t0:.1f}s; "
          f"final loss {history['train_loss'][-1]:.4f} -> {args.out}")
    return 0


def cmd_embed(args):
    state = load_train_state(args.ckpt)
    stack = load_stack(args.stack)
    fmaps = [embed(rec.maps, state, tile=args.tile, overlap=args.overlap,
                   mask=rec.mask, section_id=rec.section_id)
             for rec in stack.sections]
    save_feature_maps(args.out, fmaps)
    print(f"embedded {len(fmaps)} sections ({fmaps[0].channels} channels) to {args.out}")
    return 0


def cmd_pca(args):
    fmaps = _load_features(args.features)
    samples = collect_foreground(fmaps)
    model = fit_pca(samples, args.k, max_samples=args.max_samples, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    _save_pca(args.out, model)
    ratios = ", ".join(f"{r:.3f}" for r in model.explained_variance_ratio)
    print(f"PCA with {model.k} components (ratios: {ratios}) -> {args.out}")
    return 0


def cmd_cluster(args):
    fmaps = _load_features(args.features)
    pca_model = _load_pca(args.pca) if args.pca else None
    volume, masks, processed = _prepare_retrieval_volume(
        fmaps, pca_model, args.components, args.smooth_sigma)
    samples = collect_foreground(processed)
    rng = np.random.default_rng(args.seed)
    if samples.shape[0] > args.subsample:
        samples_fit = samples[rng.choice(samples.shape[0], args.subsample, replace=False)]
    else:
        samples_fit = samples
    model = kmeans(samples_fit, args.kmeans, seed=args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_checkpoint(outdir / "kmeans.plck", {"centroids": model.centroids},
                     {"kind": "kmeans", "k": model.k})
    labels_by_section = [assign(fm.data.reshape(-1, fm.data.shape[-1]), model)
                         .reshape(fm.data.shape[:2]) for fm in processed]
    dendro = ward_agglomerate(model.centroids)
    (outdir / "dendrogram.txt").write_text(dendro.to_text())
    cuts = [int(c) for c in args.cuts.split(",")] if args.cuts else []
    silhouettes = {}
    all_labels = np.stack(labels_by_section)
    for m in [args.kmeans] + cuts:
        if m == args.kmeans:
            merged = all_labels
        else:
            mapping = cut(dendro, m)
            merged = mapping[all_labels]
        subdir = outdir / f"labels_{m}"
        subdir.mkdir(exist_ok=True)
        for fm, lab in zip(processed, merged):
            write_raster(subdir / f"{fm.section_id}.plir", lab.astype(np.float32), ["label"])
        flat = samples
        flat_labels = np.concatenate([lab[fm.mask] for fm, lab in zip(processed, merged)])
        try:
            silhouettes[str(m)] = silhouette(flat, flat_labels, subsample=args.subsample_silhouette,
                                             seed=args.seed)
        except DataError:
            silhouettes[str(m)] = None
    for fm in processed:
        write_raster(outdir / f"mask_{fm.section_id}.plir",
                     fm.mask.astype(np.uint8) * 255, ["foreground"])
    (outdir / "meta.json").write_text(json.dumps(
        {"kmeans": args.kmeans, "cuts": cuts, "silhouettes": silhouettes,
         "sections": [fm.section_id for fm in processed]}, indent=2))
    print(f"clustered into {args.kmeans} base clusters, cuts {cuts} -> {outdir}")
    return 0


def cmd_iou(args):
    root = Path(args.labels)
    meta = json.loads((root / "meta.json").read_text())
    sections = meta["sections"]
    masks = np.stack([read_raster(root / f"mask_{sid}.plir")[0][..., 0] > 127
                      for sid in sections])
    report = {}
    for sub in sorted(root.glob("labels_*")):
        m = sub.name.split("_")[1]
        labels = np.stack([read_raster(sub / f"{sid}.plir")[0][..., 0].astype(int)
                           for sid in sections])
        report[m] = cross_section_iou(labels, masks)
    for m, value in sorted(report.items(), key=lambda kv: int(kv[0])):
        print(f"clusters={m}: mean IoU {value:.1f}%")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    return 0


def _feature_truth_labels(fmaps, truth_raster):
    """Ground-truth labels at feature-grid centers."""
    labels = []
    for fm in fmaps:
        stride, tile_half = fm.stride, fm.stride  # centers at stride*i + tile/2; tile=2*stride at 50% overlap
        rows, cols = fm.data.shape[:2]
        yy = (np.arange(rows) * stride + tile_half).astype(int)
        xx = (np.arange(cols) * stride + tile_half).astype(int)
        yy = np.minimum(yy, truth_raster.shape[0] - 1)
        xx = np.minimum(xx, truth_raster.shape[1] - 1)
        labels.append(truth_raster[np.ix_(yy, xx)])
    return np.stack(labels)


def cmd_probe(args):
    fmaps = _load_features(args.features)
    truth, _ = read_raster(args.labels)
    truth = truth[..., 0]
    volume = np.stack([fm.data for fm in fmaps])
    masks = np.stack([fm.mask for fm in fmaps])
    targets = _feature_truth_labels(fmaps, truth)
    x = volume[masks]
    y = targets[masks]
    rng = np.random.default_rng(args.seed)
    n = x.shape[0]
    test = np.zeros(n, dtype=bool)
    test[rng.choice(n, size=max(1, int(n * args.test_fraction)), replace=False)] = True
    if args.kind == "classify":
        y = y.astype(int)
        from .analysis import subsample_per_class
        idx = subsample_per_class(y[~test], args.n_per_class, rng) if args.n_per_class else None
        x_train = x[~test][idx] if idx is not None else x[~test]
        y_train = y[~test][idx] if idx is not None else y[~test]
        model = fit_probe_classifier(x_train, y_train, l2=args.l2)
        score = evaluate_probe_classifier(model, x[test], y[test])
        print(f"macro F1: {score:.4f}")
    else:
        keep_train = ~test & np.isfinite(y)
        keep_test = test & np.isfinite(y)
        if keep_train.sum() < 2 or keep_test.sum() < 1:
            raise DataError("not enough finite regression targets")
        model = fit_probe_regressor(x[keep_train], y[keep_train], l2=args.l2)
        score = evaluate_probe_regressor(model, x[keep_test], y[keep_test])
        print(f"R^2: {score:.4f}")
    return 0


def cmd_retrieve(args):
    fmaps = _load_features(args.features)
    pca_model = _load_pca(args.pca) if args.pca else None
    volume, masks, processed = _prepare_retrieval_volume(
        fmaps, pca_model, args.components, args.smooth_sigma)
    points_doc = json.loads(Path(args.points).read_text())
    ids = [fm.section_id for fm in processed]
    points = []
    for p in points_doc["points"]:
        section = p["section"]
        s = ids.index(section) if isinstance(section, str) else int(section)
        points.append((s, int(p["y"]), int(p["x"])))
    affinity = rbf_retrieve(volume, masks, points, sigma=args.sigma)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for s, fm in enumerate(processed):
        write_raster(outdir / f"{fm.section_id}_affinity.plir",
                     affinity[s].astype(np.float32), ["affinity"])
        png = to_png_bytes(heatmap_image(affinity[s]))
        (outdir / f"{fm.section_id}_affinity.png").write_bytes(png)
    print(f"wrote affinity maps for {len(processed)} sections to {outdir}")
    return 0


def cmd_serve(args):
    import uvicorn
    from .service import create_app

    app = create_app(args.data)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="plitex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a phantom stack")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-intensity", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("recover", help="recover parameter maps from intensities")
    p.add_argument("--stack", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("augment", help="apply a sampled augmentation chain")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--aug", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("features", help="sliding-window feature maps")
    p.add_argument("--method", required=True,
                   choices=["hist", "lbp", "glcm", "combined", "encoder"])
    p.add_argument("--stack", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=128)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--ckpt")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="contrastive training")
    p.add_argument("--stack", required=True)
    p.add_argument("--mode", required=True, choices=["same", "cl2d", "cl3d", "nn"])
    p.add_argument("--radius", type=float, default=118.0)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="sliding-window encoder features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--stack", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=128)
    p.add_argument("--overlap", type=float, default=0.5)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("pca", help="fit a PCA model on feature maps")
    p.add_argument("--features", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("cluster", help="two-step clustering with dendrogram")
    p.add_argument("--features", required=True)
    p.add_argument("--kmeans", type=int, default=128)
    p.add_argument("--cuts", default="3,7,14")
    p.add_argument("--out", required=True)
    p.add_argument("--pca")
    p.add_argument("--components", type=int, default=0)
    p.add_argument("--smooth-sigma", type=float, default=1.0)
    p.add_argument("--subsample", type=int, default=100_000)
    p.add_argument("--subsample-silhouette", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("iou", help="cross-section consistency report")
    p.add_argument("--labels", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_iou)

    p = sub.add_parser("probe", help="linear probes on feature maps")
    p.add_argument("kind", choices=["classify", "regress"])
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True, help="ground-truth raster container")
    p.add_argument("--n-per-class", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.5)
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("retrieve", help="RBF affinity retrieval")
    p.add_argument("--features", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--sigma", type=float, default=3.5)
    p.add_argument("--out", required=True)
    p.add_argument("--pca")
    p.add_argument("--components", type=int, default=0)
    p.add_argument("--smooth-sigma", type=float, default=2.0)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--data", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PlitexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
