"""Read-only HTTP service backing the interactive retrieval client.

The service loads a pipeline output directory (stack manifest, feature maps,
optional PCA model and cluster labels) once at startup; every response is a
pure function of that data and the request.  Query points are given in
feature-grid coordinates; responses carry heatmap PNGs (and the raw raster
container on request) per section.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from pydantic import BaseModel, Field

from .analysis import rbf_retrieve
from .containers import load_manifest, load_stack, read_checkpoint, read_raster, write_raster
from .errors import PlitexError
from .features import FeatureMap, load_feature_maps, project_map, smooth
from .render import grayscale_image, heatmap_image, label_image, to_png_bytes
from .signal import OpticsConfig, estimate_inclination, render_fom

DEFAULT_SIGMA = 3.5


class QueryPoint(BaseModel):
    section: str | int
    x: int = Field(ge=0)
    y: int = Field(ge=0)


class QueryBody(BaseModel):
    points: List[QueryPoint]
    sigma: float = Field(default=DEFAULT_SIGMA, gt=0)
    components: int = Field(default=0, ge=0)
    raw: bool = False


class Bundle:
    """Immutable data behind the service."""

    def __init__(self, root, smooth_sigma: float = 2.0):
        self.root = Path(root)
        manifest = load_manifest(self.root / "manifest.json")
        self.stack = load_stack(self.root / "manifest.json")
        self.optics = OpticsConfig(**manifest["optics"]) if manifest.get("optics") else OpticsConfig()
        self.features = load_feature_maps(self.root / "features")
        self.section_ids = [fm.section_id for fm in self.features]
        self.smooth_sigma = smooth_sigma
        self.pca = None
        self.pca_meta = None
        pca_path = self.root / "pca" / "model.plck"
        if pca_path.exists():
            from .features import PcaModel
            tensors, meta = read_checkpoint(pca_path)
            self.pca = PcaModel(mean=tensors["mean"].astype(float),
                                components=tensors["components"].astype(float),
                                explained_variance_ratio=tensors["explained_variance_ratio"].astype(float))
            self.pca_meta = meta
        self.clusters: Dict[int, np.ndarray] = {}
        cluster_dir = self.root / "clusters"
        if cluster_dir.exists():
            for sub in sorted(cluster_dir.glob("labels_*")):
                m = int(sub.name.split("_")[1])
                labels = [read_raster(sub / f"{sid}.plir")[0][..., 0].astype(int)
                          for sid in self.section_ids]
                self.clusters[m] = np.stack(labels)
        self._volume_cache: Dict[int, np.ndarray] = {}
        self.masks = np.stack([fm.mask for fm in self.features])

    def section_index(self, section: str | int) -> int:
        if isinstance(section, int):
            if not 0 <= section < len(self.section_ids):
                raise HTTPException(status_code=404, detail=f"unknown section {section}")
            return section
        try:
            return self.section_ids.index(section)
        except ValueError:
            raise HTTPException(status_code=404, detail=f"unknown section '{section}'")

    def retrieval_volume(self, components: int) -> np.ndarray:
        """PCA-projected (optional), smoothed feature volume; cached per size."""
        max_c = self.pca.k if self.pca is not None else self.features[0].channels
        c = components if 0 < components <= max_c else max_c
        if c not in self._volume_cache:
            processed = []
            for fm in self.features:
                out = project_map(fm, self.pca) if self.pca is not None else fm
                if c < out.channels:
                    out = FeatureMap(out.data[..., :c], out.mask, out.section_id,
                                     out.extractor, out.stride, out.pixel_size_um)
                processed.append(smooth(out, self.smooth_sigma))
            self._volume_cache[c] = np.stack([fm.data for fm in processed])
        return self._volume_cache[c]

    def layers(self) -> List[str]:
        base = ["transmittance", "retardation", "fom"]
        return base + [f"cluster:{m}" for m in sorted(self.clusters)]


def render_layer(bundle: Bundle, index: int, layer: str) -> bytes:
    record = bundle.stack.sections[index]
    maps = record.maps
    if layer == "transmittance":
        img = grayscale_image(maps.transmittance / maps.incident)
    elif layer == "retardation":
        img = grayscale_image(maps.retardation)
    elif layer == "fom":
        alpha = estimate_inclination(maps, bundle.optics)
        img = render_fom(maps, alpha)
    elif layer.startswith("cluster:"):
        try:
            m = int(layer.split(":", 1)[1])
        except ValueError:
            raise HTTPException(status_code=404, detail=f"unknown layer '{layer}'")
        if m not in bundle.clusters:
            raise HTTPException(status_code=404, detail=f"no clustering with {m} clusters")
        labels = bundle.clusters[m][index]
        img = label_image(labels, count=m, mask=bundle.masks[index])
    else:
        raise HTTPException(status_code=404, detail=f"unknown layer '{layer}'")
    return to_png_bytes(img)


def create_app(data_dir, smooth_sigma: float = 2.0) -> FastAPI:
    bundle = Bundle(data_dir, smooth_sigma=smooth_sigma)
    app = FastAPI(title="plitex retrieval service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.bundle = bundle

    @app.get("/api/datasets")
    def datasets():
        fm = bundle.features[0]
        h, w = bundle.stack.shape
        return [{
            "id": "default",
            "sections": bundle.section_ids,
            "layers": bundle.layers(),
            "height": h,
            "width": w,
            "feature": {"rows": fm.data.shape[0], "cols": fm.data.shape[1],
                        "channels": fm.channels, "stride": fm.stride},
            "default_sigma": DEFAULT_SIGMA,
            "components_max": bundle.pca.k if bundle.pca is not None else fm.channels,
        }]

    @app.get("/api/feature-meta")
    def feature_meta():
        fm = bundle.features[0]
        meta = {"extractor": fm.extractor, "stride": fm.stride,
                "channels": fm.channels, "smooth_sigma": bundle.smooth_sigma}
        if bundle.pca is not None:
            meta["pca"] = {
                "k": bundle.pca.k,
                "explained_variance_ratio": bundle.pca.explained_variance_ratio.tolist(),
            }
            if bundle.pca_meta:
                meta["pca"]["provenance"] = bundle.pca_meta
        return meta

    @app.get("/api/sections/{section_id}/image")
    def section_image(section_id: str, layer: str = "transmittance"):
        index = bundle.section_index(section_id)
        png = render_layer(bundle, index, layer)
        return Response(content=png, media_type="image/png")

    @app.post("/api/query")
    def query(body: QueryBody):
        if not body.points:
            raise HTTPException(status_code=400, detail="need at least one query point")
        volume = bundle.retrieval_volume(body.components)
        rows, cols = volume.shape[1:3]
        points = []
        for p in body.points:
            index = bundle.section_index(p.section)
            if p.y >= rows or p.x >= cols:
                raise HTTPException(status_code=422,
                                    detail=f"point ({p.x},{p.y}) outside the feature raster")
            points.append((index, p.y, p.x))
        try:
            affinity = rbf_retrieve(volume, bundle.masks, points, sigma=body.sigma)
        except PlitexError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        sections = []
        for s, sid in enumerate(bundle.section_ids):
            entry = {"id": sid,
                     "png": base64.b64encode(to_png_bytes(heatmap_image(affinity[s]))).decode()}
            if body.raw:
                import io
                import tempfile
                # round-trip through the container format for numeric fidelity
                with tempfile.NamedTemporaryFile(suffix=".plir") as tmp:
                    write_raster(tmp.name, affinity[s].astype(np.float32), ["affinity"])
                    entry["raw"] = base64.b64encode(Path(tmp.name).read_bytes()).decode()
            sections.append(entry)
        return {"sections": sections, "sigma": body.sigma,
                "components": int(volume.shape[-1]), "stride": bundle.features[0].stride}

    return app
