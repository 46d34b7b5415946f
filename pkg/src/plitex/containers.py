"""File formats: raster container, checkpoint container, stack manifest.

Raster container (extension ``.plir``), all little-endian:

    magic   4 bytes  b"PLIR"
    version u16      currently 1
    height  u32
    width   u32
    channels u16
    dtype   u16      1 = float32, 2 = uint8
    names   channels x (u16 length + UTF-8 bytes)
    data    row-major (height, width, channels)

Checkpoint container (extension ``.plck``) stores named float32 tensors plus
a JSON metadata header:

    magic   4 bytes  b"PLCK"
    version u16      currently 1
    hdrlen  u32      length of the UTF-8 JSON header
    header  JSON     {"meta": {...}, "tensors": [{"name", "shape"}, ...]}
    data    concatenated float32 tensor payloads in header order

Stack manifests are JSON documents listing geometry and per-section raster
paths (see ``save_stack`` for the schema).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import FormatError, ShapeMismatch
from .signal import OpticsConfig, ParameterMaps

RASTER_MAGIC = b"PLIR"
CHECKPOINT_MAGIC = b"PLCK"
RASTER_VERSION = 1
CHECKPOINT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1")}
_DTYPE_CODES = {"float32": 1, "uint8": 2}


def write_raster(path, data: np.ndarray, names: Optional[List[str]] = None) -> None:
    """Write a (h, w) or (h, w, c) array as float32 or uint8 raster."""
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[..., None]
    if data.ndim != 3:
        raise ShapeMismatch("raster data must be (h, w) or (h, w, c)")
    if data.dtype == np.uint8:
        code = 2
    else:
        code = 1
        data = data.astype("<f4")
    h, w, c = data.shape
    if names is None:
        names = [f"c{i}" for i in range(c)]
    if len(names) != c:
        raise FormatError("channel name count must match channels")
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<HIIHH", RASTER_VERSION, h, w, c, code))
        for name in names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(data, dtype=_DTYPES[code]).tobytes())


def read_raster(path) -> Tuple[np.ndarray, List[str]]:
    """Read a raster container; returns ((h, w, c) array, channel names)."""
    with open(path, "rb") as fh:
        if fh.read(4) != RASTER_MAGIC:
            raise FormatError(f"{path}: not a raster container")
        version, h, w, c, code = struct.unpack("<HIIHH", fh.read(14))
        if version != RASTER_VERSION:
            raise FormatError(f"{path}: unsupported raster version {version}")
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        names = []
        for _ in range(c):
            (ln,) = struct.unpack("<H", fh.read(2))
            names.append(fh.read(ln).decode("utf-8"))
        dtype = _DTYPES[code]
        payload = fh.read(h * w * c * dtype.itemsize)
        if len(payload) != h * w * c * dtype.itemsize:
            raise FormatError(f"{path}: truncated raster payload")
        data = np.frombuffer(payload, dtype=dtype).reshape(h, w, c)
    return data, names


def write_checkpoint(path, tensors: Dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta or {}, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint container")
        version, hdrlen = struct.unpack("<HI", fh.read(6))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hdrlen).decode("utf-8"))
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            payload = fh.read(count * 4)
            if len(payload) != count * 4:
                raise FormatError(f"{path}: truncated tensor {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return tensors, header.get("meta", {})


# ---------------------------------------------------------------------------
# Stack manifests


def save_stack(stack, outdir, manifest_name: str = "manifest.json",
               splits: Optional[Dict[str, str]] = None,
               with_intensity: bool = False, angles=None) -> Path:
    """Write all section rasters plus a manifest; returns the manifest path.

    ``splits`` maps section ids to split tags.  With ``with_intensity`` the
    synthesized intensity profiles are stored alongside the parameter maps.
    """
    from .signal import synthesize_profile, DEFAULT_ANGLES

    outdir = Path(outdir)
    (outdir / "sections").mkdir(parents=True, exist_ok=True)
    angles = list(angles) if angles is not None else list(DEFAULT_ANGLES)
    entries = []
    for record in stack.sections:
        sid = record.section_id
        base = f"sections/{sid}"
        maps = record.maps
        write_raster(outdir / f"{base}_it.plir", maps.transmittance, ["transmittance"])
        write_raster(outdir / f"{base}_dir.plir", maps.direction, ["direction_deg"])
        write_raster(outdir / f"{base}_ret.plir", maps.retardation, ["retardation"])
        write_raster(outdir / f"{base}_mask.plir",
                     record.mask.astype(np.uint8) * 255, ["foreground"])
        entry = {
            "id": sid,
            "transmittance": f"{base}_it.plir",
            "direction": f"{base}_dir.plir",
            "retardation": f"{base}_ret.plir",
            "mask": f"{base}_mask.plir",
        }
        if record.displacement is not None:
            write_raster(outdir / f"{base}_dfield.plir", record.displacement, ["dx", "dy"])
            entry["displacement"] = f"{base}_dfield.plir"
        if with_intensity:
            profile = synthesize_profile(maps, angles)
            write_raster(outdir / f"{base}_int.plir",
                         np.moveaxis(profile.data, 0, -1),
                         [f"rho_{int(round(a)):03d}" for a in angles])
            entry["intensity"] = f"{base}_int.plir"
        if splits and sid in splits:
            entry["split"] = splits[sid]
        entries.append(entry)
    manifest = {
        "format": "plitex-stack",
        "version": 1,
        "pixel_size_um": stack.pixel_size_um,
        "spacing_um": stack.spacing_um,
        "incident": stack.sections[0].maps.incident,
        "angles_deg": angles,
        "sections": entries,
    }
    path = outdir / manifest_name
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("format") != "plitex-stack":
        raise FormatError(f"{path}: not a stack manifest")
    return manifest


def load_stack(path, split: Optional[str] = None):
    """Load a SectionStack from a manifest, optionally filtering a split tag."""
    from .sampling import SectionRecord, SectionStack

    path = Path(path)
    manifest = load_manifest(path)
    root = path.parent
    records = []
    incident = float(manifest.get("incident", 1.0))
    pixel_size = float(manifest["pixel_size_um"])
    shape = None
    for entry in manifest["sections"]:
        if split is not None and entry.get("split") != split:
            continue
        it, _ = read_raster(root / entry["transmittance"])
        dr, _ = read_raster(root / entry["direction"])
        rt, _ = read_raster(root / entry["retardation"])
        mk, _ = read_raster(root / entry["mask"])
        maps = ParameterMaps(it[..., 0].astype(float), dr[..., 0].astype(float),
                             rt[..., 0].astype(float), pixel_size=pixel_size,
                             incident=incident)
        if shape is None:
            shape = maps.shape
        elif maps.shape != shape:
            raise FormatError(f"section {entry['id']}: raster size differs from the stack")
        displacement = None
        if "displacement" in entry:
            df, _ = read_raster(root / entry["displacement"])
            displacement = df.astype(float)
        records.append(SectionRecord(
            maps=maps, mask=mk[..., 0] > 127, displacement=displacement,
            section_id=entry["id"]))
    if not records:
        raise FormatError(f"{path}: no sections" + (f" in split '{split}'" if split else ""))
    return SectionStack(sections=records, spacing_um=float(manifest["spacing_um"]),
                        pixel_size_um=pixel_size)


def load_intensity(path, entry_root, entry) -> Tuple[np.ndarray, np.ndarray]:
    """Intensity stack (angles, data) for one manifest section entry."""
    if "intensity" not in entry:
        raise FormatError(f"section {entry['id']} has no intensity raster")
    data, names = read_raster(Path(entry_root) / entry["intensity"])
    angles = np.array([float(n.split("_")[1]) for n in names])
    return angles, np.moveaxis(data.astype(float), -1, 0)


def optics_from_manifest(manifest: dict) -> OpticsConfig:
    raw = manifest.get("optics") or {}
    return OpticsConfig(**raw) if raw else OpticsConfig()
