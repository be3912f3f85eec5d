"""On-disk formats: images (PNG/PPM) and reference sets (manifest + raw grids)."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .geometry import MaskGrid, VoxelGrid
from .regularizer import ReferenceEntry, ReferenceSet

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


class ArtifactError(ValueError):
    pass


class ChecksumError(ArtifactError):
    pass


class ManifestVersionError(ArtifactError):
    pass


class GeometryMismatchError(ArtifactError):
    pass


def to_uint8(img) -> np.ndarray:
    arr = img.detach().cpu().numpy() if torch.is_tensor(img) else np.asarray(img)
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img, path) -> None:
    # fixed encoder settings keep files byte-identical across runs
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG", optimize=False, compress_level=6)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_ppm(img, path) -> None:
    arr = to_uint8(img)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def load_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ArtifactError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(fields[1]), int(fields[2])
    raw = np.frombuffer(data[pos + 1:pos + 1 + 3 * w * h], dtype=np.uint8)
    if raw.size != 3 * w * h:
        raise ArtifactError(f"{path}: truncated pixel data")
    return raw.reshape(h, w, 3).astype(np.float64) / 255.0


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_reference_set(refs: ReferenceSet, directory) -> Path:
    """Write ``manifest.json`` plus one float32 grid and one uint8 mask file per entry."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, e in enumerate(refs.entries):
        dens = e.grid.numpy()
        if not np.array_equal(dens.astype(np.float32).astype(np.float64), dens):
            raise ArtifactError(f"entry {i}: densities are not float32-representable")
        gname, mname = f"grid_{i:03d}.f32", f"mask_{i:03d}.u8"
        (out / gname).write_bytes(dens.astype("<f4").tobytes(order="C"))
        (out / mname).write_bytes(e.mask.values.astype(np.uint8).tobytes(order="C"))
        item = {"grid": gname, "mask": mname,
                "grid_sha256": _sha256(out / gname), "mask_sha256": _sha256(out / mname)}
        if e.seed is not None:
            item["seed"] = int(e.seed)
        item["latent"] = [float(v) for v in np.asarray(e.latent).ravel()]
        entries.append(item)
    manifest = {
        "version": MANIFEST_VERSION,
        "k": refs.k,
        "bounds": [list(refs.lo), list(refs.hi)],
        "iso_rule": {"percentile": refs.iso_percentile},
        "dilation": refs.dilation,
        "entries": entries,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return out


def load_reference_set(directory) -> ReferenceSet:
    src = Path(directory)
    try:
        manifest = json.loads((src / MANIFEST_NAME).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ArtifactError(f"no {MANIFEST_NAME} in {src}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise ManifestVersionError(f"manifest version {manifest.get('version')!r}, expected {MANIFEST_VERSION}")
    k = int(manifest["k"])
    lo, hi = (tuple(float(v) for v in b) for b in manifest["bounds"])
    entries = []
    for i, item in enumerate(manifest["entries"]):
        label = f"entry {i} (seed {item.get('seed')})"
        for key in ("grid", "mask"):
            path = src / item[key]
            if not path.exists():
                raise ArtifactError(f"{label}: missing {item[key]}")
            if _sha256(path) != item[f"{key}_sha256"]:
                raise ChecksumError(f"{label}: checksum mismatch for {item[key]}")
        graw = (src / item["grid"]).read_bytes()
        mraw = (src / item["mask"]).read_bytes()
        if len(graw) != 4 * k**3 or len(mraw) != k**3:
            raise GeometryMismatchError(f"{label}: file sizes do not match k = {k}")
        dens = np.frombuffer(graw, dtype="<f4").astype(np.float64).reshape(k, k, k)
        mask = np.frombuffer(mraw, dtype=np.uint8).reshape(k, k, k).astype(bool)
        grid = VoxelGrid(k, lo, hi, torch.as_tensor(dens))
        entries.append(ReferenceEntry(np.asarray(item["latent"], dtype=np.float64), grid,
                                      MaskGrid(k, lo, hi, mask), item.get("seed")))
    if not entries:
        raise ArtifactError("manifest lists no entries")
    return ReferenceSet(entries, float(manifest["iso_rule"]["percentile"]), int(manifest["dilation"]))
