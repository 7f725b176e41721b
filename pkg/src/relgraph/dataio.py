"""Tensor files, manifests, the synthetic two-modality dataset and the P x K sampler.

Tensor file layout (little endian)::

    b"RGT1" | u8 dtype | u8 ndim | ndim x u32 extents | row-major payload

dtype 1 is float32; dtype 2 (float64) is accepted as an extension.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from .tensormath import Tensor

MAGIC = b"RGT1"
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF = {np.dtype("float32"): 1, np.dtype("float64"): 2}
MANIFEST_HEADER = ("path", "identity", "modality", "camera", "split")
SPLITS = ("train", "query", "gallery")
VIS_CAMERAS = (1, 2)
IR_CAMERA = 3


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SamplingError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tensor files

def encode_tensor(value: Union[Tensor, np.ndarray]) -> bytes:
    arr = np.asarray(value.data if isinstance(value, Tensor) else value)
    if arr.dtype not in _CODE_OF:
        arr = arr.astype(np.float32)
    code = _CODE_OF[arr.dtype]
    if arr.ndim > 255:
        raise ValueError(f"tensor has {arr.ndim} dimensions; the format allows at most 255")
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> Tuple[np.ndarray, int]:
    """Parse one tensor record starting at ``offset``; returns (array, end offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}, expected {MAGIC!r}", offset)
    if len(buf) < offset + 6:
        raise FormatError("truncated header", len(buf))
    code, ndim = struct.unpack_from("<BB", buf, offset + 4)
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", offset + 4)
    pos = offset + 6
    if len(buf) < pos + 4 * ndim:
        raise FormatError(f"truncated shape, need {ndim} extents", len(buf))
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dtype = DTYPE_CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise FormatError(f"truncated payload, need {nbytes} bytes, have {len(buf) - pos}", len(buf))
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def write_array(path, value) -> None:
    Path(path).write_bytes(encode_tensor(value))


def read_array(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())[0]


def write_tensor(path, t: Union[Tensor, np.ndarray]) -> None:
    write_array(path, t)


def read_tensor(path) -> Tensor:
    return Tensor(read_array(path))


# ---------------------------------------------------------------------------
# manifest

@dataclass(frozen=True)
class ManifestRow:
    path: str
    identity: int
    modality: str
    camera: int
    split: str


@dataclass
class Manifest:
    rows: List[ManifestRow]
    root: Path = field(default_factory=Path)

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
                raise ValueError(f"manifest header must be {','.join(MANIFEST_HEADER)}, got {reader.fieldnames}")
            rows = [
                ManifestRow(r["path"], int(r["identity"]), r["modality"], int(r["camera"]), r["split"])
                for r in reader
            ]
        return cls(rows, path.parent)

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            for r in self.rows:
                writer.writerow((r.path, r.identity, r.modality, r.camera, r.split))

    def select(self, split: Optional[str] = None, modality: Optional[str] = None) -> "Manifest":
        rows = [r for r in self.rows if (split is None or r.split == split) and (modality is None or r.modality == modality)]
        return Manifest(rows, self.root)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.identity for r in self.rows], dtype=np.int64)

    @property
    def modalities(self) -> np.ndarray:
        return np.array([r.modality for r in self.rows])

    @property
    def cameras(self) -> np.ndarray:
        return np.array([r.camera for r in self.rows], dtype=np.int64)

    def load_images(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0,), dtype=np.float32)
        return np.stack([read_array(self.root / r.path) for r in self.rows])


# ---------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    num_identities: int = 16
    images_per_modality: int = 12
    image_shape: Tuple[int, int, int] = (3, 48, 24)
    vis_seed: int = 101
    ir_seed: int = 202
    max_shift: int = 2
    noise_sigma: float = 0.1
    smoothness: float = 2.0
    ir_brightness: float = 0.5
    train_fraction: float = 2.0 / 3.0
    seed: int = 7


def modality_matrices(spec: SyntheticSpec) -> Dict[str, np.ndarray]:
    """Fixed channel-mixing matrices of the two synthetic sensors.

    The visible sensor is a perturbed identity; the infrared sensor sees
    mostly one luminance-like combination of the channels.
    """
    c = spec.image_shape[0]
    rv = np.random.default_rng(spec.vis_seed)
    vis = np.eye(c) + 0.3 * rv.standard_normal((c, c))
    ri = np.random.default_rng(spec.ir_seed)
    weights = ri.uniform(0.2, 1.0, size=c)
    weights /= np.linalg.norm(weights)
    ir = np.outer(np.ones(c), weights) * np.sqrt(c) * 0.8 + 0.2 * ri.standard_normal((c, c))
    return {"vis": vis, "ir": ir}


def _prototype(rng: np.random.Generator, shape, smoothness: float) -> np.ndarray:
    field_ = gaussian_filter(rng.standard_normal(shape), sigma=(0, smoothness, smoothness), mode="reflect")
    field_ -= field_.mean(axis=(1, 2), keepdims=True)
    field_ /= field_.std(axis=(1, 2), keepdims=True) + 1e-12
    return field_


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    if dy == 0 and dx == 0:
        return img
    m = max(abs(dy), abs(dx))
    padded = np.pad(img, ((0, 0), (m, m), (m, m)), mode="edge")
    h, w = img.shape[1:]
    return padded[:, m - dy:m - dy + h, m - dx:m - dx + w]


def render(prototype: np.ndarray, mixing: np.ndarray, offset: float, rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    img = np.tensordot(mixing, prototype, axes=1) + offset
    if spec.max_shift:
        dy, dx = rng.integers(-spec.max_shift, spec.max_shift + 1, size=2)
        img = _shift(img, int(dy), int(dx))
    if spec.noise_sigma:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return img.astype(np.float32)


def split_counts(n: int, train_fraction: float) -> Tuple[int, int, int]:
    n_train = int(round(n * train_fraction))
    rest = n - n_train
    n_query = (rest + 1) // 2
    return n_train, n_query, rest - n_query


def generate_arrays(spec: SyntheticSpec):
    """All images in memory: (images, labels, modalities, cameras, splits)."""
    if spec.num_identities < 1:
        raise ValueError("synthetic dataset needs at least one identity")
    if spec.images_per_modality < 1:
        raise ValueError("synthetic dataset needs at least one image per modality")
    mats = modality_matrices(spec)
    offsets = {"vis": 0.0, "ir": spec.ir_brightness}
    root = np.random.default_rng(spec.seed)
    n_train, n_query, _ = split_counts(spec.images_per_modality, spec.train_fraction)
    images, labels, modalities, cameras, splits = [], [], [], [], []
    for pid in range(spec.num_identities):
        proto = _prototype(root, spec.image_shape, spec.smoothness)
        for modality in ("vis", "ir"):
            for k in range(spec.images_per_modality):
                images.append(render(proto, mats[modality], offsets[modality], root, spec))
                labels.append(pid)
                modalities.append(modality)
                cameras.append(VIS_CAMERAS[k % len(VIS_CAMERAS)] if modality == "vis" else IR_CAMERA)
                splits.append("train" if k < n_train else ("query" if k < n_train + n_query else "gallery"))
    return (np.stack(images), np.array(labels), np.array(modalities), np.array(cameras), np.array(splits))


def generate(spec: SyntheticSpec, out_dir) -> Manifest:
    """Write one tensor file per image plus ``manifest.csv`` under ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    images, labels, modalities, cameras, splits = generate_arrays(spec)
    rows = []
    counter: Dict[Tuple[int, str], int] = {}
    for img, pid, modality, cam, split in zip(images, labels, modalities, cameras, splits):
        k = counter.get((pid, modality), 0)
        counter[(pid, modality)] = k + 1
        rel = f"images/{int(pid):04d}_{modality}_{k:03d}.rgt"
        write_array(out_dir / rel, img)
        rows.append(ManifestRow(rel, int(pid), str(modality), int(cam), str(split)))
    manifest = Manifest(rows, out_dir)
    manifest.write(out_dir / "manifest.csv")
    return manifest


def directory_digest(root) -> str:
    """SHA-256 over every file under ``root`` (relative path + contents, sorted)."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# sampling

@dataclass
class IdentityBatch:
    identities: np.ndarray
    vis_indices: np.ndarray
    ir_indices: np.ndarray
    vis_labels: np.ndarray
    ir_labels: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate([self.vis_indices, self.ir_indices])

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([self.vis_labels, self.ir_labels])

    @property
    def modalities(self) -> np.ndarray:
        return np.array(["vis"] * self.vis_indices.size + ["ir"] * self.ir_indices.size)

    def __len__(self) -> int:
        return self.vis_indices.size + self.ir_indices.size


class IdentitySampler:
    """Draws P identities, then K_vis visible and K_ir infrared samples of each.

    Both draws are uniform without replacement; the sequence of batches is a
    pure function of the generator state.
    """

    def __init__(self, labels, modalities, P: int, K_vis: int, K_ir: int, rng: np.random.Generator):
        labels = np.asarray(labels)
        modalities = np.asarray(modalities)
        self.P, self.K_vis, self.K_ir = P, K_vis, K_ir
        self.rng = rng
        self.identities = np.unique(labels)
        self.pools = {
            m: {int(pid): np.flatnonzero((labels == pid) & (modalities == m)) for pid in self.identities}
            for m in ("vis", "ir")
        }
        deficits = []
        for m, k in (("vis", K_vis), ("ir", K_ir)):
            for pid, pool in self.pools[m].items():
                if pool.size < k:
                    deficits.append(f"identity {pid} has {pool.size} {m} samples, needs {k}")
        eligible = [pid for pid in self.identities
                    if self.pools["vis"][int(pid)].size >= K_vis and self.pools["ir"][int(pid)].size >= K_ir]
        if len(eligible) < P:
            detail = "; ".join(deficits) if deficits else f"only {len(eligible)} identities"
            raise SamplingError(f"need {P} identities with {K_vis}+{K_ir} samples, have {len(eligible)}: {detail}")
        self.eligible = np.array(eligible)

    def sample(self) -> IdentityBatch:
        ids = self.rng.choice(self.eligible, size=self.P, replace=False)
        vis, ir = [], []
        for pid in ids:
            vis.append(self.rng.choice(self.pools["vis"][int(pid)], size=self.K_vis, replace=False))
            ir.append(self.rng.choice(self.pools["ir"][int(pid)], size=self.K_ir, replace=False))
        vis_idx = np.concatenate(vis)
        ir_idx = np.concatenate(ir)
        return IdentityBatch(
            identities=np.asarray(ids),
            vis_indices=vis_idx,
            ir_indices=ir_idx,
            vis_labels=np.repeat(ids, self.K_vis),
            ir_labels=np.repeat(ids, self.K_ir),
        )

    def __iter__(self):
        while True:
            yield self.sample()


def sample_batch(manifest: Manifest, P: int, K_vis: int, K_ir: int, rng: np.random.Generator) -> IdentityBatch:
    """One batch drawn from a manifest's rows (indices refer to ``manifest.rows``)."""
    return IdentitySampler(manifest.labels, manifest.modalities, P, K_vis, K_ir, rng).sample()
