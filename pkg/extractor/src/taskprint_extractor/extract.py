"""Sample images with replacement, augment, and run a TorchScript backbone.

The backbone is pluggable: any exported TorchScript module mapping
(B, 3, H, W) float tensors to (B, feature_width) activations. Fingerprint
provenance is recorded as the model file's hash prefix in extractor_id.
The output file uses the FEATM1 format consumed by `taskprint fingerprint`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger("taskprint_extractor")

FEATURE_MAGIC = b"FEATM1"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}

# normalization statistics of the reference backbone's training corpus
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class TaskManifest:
    task_id: str
    images: list[str] = field(default_factory=list)
    folder: str | None = None
    n_samples: int = 10_000
    seed: int = 0
    crop_size: int = 224
    resize_to: int = 256
    model: str = ""
    model_sha256: str | None = None
    feature_width: int = 512
    augment: bool = True
    flip_probability: float = 0.5
    normalize_mean: tuple = IMAGENET_MEAN
    normalize_std: tuple = IMAGENET_STD
    batch_size: int = 128
    threads: int = 1

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not (0 < self.crop_size <= self.resize_to):
            raise ValueError(
                f"crop_size must be in (0, {self.resize_to}], got {self.crop_size}"
            )
        if not self.images and not self.folder:
            raise ValueError("manifest needs image paths or a folder")

    @classmethod
    def from_json(cls, path) -> "TaskManifest":
        doc = json.loads(Path(path).read_text())
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown manifest fields: {sorted(unknown)}")
        return cls(**doc)

    def image_paths(self) -> list[Path]:
        paths = [Path(p) for p in self.images]
        if self.folder:
            paths.extend(
                p for p in sorted(Path(self.folder).iterdir())
                if p.suffix.lower() in IMAGE_SUFFIXES
            )
        if not paths:
            raise ValueError("no images found")
        return paths


def write_feature_matrix(values: np.ndarray, extractor_id: str, path) -> None:
    """FEATM1: magic, u32 n, u32 m, u16-prefixed extractor id, n*m f32."""
    n, m = values.shape
    ident = extractor_id.encode("utf-8")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", n, m))
        f.write(struct.pack("<H", len(ident)) + ident)
        f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def model_hash_prefix(model_path, length: int = 12) -> str:
    digest = hashlib.sha256(Path(model_path).read_bytes()).hexdigest()
    return f"sha256:{digest[:length]}"


def _load_image(path: Path, resize_to: int) -> np.ndarray:
    """Decode to RGB (greyscale replicated), shorter side resized to resize_to."""
    from PIL import Image

    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        scale = resize_to / min(w, h)
        new_size = (max(resize_to, round(w * scale)), max(resize_to, round(h * scale)))
        img = img.resize(new_size, Image.BILINEAR)
        return np.asarray(img, dtype=np.float32) / 255.0  # (H, W, 3)


def _load_backbone(manifest: TaskManifest):
    import torch

    if not manifest.model:
        raise ValueError("manifest does not name a backbone model file")
    if manifest.model_sha256 is not None:
        actual = hashlib.sha256(Path(manifest.model).read_bytes()).hexdigest()
        if actual != manifest.model_sha256:
            raise ValueError(
                f"model hash mismatch: manifest pins {manifest.model_sha256}, file is {actual}"
            )
    model = torch.jit.load(manifest.model, map_location="cpu")
    model.eval()
    return model


def extract_features(manifest: TaskManifest, out_path) -> np.ndarray:
    """Draw n_samples augmented crops, run the backbone, write FEATM1.

    Deterministic under (seed, model file, image set): all sampling and
    augmentation draws come from one seeded generator, decoded images are
    cached, and inference runs single-threaded unless configured otherwise.
    """
    import torch

    torch.set_num_threads(manifest.threads)
    model = _load_backbone(manifest)
    rng = np.random.default_rng(manifest.seed)

    paths = manifest.image_paths()
    cache: dict[int, np.ndarray] = {}
    broken: set[int] = set()
    skipped = 0

    def image(idx: int) -> np.ndarray | None:
        if idx in broken:
            return None
        if idx not in cache:
            try:
                cache[idx] = _load_image(paths[idx], manifest.resize_to)
            except Exception as e:  # undecodable image: warn, resample
                log.warning("skipping undecodable image %s (%s)", paths[idx], e)
                broken.add(idx)
                return None
        return cache[idx]

    mean = np.asarray(manifest.normalize_mean, dtype=np.float32)
    std = np.asarray(manifest.normalize_std, dtype=np.float32)
    crop = manifest.crop_size

    def next_sample() -> np.ndarray:
        nonlocal skipped
        while True:
            idx = int(rng.integers(0, len(paths)))
            arr = image(idx)
            if arr is None:
                skipped += 1
                if len(broken) == len(paths):
                    raise ValueError("no decodable images in the task")
                continue
            h, w = arr.shape[:2]
            if manifest.augment:
                top = int(rng.integers(0, h - crop + 1))
                left = int(rng.integers(0, w - crop + 1))
                flip = bool(rng.random() < manifest.flip_probability)
            else:
                top, left, flip = (h - crop) // 2, (w - crop) // 2, False
            patch = arr[top : top + crop, left : left + crop]
            if flip:
                patch = patch[:, ::-1]
            patch = (patch - mean) / std
            return np.moveaxis(patch, -1, 0)

    # stream batches: a full sample tensor for n=10,000 would not fit in memory
    outputs = []
    remaining = manifest.n_samples
    batch_buf = np.empty((manifest.batch_size, 3, crop, crop), dtype=np.float32)
    with torch.inference_mode():
        while remaining > 0:
            size = min(manifest.batch_size, remaining)
            for i in range(size):
                batch_buf[i] = next_sample()
            out = model(torch.from_numpy(batch_buf[:size].copy()))
            if out.ndim != 2:
                raise ValueError(f"backbone returned shape {tuple(out.shape)}, expected (B, m)")
            outputs.append(out.numpy().astype(np.float32))
            remaining -= size
    if skipped:
        log.warning("resampled %d draws that hit undecodable images", skipped)
    features = np.concatenate(outputs, axis=0)
    if features.shape[1] != manifest.feature_width:
        raise ValueError(
            f"backbone emits {features.shape[1]} features, manifest declares {manifest.feature_width}"
        )
    if not np.isfinite(features).all():
        raise ValueError("backbone produced non-finite activations")

    write_feature_matrix(features, model_hash_prefix(manifest.model), out_path)
    return features
