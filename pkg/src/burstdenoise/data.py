"""RAW image representation, file formats, and dataset ingestion.

The working representation everywhere is packed Bayer: a 2H x 2W RGGB
mosaic rearranged into a 1 x 4 x H x W tensor with channel order
R, G1, G2, B and values in [0, 1]. Demosaicing exists only for PNG
visualization and never feeds losses or metrics.

.ten file format: magic b"TEN1", four 32-bit little-endian unsigned
extents (N, C, H, W), then N*C*H*W float64 little-endian values in
row-major N, C, H, W order.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .autodiff import Tensor
from .errors import DataError, ShapeError

TEN_MAGIC = b"TEN1"
_TEN_HEADER = struct.Struct("<4sIIII")


# ---------------------------------------------------------------------------
# .ten tensor files
# ---------------------------------------------------------------------------


def write_ten(path, array):
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
    if arr.ndim != 4:
        raise ShapeError(f"write_ten: need a 4-D array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_TEN_HEADER.pack(TEN_MAGIC, *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def read_ten(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_TEN_HEADER.size)
        if len(head) < _TEN_HEADER.size:
            raise DataError(f"{path}: truncated header ({len(head)} of {_TEN_HEADER.size} bytes)")
        magic, n, c, h, w = _TEN_HEADER.unpack(head)
        if magic != TEN_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {TEN_MAGIC!r}")
        expected = n * c * h * w * 8
        payload = fh.read()
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for extents ({n}, {c}, {h}, {w})"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(n, c, h, w).astype(np.float64)


def ten_shape(path):
    """Read only the header extents of a .ten file."""
    with open(path, "rb") as fh:
        head = fh.read(_TEN_HEADER.size)
    if len(head) < _TEN_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, n, c, h, w = _TEN_HEADER.unpack(head)
    if magic != TEN_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    return (n, c, h, w)


# ---------------------------------------------------------------------------
# RawImage
# ---------------------------------------------------------------------------


@dataclass
class RawImage:
    """A packed-Bayer frame: 1 x 4 x H x W tensor with values in [0, 1]."""

    tensor: Tensor
    source_id: str = ""

    def __post_init__(self):
        n, c, h, w = self.tensor.shape
        if n != 1 or c != 4:
            raise ShapeError(f"RawImage needs shape (1, 4, H, W), got {self.tensor.shape}")

    @property
    def array(self) -> np.ndarray:
        return self.tensor.data


def make_raw(array, source_id="") -> tuple[RawImage, int]:
    """Build a RawImage, clamping into [0, 1]; returns (image, clamped count)."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    clipped = int(np.count_nonzero((arr < 0.0) | (arr > 1.0)))
    if clipped:
        arr = np.clip(arr, 0.0, 1.0)
    return RawImage(Tensor(arr), source_id=source_id), clipped


def as_tensor(x) -> Tensor:
    return x.tensor if isinstance(x, RawImage) else x


def to_array(x) -> np.ndarray:
    """Coerce a RawImage, Tensor, or array-like to a float64 ndarray."""
    if isinstance(x, RawImage):
        return x.tensor.data
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Bayer packing (RGGB phase)
# ---------------------------------------------------------------------------


def pack_bayer(mosaic) -> np.ndarray:
    """1 x 1 x 2H x 2W RGGB mosaic -> 1 x 4 x H x W planes (R, G1, G2, B).

    R sits at even rows/even cols, G1 even/odd, G2 odd/even, B odd/odd.
    """
    arr = np.asarray(mosaic, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[1] != 1:
        raise ShapeError(f"pack_bayer: need a 1 x 1 x 2H x 2W mosaic, got {arr.shape}")
    h2, w2 = arr.shape[2], arr.shape[3]
    if h2 % 2 or w2 % 2:
        raise ShapeError(f"pack_bayer: mosaic extents must be even, got {h2}x{w2}")
    m = arr[0, 0]
    return np.stack(
        [m[0::2, 0::2], m[0::2, 1::2], m[1::2, 0::2], m[1::2, 1::2]], axis=0
    )[None]


def unpack_bayer(packed) -> np.ndarray:
    """Inverse of pack_bayer: 1 x 4 x H x W -> 1 x 1 x 2H x 2W."""
    arr = np.asarray(packed, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[1] != 4:
        raise ShapeError(f"unpack_bayer: need 1 x 4 x H x W, got {arr.shape}")
    _, _, h, w = arr.shape
    out = np.empty((1, 1, 2 * h, 2 * w), dtype=np.float64)
    out[0, 0, 0::2, 0::2] = arr[0, 0]
    out[0, 0, 0::2, 1::2] = arr[0, 1]
    out[0, 0, 1::2, 0::2] = arr[0, 2]
    out[0, 0, 1::2, 1::2] = arr[0, 3]
    return out


# ---------------------------------------------------------------------------
# PNG visualization (naive demosaic; display only)
# ---------------------------------------------------------------------------


def demosaic_rgb(packed) -> np.ndarray:
    """Per 2x2 site: (R, (G1+G2)/2, B) -> H x W x 3 floats."""
    arr = np.asarray(packed, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[1] != 4:
        raise ShapeError(f"demosaic_rgb: need (1, 4, H, W), got {arr.shape}")
    r, g1, g2, b = arr[0]
    return np.stack([r, (g1 + g2) / 2.0, b], axis=-1)


def to_png(image: RawImage, path) -> int:
    """Write an 8-bit RGB PNG; returns the count of out-of-range values clamped.

    Scaling is round-half-up on value*255 after clamping to [0, 1].
    """
    rgb = demosaic_rgb(image.array)
    if not np.isfinite(rgb).all():
        raise DataError(f"to_png: non-finite pixel values in {image.source_id or 'image'}")
    clamped = int(np.count_nonzero((rgb < 0.0) | (rgb > 1.0)))
    rgb = np.clip(rgb, 0.0, 1.0)
    quantized = np.floor(rgb * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")
    return clamped


# ---------------------------------------------------------------------------
# Dataset ingestion
# ---------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    """Split lists plus the parameters that produced them."""

    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    seed: int = 0
    created: str = ""

    def all_files(self):
        return list(self.train) + list(self.val) + list(self.test)


def write_manifest(path, manifest: DatasetManifest):
    with open(path, "w") as fh:
        fh.write("format_version=1\n")
        fh.write(f"seed={manifest.seed}\n")
        fh.write(f"created={manifest.created}\n")
        for k, v in sorted(manifest.params.items()):
            fh.write(f"param.{k}={v}\n")
        for split in ("train", "val", "test"):
            for name in getattr(manifest, split):
                fh.write(f"{split} {name}\n")


def read_manifest(path) -> DatasetManifest:
    m = DatasetManifest()
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line and " " not in line.split("=", 1)[0]:
                key, value = line.split("=", 1)
                if key == "seed":
                    m.seed = int(value)
                elif key == "created":
                    m.created = value
                elif key == "format_version":
                    if value != "1":
                        raise DataError(f"{path}: unsupported manifest version {value}")
                elif key.startswith("param."):
                    m.params[key[len("param."):]] = value
                continue
            split, _, name = line.partition(" ")
            if split not in ("train", "val", "test") or not name:
                raise DataError(f"{path}: unparseable manifest line {line!r}")
            getattr(m, split).append(name)
    return m


def validate_manifest(manifest_dir, manifest: DatasetManifest):
    """Check every listed file exists and all shapes agree; returns the shape."""
    shape = None
    for name in manifest.all_files():
        path = os.path.join(manifest_dir, name)
        if not os.path.exists(path):
            raise DataError(f"manifest lists missing file {name}")
        s = ten_shape(path)
        if shape is None:
            shape = s
        elif s != shape:
            raise DataError(f"{name}: shape {s} differs from dataset shape {shape}")
    return shape


def _load_mosaic(path) -> np.ndarray:
    """Read a grayscale mosaic from PNG (8/16-bit) or a 1x1xHxW .ten file."""
    if path.endswith(".ten"):
        arr = read_ten(path)
        if arr.shape[0] != 1 or arr.shape[1] != 1:
            raise DataError(f"{path}: expected a 1 x 1 x H x W mosaic, got {arr.shape}")
        return arr
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("I", "I;16", "I;16B"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            elif img.mode == "L":
                arr = np.asarray(img, dtype=np.float64) / 255.0
            else:
                arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"{path}: unreadable image ({exc})")
    return arr[None, None]


def ingest_dataset(image_dir, out_dir, patch=64, split=0.8, seed=0) -> DatasetManifest:
    """Cut mosaics into packed patches, split by file, write .ten files + manifest.

    ``patch`` is the packed patch size and must be a multiple of 4 (one Haar
    level plus two stride-2 stages downstream). Each source file is
    center-cropped to multiples of 2*patch in the mosaic domain, tiled,
    packed, and normalized to [0, 1]. Files are shuffled with the seed and
    split 80/20 (or as given) into train/test; unreadable files are skipped
    and counted.
    """
    if patch % 4 != 0 or patch <= 0:
        raise DataError(f"patch size must be a positive multiple of 4, got {patch}")
    if not 0.0 < split < 1.0:
        raise DataError(f"split fraction must be in (0, 1), got {split}")
    names = sorted(
        f for f in os.listdir(image_dir)
        if f.lower().endswith((".png", ".ten"))
    )
    if not names:
        raise DataError(f"no .png or .ten files in {image_dir}")
    os.makedirs(out_dir, exist_ok=True)

    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(names)))
    n_train = int(round(len(names) * split))
    n_train = min(max(n_train, 1), len(names) - 1) if len(names) > 1 else 1
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[names[idx]] = "train" if rank < n_train else "test"

    manifest = DatasetManifest(seed=seed, created=time.strftime("%Y-%m-%dT%H:%M:%S"))
    manifest.params = {"patch": patch, "split": split, "source_dir": image_dir, "noise": "none"}
    skipped = 0
    clamped_total = 0
    tile = 2 * patch
    for name in names:
        try:
            mosaic = _load_mosaic(os.path.join(image_dir, name))
        except DataError:
            skipped += 1
            continue
        h, w = mosaic.shape[2], mosaic.shape[3]
        if h < tile or w < tile:
            skipped += 1
            continue
        th, tw = (h // tile) * tile, (w // tile) * tile
        y0, x0 = (h - th) // 2, (w - tw) // 2
        cropped = mosaic[:, :, y0 : y0 + th, x0 : x0 + tw]
        stem = os.path.splitext(name)[0]
        for ti in range(th // tile):
            for tj in range(tw // tile):
                block = cropped[:, :, ti * tile : (ti + 1) * tile, tj * tile : (tj + 1) * tile]
                packed = pack_bayer(block)
                clamped_total += int(np.count_nonzero((packed < 0.0) | (packed > 1.0)))
                packed = np.clip(packed, 0.0, 1.0)
                out_name = f"{stem}_p{ti:02d}{tj:02d}.ten"
                write_ten(os.path.join(out_dir, out_name), packed)
                getattr(manifest, split_of[name]).append(out_name)
    if not manifest.train and not manifest.test:
        raise DataError(f"no usable images in {image_dir} (skipped {skipped})")
    manifest.params["skipped_files"] = skipped
    manifest.params["clamped_values"] = clamped_total
    write_manifest(os.path.join(out_dir, "manifest.txt"), manifest)
    return manifest


def load_split(out_dir, manifest: DatasetManifest, split: str) -> list[RawImage]:
    images = []
    for name in getattr(manifest, split):
        arr = read_ten(os.path.join(out_dir, name))
        images.append(RawImage(Tensor(arr), source_id=name))
    return images
