"""File formats: belief tensors, label maps, manifests, model files.

Binary envelope: magic "EDC3", version byte 1, then a kind byte
(1 = belief tensor, 2 = label map).  Tensors carry u32 H, W, M and a
row-major float32 payload; label maps carry u32 H, W and a uint16 payload
with 65535 reserved as the ignore label.  All integers little-endian.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, UsageError

MAGIC = b"EDC3"
FORMAT_VERSION = 1
KIND_TENSOR = 1
KIND_LABELS = 2
IGNORE_LABEL = 65535


def canonical_json(obj):
    """Deterministic JSON text used for fingerprints and model files."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def fingerprint(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# binary envelope
# ---------------------------------------------------------------------------

def _read_exact(fh, count, offset, what, path):
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(
            f"{path}: truncated while reading {what}; needed {count} bytes", offset=offset
        )
    return data


def _read_header(fh, path):
    magic = _read_exact(fh, 4, 0, "magic", path)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version = _read_exact(fh, 1, 4, "version", path)[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    kind = _read_exact(fh, 1, 5, "kind", path)[0]
    return kind


def write_belief_tensor(tensor, path):
    tensor = np.asarray(tensor, dtype=np.float32)
    if tensor.ndim != 3:
        raise ValueError(f"belief tensor must be H x W x M, got shape {tensor.shape}")
    h, w, m = tensor.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([FORMAT_VERSION, KIND_TENSOR]))
        fh.write(struct.pack("<III", h, w, m))
        fh.write(tensor.astype("<f4").tobytes())


def read_belief_tensor(path):
    with open(path, "rb") as fh:
        kind = _read_header(fh, path)
        if kind != KIND_TENSOR:
            raise FormatError(f"{path}: kind byte {kind} is not a belief tensor", offset=5)
        h, w, m = struct.unpack("<III", _read_exact(fh, 12, 6, "tensor header", path))
        payload = _read_exact(fh, 4 * h * w * m, 18, "tensor payload", path)
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, m).astype(np.float32)


def write_label_map(labels, path):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be H x W, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > IGNORE_LABEL:
        raise ValueError("labels must fit in uint16")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([FORMAT_VERSION, KIND_LABELS]))
        fh.write(struct.pack("<II", h, w))
        fh.write(labels.astype("<u2").tobytes())


def read_label_map(path):
    with open(path, "rb") as fh:
        kind = _read_header(fh, path)
        if kind != KIND_LABELS:
            raise FormatError(f"{path}: kind byte {kind} is not a label map", offset=5)
        h, w = struct.unpack("<II", _read_exact(fh, 8, 6, "label header", path))
        payload = _read_exact(fh, 2 * h * w, 14, "label payload", path)
    return np.frombuffer(payload, dtype="<u2").reshape(h, w).astype(np.int64)


def peek_kind_and_shape(path):
    """Header-only read used for manifest validation."""
    with open(path, "rb") as fh:
        kind = _read_header(fh, path)
        if kind == KIND_TENSOR:
            h, w, m = struct.unpack("<III", _read_exact(fh, 12, 6, "tensor header", path))
            return kind, (h, w, m)
        if kind == KIND_LABELS:
            h, w = struct.unpack("<II", _read_exact(fh, 8, 6, "label header", path))
            return kind, (h, w)
    raise FormatError(f"{path}: unknown kind byte {kind}", offset=5)


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestItem:
    tensors: list  # absolute paths, one per classifier
    labels: str


@dataclass
class DatasetManifest:
    classifiers: list
    num_classes: int
    splits: dict  # split name -> list[ManifestItem]
    ignore: list = field(default_factory=lambda: [IGNORE_LABEL])

    @property
    def num_classifiers(self):
        return len(self.classifiers)

    def items(self, split):
        if split not in self.splits:
            raise UsageError(f"manifest has no split {split!r}; available: {sorted(self.splits)}")
        return self.splits[split]


def write_manifest(manifest, path):
    obj = {
        "classifiers": list(manifest.classifiers),
        "classes": int(manifest.num_classes),
        "ignore": [int(v) for v in manifest.ignore],
        "splits": {
            name: [
                {
                    "tensors": [os.path.relpath(t, os.path.dirname(os.path.abspath(path))) for t in item.tensors],
                    "labels": os.path.relpath(item.labels, os.path.dirname(os.path.abspath(path))),
                }
                for item in items
            ]
            for name, items in manifest.splits.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path, validate=True):
    """Load a manifest; relative paths resolve against the manifest's directory."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        classifiers = list(obj["classifiers"])
        num_classes = int(obj["classes"])
        splits = {
            name: [
                ManifestItem(
                    tensors=[resolve(t) for t in item["tensors"]],
                    labels=resolve(item["labels"]),
                )
                for item in items
            ]
            for name, items in obj["splits"].items()
        }
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: manifest missing required field ({exc})") from exc
    manifest = DatasetManifest(
        classifiers=classifiers,
        num_classes=num_classes,
        splits=splits,
        ignore=[int(v) for v in obj.get("ignore", [IGNORE_LABEL])],
    )
    if validate:
        validate_manifest(manifest, path)
    return manifest


def validate_manifest(manifest, path):
    l = manifest.num_classifiers
    for split, items in manifest.splits.items():
        for idx, item in enumerate(items):
            if len(item.tensors) != l:
                raise DataError(
                    f"{path}: {split}[{idx}] lists {len(item.tensors)} tensors for {l} classifiers"
                )
            for tp in item.tensors + [item.labels]:
                if not os.path.exists(tp):
                    raise DataError(f"{path}: {split}[{idx}] references missing file {tp}")
            shapes = [peek_kind_and_shape(tp) for tp in item.tensors]
            hw = None
            for tp, (kind, shape) in zip(item.tensors, shapes):
                if kind != KIND_TENSOR:
                    raise DataError(f"{path}: {tp} is not a belief tensor")
                if shape[2] != manifest.num_classes:
                    raise DataError(
                        f"{path}: {tp} has {shape[2]} classes, manifest declares {manifest.num_classes}"
                    )
                if hw is None:
                    hw = shape[:2]
                elif shape[:2] != hw:
                    raise DataError(f"{path}: {tp} has size {shape[:2]}, expected {hw}")
            kind, lshape = peek_kind_and_shape(item.labels)
            if kind != KIND_LABELS:
                raise DataError(f"{path}: {item.labels} is not a label map")
            if lshape != hw:
                raise DataError(f"{path}: {item.labels} has size {lshape}, tensors have {hw}")


def load_item(item):
    """Read one manifest entry: (list of tensors, label map)."""
    return [read_belief_tensor(t) for t in item.tensors], read_label_map(item.labels)
