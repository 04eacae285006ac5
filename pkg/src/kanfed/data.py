"""MNIST loading, normalization and the pathological non-IID partitioner.

The partitioner sorts training indices by label, cuts each label's pool into
20 shards of jittered size, and deals two shards with distinct labels to each
of 100 clients, so every client sees exactly two digits. Mean client size is
exactly total/n_clients (600 for MNIST).
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import struct
import urllib.request
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, InternalError
from .numerics import RngStream

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801

# standard MNIST pixel statistics (after scaling to [0,1])
MNIST_MEAN = 0.1307
MNIST_STD = 0.3081

DEFAULT_MIRROR = "https://ossci-datasets.s3.amazonaws.com/mnist/"
MNIST_FILES = {
    # filename -> md5 of the gzipped file
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}


@dataclass
class Dataset:
    images: np.ndarray  # (N, 784) float64
    labels: np.ndarray  # (N,) int64 in [0, 10)
    split: str = "train"
    normalized: bool = False

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ClientPartition:
    client_id: int
    indices: np.ndarray
    label_set: frozenset

    def __len__(self) -> int:
        return len(self.indices)


def _open_maybe_gz(path: Path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse a big-endian IDX image/label file pair into a Dataset."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    with _open_maybe_gz(images_path) as f:
        head = f.read(16)
        if len(head) < 16:
            raise DataError(f"{images_path}: truncated header at byte {len(head)}")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_MAGIC_IMAGES:
            raise DataError(f"{images_path}: bad magic 0x{magic:08x} at byte 0")
        body = f.read(n * rows * cols)
        if len(body) < n * rows * cols:
            raise DataError(
                f"{images_path}: truncated at byte {16 + len(body)}, "
                f"expected {16 + n * rows * cols}"
            )
        pixels = np.frombuffer(body, dtype=np.uint8).reshape(n, rows * cols)
    with _open_maybe_gz(labels_path) as f:
        head = f.read(8)
        if len(head) < 8:
            raise DataError(f"{labels_path}: truncated header at byte {len(head)}")
        magic, n_labels = struct.unpack(">II", head)
        if magic != IDX_MAGIC_LABELS:
            raise DataError(f"{labels_path}: bad magic 0x{magic:08x} at byte 0")
        body = f.read(n_labels)
        if len(body) < n_labels:
            raise DataError(f"{labels_path}: truncated at byte {8 + len(body)}")
        labels = np.frombuffer(body, dtype=np.uint8).astype(np.int64)
    if n != n_labels:
        raise DataError(
            f"image/label count mismatch: {n} images vs {n_labels} labels"
        )
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise DataError(f"label out of range [0, 10): max={labels.max()}")
    return Dataset(images=pixels.astype(np.float64), labels=labels, split=split)


def write_idx(dataset: Dataset, images_path, labels_path, side: int = 28) -> None:
    """Write a Dataset back out as a raw IDX pair (fixtures, synthetic data)."""
    n = len(dataset)
    if dataset.images.shape[1] != side * side:
        raise ConfigurationError(f"images are not {side}x{side}")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_MAGIC_IMAGES, n, side, side))
        f.write(np.clip(dataset.images, 0, 255).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_MAGIC_LABELS, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def normalize(ds: Dataset) -> Dataset:
    """Scale pixels to [0,1] then standardize with the fixed MNIST constants."""
    if ds.normalized:
        raise DataError("dataset is already normalized")
    images = (ds.images / 255.0 - MNIST_MEAN) / MNIST_STD
    return replace(ds, images=images, normalized=True)


def _jittered_shard_sizes(
    total: int, n_shards: int, gen, lo: int, hi: int
) -> list[int]:
    """Shard sizes around total/n_shards with +-30% multiplicative jitter,
    clamped to [lo, hi] and summing exactly to `total`."""
    if not lo * n_shards <= total <= hi * n_shards:
        raise ConfigurationError(
            f"cannot cut {total} samples into {n_shards} shards of [{lo}, {hi}]"
        )
    mult = gen.uniform(0.7, 1.3, n_shards)
    target = mult / mult.sum() * total
    # clamp, then water-fill the imbalance over shards that still have room
    for _ in range(200):
        clipped = np.clip(target, lo, hi)
        diff = total - clipped.sum()
        if abs(diff) < 1e-9:
            target = clipped
            break
        room = (hi - clipped) if diff > 0 else (clipped - lo)
        target = clipped + diff * room / room.sum()
    sizes = np.floor(target).astype(int)
    # hand out the rounding remainder to the largest fractional parts
    rem = total - sizes.sum()
    order = np.argsort(-(target - sizes), kind="stable")
    sizes[order[:rem]] += 1
    return sizes.tolist()


def pathological_partition(
    ds: Dataset,
    n_clients: int = 100,
    labels_per_client: int = 2,
    rng: RngStream | None = None,
    shards_per_label: int | None = None,
    max_retries: int = 50,
) -> list[ClientPartition]:
    """Split the training set so each client holds exactly two digit labels."""
    if rng is None:
        raise ConfigurationError("pathological_partition requires an RngStream")
    labels = np.unique(ds.labels)
    n_labels = len(labels)
    n_shards = n_clients * labels_per_client
    if n_shards % n_labels != 0:
        raise ConfigurationError(
            f"{n_shards} shards not divisible across {n_labels} labels"
        )
    if shards_per_label is None:
        shards_per_label = n_shards // n_labels

    gen = rng.child("partition").gen
    # per-shard bounds chosen so any pair of shards stays within
    # [2/3, 3/2] of the mean client size (400..900 for MNIST defaults)
    shard_base = len(ds) / n_shards
    lo = int(np.ceil(shard_base * 2.0 / 3.0))
    hi = int(np.floor(shard_base * 1.5))
    shards = []  # (label, index array)
    for lab in labels:
        idx = np.flatnonzero(ds.labels == lab)
        gen.shuffle(idx)
        sizes = _jittered_shard_sizes(len(idx), shards_per_label, gen, lo, hi)
        pos = 0
        for s in sizes:
            shards.append((int(lab), idx[pos : pos + s]))
            pos += s

    shard_labels = None
    for _ in range(max_retries):
        order = gen.permutation(len(shards))
        ok = True
        order = list(order)
        for c in range(n_clients):
            a = 2 * c
            if shards[order[a]][0] == shards[order[a + 1]][0]:
                # find a later shard with a different label and swap it in
                for j in range(a + 2, len(order)):
                    if shards[order[j]][0] != shards[order[a]][0]:
                        order[a + 1], order[j] = order[j], order[a + 1]
                        break
                else:
                    ok = False
                    break
        if ok:
            shard_labels = order
            break
    if shard_labels is None:
        raise InternalError("could not deal distinct-label shard pairs")

    parts = []
    for c in range(n_clients):
        picked = [shards[shard_labels[2 * c]], shards[shard_labels[2 * c + 1]]]
        indices = np.sort(np.concatenate([p[1] for p in picked]))
        parts.append(
            ClientPartition(
                client_id=c,
                indices=indices,
                label_set=frozenset(p[0] for p in picked),
            )
        )
    return parts


def check_partition(parts: list[ClientPartition], n_total: int, labels_per_client: int = 2):
    """Raise InternalError unless coverage, disjointness and label counts hold."""
    seen = np.zeros(n_total, dtype=bool)
    for p in parts:
        if len(p.indices) == 0:
            raise InternalError(f"client {p.client_id} is empty")
        if len(p.label_set) != labels_per_client:
            raise InternalError(
                f"client {p.client_id} has {len(p.label_set)} labels"
            )
        if seen[p.indices].any():
            raise InternalError(f"client {p.client_id} overlaps another client")
        seen[p.indices] = True
    if not seen.all():
        raise InternalError(f"{int((~seen).sum())} samples unassigned")


def partition_report(parts: list[ClientPartition], ds: Dataset) -> list[tuple[int, int, int]]:
    """Rows of (client_id, label, count) for every label a client holds."""
    rows = []
    for p in parts:
        labs, counts = np.unique(ds.labels[p.indices], return_counts=True)
        for lab, cnt in zip(labs, counts):
            rows.append((p.client_id, int(lab), int(cnt)))
    return rows


def write_partition_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["client_id", "label", "count"])
        w.writerows(rows)


def write_partition_json(parts: list[ClientPartition], path) -> None:
    """Exact index map for replaying a partition."""
    payload = {
        str(p.client_id): {
            "labels": sorted(p.label_set),
            "indices": p.indices.tolist(),
        }
        for p in parts
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def fetch_mnist(dest_dir, base_url: str = DEFAULT_MIRROR) -> None:
    """Download the four MNIST archives into dest_dir, verifying checksums."""
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    for name, md5 in MNIST_FILES.items():
        target = dest / name
        if target.exists() and hashlib.md5(target.read_bytes()).hexdigest() == md5:
            continue
        url = base_url.rstrip("/") + "/" + name
        with urllib.request.urlopen(url) as r:
            blob = r.read()
        got = hashlib.md5(blob).hexdigest()
        if got != md5:
            raise DataError(f"{name}: checksum mismatch ({got} != {md5})")
        target.write_bytes(blob)


def find_mnist(data_dir) -> dict | None:
    """Locate MNIST files (raw or gzipped) in data_dir; None if incomplete."""
    data_dir = Path(data_dir)
    out = {}
    for key, stem in [
        ("train_images", "train-images-idx3-ubyte"),
        ("train_labels", "train-labels-idx1-ubyte"),
        ("test_images", "t10k-images-idx3-ubyte"),
        ("test_labels", "t10k-labels-idx1-ubyte"),
    ]:
        for cand in (data_dir / stem, data_dir / (stem + ".gz")):
            if cand.exists():
                out[key] = cand
                break
        else:
            return None
    return out


def load_mnist(data_dir) -> tuple[Dataset, Dataset]:
    """Load and normalize the train and test splits from data_dir."""
    paths = find_mnist(data_dir)
    if paths is None:
        raise DataError(f"MNIST files not found under {data_dir}")
    train = normalize(load_idx(paths["train_images"], paths["train_labels"], "train"))
    test = normalize(load_idx(paths["test_images"], paths["test_labels"], "test"))
    return train, test
