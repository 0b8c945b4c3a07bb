"""Up/down-wind synthetic signals, MNIST IDX ingestion and grid-signal noise channels."""
from __future__ import annotations

import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import IDXFormatError, InvalidGraphError, PreconditionError
from .graph import Graph, build_chain, build_grid, build_ring

UPDOWN_CLASSES = ("up", "down")
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class LabeledGraphSignalSet:
    """Signals ``(B, n, C)`` on one shared graph with integer labels."""

    graph: Graph
    signals: np.ndarray
    labels: np.ndarray
    split: str = "train"
    provenance: dict = field(default_factory=dict)
    num_classes: int = 2

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.signals.ndim != 3 or self.signals.shape[1] != self.graph.n:
            raise ValueError(f"signals must be (B, {self.graph.n}, C), got {self.signals.shape}")
        if self.labels.shape != (self.signals.shape[0],):
            raise ValueError(f"{self.labels.shape[0]} labels for {self.signals.shape[0]} signals")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.signals)):
            raise ValueError("signals contain non-finite values")

    def __len__(self):
        return self.signals.shape[0]

    def subset(self, index, split: str | None = None) -> "LabeledGraphSignalSet":
        return replace(self, signals=self.signals[index], labels=self.labels[index],
                       split=split or self.split, provenance=dict(self.provenance))

    def with_signals(self, signals: np.ndarray, **prov) -> "LabeledGraphSignalSet":
        return replace(self, signals=signals, provenance={**self.provenance, **prov})

    def cache_key(self) -> str:
        blob = json.dumps(self.provenance, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path) -> Path:
        path = Path(path)
        np.savez(path, signals=self.signals, labels=self.labels, graph=np.array(self.graph.to_text()),
                 kind=np.array(self.graph.kind), grid_shape=np.array(self.graph.grid_shape or (0, 0)),
                 split=np.array(self.split), num_classes=np.array(self.num_classes),
                 provenance=np.array(json.dumps(self.provenance, sort_keys=True, default=str)))
        return path if path.suffix == ".npz" else path.with_name(path.name + ".npz")

    @classmethod
    def load(cls, path) -> "LabeledGraphSignalSet":
        with np.load(path, allow_pickle=False) as z:
            g = Graph.from_text(str(z["graph"]))
            shape = tuple(int(s) for s in z["grid_shape"])
            g = Graph(g.n, g.edges, kind=str(z["kind"]), grid_shape=shape if shape != (0, 0) else None)
            return cls(g, z["signals"], z["labels"], str(z["split"]), json.loads(str(z["provenance"])),
                       int(z["num_classes"]))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    std: float | None = None
    noise_level: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.std is None or not self.std > 0:
                raise ValueError(f"gaussian noise needs std > 0, got {self.std}")
        elif self.kind == "missing":
            if self.noise_level is None or not 0 < self.noise_level < 1:
                raise ValueError(f"missing-value noise needs noise_level in (0, 1), got {self.noise_level}")
        elif self.kind not in ("permutation", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")

    def describe(self) -> dict:
        return {"kind": self.kind, "std": self.std, "noise_level": self.noise_level, "seed": self.seed}

    def apply(self, data: LabeledGraphSignalSet, seed: int | None = None) -> LabeledGraphSignalSet:
        seed = self.seed if seed is None else seed
        if self.kind == "gaussian":
            return add_gaussian_noise(data, self.std, seed)[0]
        if self.kind == "missing":
            return add_missing_values(data, self.noise_level, seed)
        if self.kind == "permutation":
            return add_permutation_noise(data, seed)
        return data


# -- up/down-wind ----------------------------------------------------------

def bump_profile(std: float = 1.5, radius: int | None = None) -> np.ndarray:
    """Gaussian density at integer offsets ``0..radius`` (radius defaults to ``ceil(4 std)``)."""
    radius = int(np.ceil(4 * std)) if radius is None else radius
    v = np.arange(radius + 1)
    return np.exp(-v ** 2 / (2 * std ** 2)) / (std * np.sqrt(2 * np.pi))


def updown_signals(centers: np.ndarray, labels: np.ndarray, graph_kind: str, std: float = 1.5) -> np.ndarray:
    """Sum of half-masked bumps. ``centers`` is a boolean ``(B, n)`` mask.

    Label 0 ("up") keeps offsets ``v >= 0`` to the right of each center, label 1
    ("down") keeps ``v <= 0``. Offsets wrap on a ring and are cut at chain ends.
    """
    centers = np.asarray(centers, dtype=float)
    B, n = centers.shape
    sign = np.where(np.asarray(labels) == 0, 1, -1)[:, None]
    out = np.zeros((B, n))
    for v, h in enumerate(bump_profile(std)):
        if graph_kind == "ring":
            right, left = np.roll(centers, v, axis=1), np.roll(centers, -v, axis=1)
        elif graph_kind == "chain":
            right, left = np.zeros_like(centers), np.zeros_like(centers)
            right[:, v:] = centers[:, :n - v]
            left[:, :n - v] = centers[:, v:]
        else:
            raise InvalidGraphError(f"up/down-wind signals live on a ring or chain, got {graph_kind!r}")
        out += h * np.where(sign > 0, right, left)
    return out


def _updown_split(kind: str, n: int, size: int, threshold: float, std: float, rng: np.random.Generator):
    labels = rng.integers(0, 2, size)
    centers = rng.random((size, n)) < threshold
    return updown_signals(centers, labels, kind, std)[:, :, None], labels


def gen_updown(graph_kind: str = "ring", n: int = 64, n_train: int = 5000, n_test: int = 5000,
               threshold: float = 0.1, std: float = 1.5, seed: int = 0):
    """Train and test up/down-wind sets, each drawn from its own child stream of ``seed``."""
    if n < 8:
        raise ValueError(f"up/down-wind data needs n >= 8, got {n}")
    g = build_ring(n) if graph_kind == "ring" else build_chain(n) if graph_kind == "chain" else None
    if g is None:
        raise InvalidGraphError(f"up/down-wind signals live on a ring or chain, got {graph_kind!r}")
    streams = np.random.SeedSequence(seed).spawn(2)
    out = []
    for split, size, ss in (("train", n_train, streams[0]), ("test", n_test, streams[1])):
        X, y = _updown_split(graph_kind, n, size, threshold, std, np.random.default_rng(ss))
        prov = {"generator": "updown", "graph": graph_kind, "n": n, "size": size, "threshold": threshold,
                "std": std, "seed": seed, "split": split, "noise": None}
        out.append(LabeledGraphSignalSet(g, X, y, split, prov, 2))
    return tuple(out)


# -- MNIST IDX ---------------------------------------------------------------

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def _parse_idx(data: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    if len(data) < 4 + 4 * ndim:
        raise IDXFormatError(f"{what}: file truncated inside the header ({len(data)} bytes)")
    got = struct.unpack(">I", data[:4])[0]
    if got != magic:
        raise IDXFormatError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    body = data[4 + 4 * ndim:]
    expect = int(np.prod(dims))
    if len(body) < expect:
        raise IDXFormatError(f"{what}: truncated, {len(body)} of {expect} data bytes present")
    if len(body) > expect:
        raise IDXFormatError(f"{what}: {len(body) - expect} trailing bytes after the data")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Images ``(B, H, W)`` scaled to [0, 1] and labels ``(B,)``; gzip files are detected by content."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, "images")
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx(path, array: np.ndarray):
    """Write a uint8 array in IDX format (magic ``0x0000 08 <ndim>``)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    data = header + arr.tobytes()
    path = Path(path)
    path.write_bytes(gzip.compress(data) if path.suffix == ".gz" else data)


def find_mnist_files(root, split: str = "train") -> tuple[Path, Path]:
    prefix = "train" if split == "train" else "t10k"
    root = Path(root)
    for suffix in ("", ".gz"):
        img = root / f"{prefix}-images-idx3-ubyte{suffix}"
        lab = root / f"{prefix}-labels-idx1-ubyte{suffix}"
        if img.exists() and lab.exists():
            return img, lab
    raise FileNotFoundError(f"no {prefix} MNIST IDX files under {root}")


def downsample(images: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping ``factor x factor`` mean pooling of ``(B, H, W)`` images."""
    images = np.asarray(images, dtype=float)
    B, H, W = images.shape
    if factor < 1 or H % factor or W % factor:
        raise ValueError(f"{H}x{W} images are not divisible by factor {factor}")
    return images.reshape(B, H // factor, factor, W // factor, factor).mean(axis=(2, 4))


def images_to_set(images: np.ndarray, labels: np.ndarray, split: str, provenance: dict) -> LabeledGraphSignalSet:
    B, h, w = images.shape
    g = build_grid(h, w)
    return LabeledGraphSignalSet(g, images.reshape(B, h * w, 1), labels, split, provenance, 10)


def mnist_sets(root, factor: int = 4, validation: int = 5000):
    """``(train, validation, test)`` grid signal sets; validation is the last images of the training file."""
    out = []
    for split in ("train", "test"):
        img, lab = load_mnist_idx(*find_mnist_files(root, split))
        if factor > 1:
            img = downsample(img, factor)
        out.append(images_to_set(img, lab, split, {"generator": "mnist", "factor": factor, "split": split,
                                                   "noise": None}))
    train, test = out
    cut = len(train) - validation
    return train.subset(slice(0, cut)), train.subset(slice(cut, None), "validation"), test


# -- noise channels ----------------------------------------------------------

def _sample_rngs(seed: int, count: int, start: int):
    """One generator per sample, keyed by its global index so batching does not matter."""
    for i in range(start, start + count):
        yield np.random.default_rng([seed, i])


def psnr(clean: np.ndarray, noisy: np.ndarray, max_signal: float = 1.0) -> float:
    """Per-sample ``10 log10(max^2 / MSE)`` averaged over the set (inf when nothing changed)."""
    B = clean.shape[0]
    mse = ((noisy - clean) ** 2).reshape(B, -1).mean(axis=1)
    with np.errstate(divide="ignore"):
        vals = 10 * np.log10(max_signal ** 2 / mse)
    return float(np.mean(vals))


def add_gaussian_noise(data: LabeledGraphSignalSet, std: float, seed: int, start: int = 0):
    """Additive i.i.d. ``N(0, std^2)`` noise, not clipped. Returns ``(noisy set, PSNR)``."""
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    shape = data.signals.shape[1:]
    noise = np.stack([r.normal(0.0, std, shape) for r in _sample_rngs(seed, len(data), start)]) \
        if len(data) else np.zeros_like(data.signals)
    noisy = data.signals + noise
    return data.with_signals(noisy, noise={"kind": "gaussian", "std": std, "seed": seed}), \
        psnr(data.signals, noisy)


def add_missing_values(data: LabeledGraphSignalSet, noise_level: float, seed: int,
                       start: int = 0) -> LabeledGraphSignalSet:
    """Zero every node whose uniform draw falls below ``noise_level``."""
    if not 0 < noise_level < 1:
        raise ValueError(f"noise_level must lie in (0, 1), got {noise_level}")
    n = data.graph.n
    out = data.signals.copy()
    for b, r in enumerate(_sample_rngs(seed, len(data), start)):
        out[b, r.random(n) < noise_level, :] = 0.0
    return data.with_signals(out, noise={"kind": "missing", "noise_level": noise_level, "seed": seed})


def interior_nodes(g: Graph) -> np.ndarray:
    if g.grid_shape is None:
        raise PreconditionError("permutation noise needs a grid graph")
    cand = np.flatnonzero(g.degree == 4)
    if cand.size == 0:
        raise PreconditionError(f"{g.grid_shape[0]}x{g.grid_shape[1]} grid has no node with 4 neighbors")
    return cand


def rotate_neighbors(signal: np.ndarray, g: Graph, u: int) -> np.ndarray:
    """Move the values of ``u``'s four grid neighbors one step clockwise (top -> right -> bottom -> left)."""
    w = g.grid_shape[1]
    top, right, bottom, left = u - w, u + 1, u + w, u - 1
    out = signal.copy()
    out[right], out[bottom], out[left], out[top] = signal[top], signal[right], signal[bottom], signal[left]
    return out


def add_permutation_noise(data: LabeledGraphSignalSet, seed: int, start: int = 0) -> LabeledGraphSignalSet:
    cand = interior_nodes(data.graph)
    out = data.signals.copy()
    for b, r in enumerate(_sample_rngs(seed, len(data), start)):
        out[b] = rotate_neighbors(out[b], data.graph, int(cand[r.integers(cand.size)]))
    return data.with_signals(out, noise={"kind": "permutation", "seed": seed})


def noisy_copy(data: LabeledGraphSignalSet, spec: NoiseSpec | None, split_offset: int) -> LabeledGraphSignalSet:
    """Apply ``spec`` with a seed derived from the split so train and test noise are independent."""
    if spec is None or spec.kind == "none":
        return data
    seed = int(np.random.SeedSequence([spec.seed, split_offset]).generate_state(1)[0])
    return spec.apply(data, seed)
