"""MNIST IDX loading, permuted task sequences, synthetic overlap tasks and soft-boundary sampling."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
DATA_ROOT_ENV = "SELFLESS_DATA_ROOT"


class IdxFormatError(ValueError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedIdxError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class DatasetMissingError(FileNotFoundError):
    def __init__(self, missing: Sequence[Path]):
        self.missing = [Path(p) for p in missing]
        names = ", ".join(str(p) for p in self.missing)
        super().__init__(
            f"dataset files not found: {names} "
            f"(set data_root in the config or the {DATA_ROOT_ENV} environment variable)"
        )


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(buf: bytes, expected_magic: int | None = None) -> np.ndarray:
    """Decode an unsigned-byte IDX buffer into an array of its declared shape."""
    if len(buf) < 4:
        raise TruncatedIdxError(f"IDX header needs 4 bytes, got {len(buf)}")
    (magic,) = struct.unpack(">I", buf[:4])
    if expected_magic is not None and magic != expected_magic:
        raise BadMagicError(f"magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise BadMagicError(f"magic 0x{magic:08x} is not an unsigned-byte IDX file")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if ndim == 0 or len(buf) < header:
        raise TruncatedIdxError(f"IDX header for {ndim} dimensions needs {header} bytes, got {len(buf)}")
    shape = struct.unpack(f">{ndim}I", buf[4:header])
    size = int(np.prod(shape, dtype=np.int64))
    if len(buf) - header < size:
        raise TruncatedIdxError(f"IDX body holds {len(buf) - header} bytes, header declares {size}")
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=header).reshape(shape)


def serialize_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError("only unsigned-byte IDX files are supported")
    magic = 0x0800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def write_idx(path, array: np.ndarray) -> None:
    path = Path(path)
    data = serialize_idx(array)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(data)


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int = 10

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an image/label IDX pair; pixels scaled to [0, 1], images flattened."""
    images = parse_idx(_read_bytes(images_path), IMAGES_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return x, labels.astype(np.int64)


def _resolve(root: Path, name: str) -> Path | None:
    for candidate in (root / name, root / (name + ".gz")):
        if candidate.exists():
            return candidate
    return None


def load_mnist(root=None) -> Dataset:
    root = Path(root or os.environ.get(DATA_ROOT_ENV, "data/mnist"))
    paths = {key: _resolve(root, name) for key, name in MNIST_FILES.items()}
    missing = [root / MNIST_FILES[k] for k, p in paths.items() if p is None]
    if missing:
        raise DatasetMissingError(missing)
    train_x, train_y = load_idx(paths["train_images"], paths["train_labels"])
    test_x, test_y = load_idx(paths["test_images"], paths["test_labels"])
    return Dataset(train_x, train_y, test_x, test_y, n_classes=10)


@dataclass(eq=False)
class Task:
    """One task of a sequence.

    Inputs are stored once and the optional pixel permutation is applied on
    access, so five permuted MNIST tasks share one copy of the images.
    """

    name: str
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    n_classes: int
    permutation: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return x if self.permutation is None else x[:, self.permutation]

    def train_inputs(self, rows=None) -> np.ndarray:
        return self._apply(self.train_x if rows is None else self.train_x[rows])

    def test_inputs(self) -> np.ndarray:
        return self._apply(self.test_x)


def make_permuted_sequence(dataset: Dataset, n_tasks: int = 5, seed: int = 0) -> list[Task]:
    """Task 1 is the unpermuted data; tasks 2..n get independent uniform pixel permutations."""
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    rng = np.random.default_rng(seed)
    d = dataset.input_dim
    tasks = []
    for t in range(n_tasks):
        perm = None if t == 0 else rng.permutation(d)
        tasks.append(
            Task(
                f"permuted-{t + 1}",
                dataset.train_x,
                dataset.train_y,
                dataset.test_x,
                dataset.test_y,
                dataset.n_classes,
                permutation=perm,
                info={"seed": seed, "index": t},
            )
        )
    return tasks


def make_synthetic_overlap_sequence(
    n_tasks: int = 5,
    overlap: float = 0.0,
    seed: int = 0,
    n_classes: int = 4,
    informative: int = 10,
    n_train: int = 1000,
    n_test: int = 500,
    separation: float = 3.0,
    noise: float = 1.0,
) -> list[Task]:
    """Gaussian-blob tasks whose informative input dimensions partly coincide.

    Every task reads ``informative`` input dimensions. The first
    ``round(overlap * informative)`` of them are common to all tasks; the
    rest are private to the task, so ``overlap=0`` gives disjoint supports
    and ``overlap=1`` identical ones. Class means are drawn independently per
    task with entries ``+-separation/2``. Inputs are non-negative (ReLU-style)
    after a shift so that dimensions outside a task's support are exactly 0.
    """
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    shared = int(round(overlap * informative))
    private = informative - shared
    dim = shared + n_tasks * private
    tasks = []
    for t in range(n_tasks):
        dims = np.concatenate([np.arange(shared), shared + t * private + np.arange(private)]).astype(np.int64)
        means = rng.choice([-0.5, 0.5], size=(n_classes, informative)) * separation

        def draw(n):
            y = rng.integers(0, n_classes, size=n)
            x = np.zeros((n, dim))
            vals = means[y] + noise * rng.standard_normal((n, informative))
            x[:, dims] = np.maximum(vals + separation, 0.0) / (2 * separation)
            return x, y

        train_x, train_y = draw(n_train)
        test_x, test_y = draw(n_test)
        tasks.append(
            Task(
                f"overlap{overlap:g}-{t + 1}",
                train_x,
                train_y,
                test_x,
                test_y,
                n_classes,
                info={"dims": dims.tolist(), "overlap": overlap, "seed": seed, "index": t},
            )
        )
    return tasks


def merge_into_class_groups(tasks: Sequence[Task], name: str = "grouped") -> tuple[Task, list[list[int]]]:
    """Stack a task sequence into one task; task ``t``'s classes become group ``t``.

    Labels of task ``t`` are offset by the class counts of the tasks before it,
    which gives the class groups a soft-boundary schedule walks through.
    """
    if not tasks:
        raise ValueError("need at least one task")
    offsets = np.cumsum([0] + [t.n_classes for t in tasks])
    groups = [list(range(offsets[i], offsets[i + 1])) for i in range(len(tasks))]
    merged = Task(
        name,
        np.concatenate([t.train_inputs() for t in tasks]),
        np.concatenate([t.train_y + offsets[i] for i, t in enumerate(tasks)]),
        np.concatenate([t.test_inputs() for t in tasks]),
        np.concatenate([t.test_y + offsets[i] for i, t in enumerate(tasks)]),
        int(offsets[-1]),
        info={"groups": groups, "parts": [t.name for t in tasks]},
    )
    return merged, groups


@dataclass
class SoftBoundarySchedule:
    """Class groups visited in order; during phase p group p gets ``high`` of the sampling mass."""

    groups: list[list[int]]
    steps_per_phase: int
    high: float = 2.0 / 3.0

    def __post_init__(self):
        if self.steps_per_phase < 1:
            raise ValueError("steps_per_phase must be >= 1")
        if not 0.0 < self.high <= 1.0:
            raise ValueError("high must lie in (0, 1]")
        classes = [c for g in self.groups for c in g]
        if len(set(classes)) != len(classes):
            raise ValueError("class groups must be disjoint")

    @property
    def n_phases(self) -> int:
        return len(self.groups)

    @property
    def n_classes(self) -> int:
        return max(c for g in self.groups for c in g) + 1

    @property
    def total_steps(self) -> int:
        return self.n_phases * self.steps_per_phase

    def phase_of(self, step: int) -> int:
        if not 0 <= step < self.total_steps:
            raise IndexError(f"step {step} outside schedule of {self.total_steps} steps")
        return step // self.steps_per_phase


def soft_boundary_sampler(schedule: SoftBoundarySchedule, step: int) -> np.ndarray:
    """Per-class sampling probabilities at ``step``."""
    phase = schedule.phase_of(step)
    n_groups = schedule.n_phases
    low = (1.0 - schedule.high) / (n_groups - 1) if n_groups > 1 else 0.0
    high = schedule.high if n_groups > 1 else 1.0
    weights = np.zeros(schedule.n_classes)
    for g, classes in enumerate(schedule.groups):
        weights[classes] = (high if g == phase else low) / len(classes)
    return weights


def class_pools(labels: np.ndarray, n_classes: int) -> list[np.ndarray]:
    return [np.flatnonzero(labels == c) for c in range(n_classes)]


def sample_soft_batch(
    schedule: SoftBoundarySchedule,
    step: int,
    pools: Sequence[np.ndarray],
    batch_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Row indices for one batch: draw classes by the phase weights, then a random example of each."""
    weights = soft_boundary_sampler(schedule, step)
    classes = rng.choice(len(weights), size=batch_size, p=weights)
    picks = rng.random(batch_size)
    return np.array([pools[c][int(u * len(pools[c]))] for c, u in zip(classes, picks)], dtype=np.int64)
