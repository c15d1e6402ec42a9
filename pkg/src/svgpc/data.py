"""Dataset loading, preprocessing and synthetic toy problems."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .kernels import KernelSpec, kernel_matrix


# smooth enough that 32 inducing points can represent the class boundaries on [-3, 3]^2
GP_TOY_LENGTHSCALE = 1.5


class DataError(ValueError):
    pass


class CSVParseError(DataError):
    def __init__(self, row: int, column: int, cell: str):
        super().__init__(f"cannot parse {cell!r} as a number at row {row}, column {column}")
        self.row, self.column = row, column


@dataclass
class Dataset:
    """Features ``X`` (n x d) and labels ``y``: -1/+1 when C == 2, else 1..C.

    ``label_map`` maps each internal label to the value found in the source
    file; ``normalization`` holds the per-column (mean, std) applied, if any.
    """

    X: np.ndarray
    y: np.ndarray
    C: int
    label_map: dict = field(default_factory=dict)
    normalization: tuple | None = None
    latents: np.ndarray | None = None
    feature_names: list | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=int).reshape(-1)
        if self.X.shape[0] != self.y.size:
            raise DataError(f"{self.X.shape[0]} feature rows but {self.y.size} labels")
        if self.y.size < 1:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(self.X)):
            raise DataError("features contain non-finite values")
        valid = (-1, 1) if self.C == 2 else tuple(range(1, self.C + 1))
        if not np.all(np.isin(self.y, valid)):
            raise DataError(f"labels must lie in {valid}")
        if not self.label_map:
            self.label_map = {int(v): float(v) for v in valid}

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def classes(self) -> tuple:
        return (-1, 1) if self.C == 2 else tuple(range(1, self.C + 1))

    def class_index(self) -> np.ndarray:
        """0-based class index per row (binary: -1 -> 0, +1 -> 1)."""
        return (self.y > 0).astype(int) if self.C == 2 else self.y - 1

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx],
                       latents=None if self.latents is None else self.latents[idx])


# -- CSV ------------------------------------------------------------------------

def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise CSVParseError(row, col, cell) from None
    if not np.isfinite(v):
        raise CSVParseError(row, col, cell)
    return v


def _is_numeric(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def encode_labels(raw: np.ndarray) -> tuple[np.ndarray, int, dict]:
    """Map raw label values to -1/+1 (two classes) or 1..C, returning the mapping."""
    values = np.unique(raw)
    if values.size < 2:
        raise DataError("need at least two distinct labels")
    if values.size == 2:
        internal = (-1, 1)
        C = 2
    else:
        internal = tuple(range(1, values.size + 1))
        C = values.size
    lookup = {float(v): i for v, i in zip(values, internal)}
    y = np.array([lookup[float(v)] for v in raw], dtype=int)
    return y, C, {i: float(v) for v, i in zip(values, internal)}


def read_table(path) -> tuple[list | None, np.ndarray]:
    """Numeric CSV with an optional header row; '#' lines are comments."""
    text = Path(path).read_text(encoding="utf-8")
    header = None
    rows = []
    width = None
    for lineno, record in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not record or (record[0].lstrip().startswith("#")):
            continue
        cells = [c.strip() for c in record]
        if header is None and not rows and not all(_is_numeric(c) for c in cells):
            header = cells
            width = len(cells)
            continue
        if width is None:
            width = len(cells)
        if len(cells) != width:
            raise DataError(f"row {lineno} has {len(cells)} columns, expected {width}")
        rows.append([_parse_float(c, lineno, j) for j, c in enumerate(cells, start=1)])
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def load_csv(path, label_column: int = -1) -> Dataset:
    header, table = read_table(path)
    if table.shape[1] < 2:
        raise DataError("need at least one feature column and a label column")
    col = label_column % table.shape[1]
    X = np.delete(table, col, axis=1)
    y, C, mapping = encode_labels(table[:, col])
    names = None if header is None else [h for j, h in enumerate(header) if j != col]
    return Dataset(X, y, C, label_map=mapping, feature_names=names)


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return "%.17g" % v


def save_csv(ds: Dataset, path, header_lines=()) -> None:
    """Write features then the original label value, 17 significant digits."""
    names = ds.feature_names or [f"x{j + 1}" for j in range(ds.d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*names, "y"])
        for x, label in zip(ds.X, ds.y):
            writer.writerow(["%.17g" % v for v in x] + [_fmt(ds.label_map[int(label)])])


# -- preprocessing ----------------------------------------------------------------

def normalization_stats(X) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)  # population convention
    std = np.where(std > 0, std, 1.0)
    return mean, std


def apply_normalization(ds: Dataset, stats) -> Dataset:
    mean, std = (np.asarray(s, dtype=float) for s in stats)
    return replace(ds, X=(ds.X - mean) / std, normalization=(mean, std))


def normalize(ds: Dataset) -> Dataset:
    """Zero-mean, unit-variance columns; constant columns become zero."""
    if ds.n < 2:
        raise DataError("normalization needs at least two rows")
    mean, std = normalization_stats(ds.X)
    X = (ds.X - mean) / std
    X[:, np.ptp(ds.X, axis=0) == 0] = 0.0
    return replace(ds, X=X, normalization=(mean, std))


def split(ds: Dataset, test_fraction: float = 0.1, seed: int = 0,
          stratified: bool = False) -> tuple[Dataset, Dataset]:
    """Random train/test partition with round(n * test_fraction) test rows."""
    if not 0 < test_fraction < 1:
        raise DataError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n_test = int(np.floor(ds.n * test_fraction + 0.5))
    if stratified:
        test = []
        for c in ds.classes:
            members = np.flatnonzero(ds.y == c)
            take = int(np.floor(members.size * test_fraction + 0.5))
            test.extend(rng.choice(members, size=take, replace=False).tolist())
        test_idx = np.sort(np.array(test, dtype=int))
    else:
        test_idx = np.sort(rng.permutation(ds.n)[:n_test])
    mask = np.ones(ds.n, dtype=bool)
    mask[test_idx] = False
    return ds.subset(np.flatnonzero(mask)), ds.subset(test_idx)


# -- synthetic data -----------------------------------------------------------------

def gen_two_cluster_binary(n: int = 400, noise_scale: float = 0.25, seed: int = 0) -> Dataset:
    """Two interleaving crescents ("two moons") scaled to roughly [-3, 3]^2.

    A stand-in for the classic banana toy problem; labels are balanced.
    """
    if n < 4 or n % 2:
        raise DataError("n must be even and at least 4")
    rng = np.random.default_rng(seed)
    half = n // 2
    t_outer = rng.uniform(0.0, np.pi, half)
    t_inner = rng.uniform(0.0, np.pi, half)
    outer = np.column_stack([np.cos(t_outer), np.sin(t_outer)])
    inner = np.column_stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)])
    X = np.vstack([outer, inner])
    X = (X - np.array([0.5, 0.25])) * 2.0
    X = X + noise_scale * rng.standard_normal(X.shape)
    y = np.concatenate([np.ones(half, dtype=int), -np.ones(half, dtype=int)])
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], 2, label_map={-1: 0.0, 1: 1.0})


def gen_gp_multiclass(n: int = 900, C: int = 3, kernel: KernelSpec | None = None,
                      seed: int = 0, max_attempts: int = 10, extent: float = 3.0) -> Dataset:
    """Labels from the argmax of C independent GP draws on a jittered 2-D grid.

    The latent draws are kept on the returned dataset as ``latents``.
    """
    if C < 3 or n < C:
        raise DataError("need C >= 3 and n >= C")
    kernel = kernel or KernelSpec("rbf", GP_TOY_LENGTHSCALE, 1.0)
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n)))
    axis = np.linspace(-extent, extent, side)
    grid = np.array([(a, b) for a in axis for b in axis])
    spacing = axis[1] - axis[0] if side > 1 else 1.0
    idx = np.sort(rng.choice(grid.shape[0], size=n, replace=False))
    X = grid[idx] + rng.uniform(-0.25 * spacing, 0.25 * spacing, size=(n, 2))
    K = np.asarray(kernel_matrix(kernel, X)) + 1e-8 * np.eye(n)
    L = np.linalg.cholesky(K)
    for _ in range(max_attempts):
        F = L @ rng.standard_normal((n, C))
        y = np.argmax(F, axis=1) + 1
        if np.unique(y).size == C:
            return Dataset(X, y, C, latents=F)
    raise DataError(f"degenerate draw: some class never won after {max_attempts} attempts")
