"""Observation sets and the sampling operator P_Omega."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import as_matrix
from .errors import DimensionError, IngestionError, ParameterError
from .rng import RngSeed, as_generator


@dataclass(frozen=True)
class ObservationSet:
    """A set of observed (i, j) positions in an n1 x n2 grid.

    Stored as sorted row-major linear indices plus a boolean mask; the mask
    gives O(1) membership and fast projection, the index vector a stable
    iteration order.
    """

    rows: int
    cols: int
    indices: np.ndarray
    mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("grid dimensions must be positive")
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= self.rows * self.cols):
            raise ParameterError("observation index out of range")
        if idx.size != np.asarray(self.indices).size:
            raise ParameterError("duplicate observation indices")
        mask = np.zeros(self.rows * self.cols, dtype=bool)
        mask[idx] = True
        mask = mask.reshape(self.rows, self.cols)
        idx.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_pairs(cls, rows: int, cols: int, pairs) -> "ObservationSet":
        pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if pairs.size and (
            pairs[:, 0].min() < 0 or pairs[:, 0].max() >= rows
            or pairs[:, 1].min() < 0 or pairs[:, 1].max() >= cols
        ):
            raise ParameterError("observation pair out of range")
        return cls(rows, cols, pairs[:, 0] * cols + pairs[:, 1])

    @classmethod
    def from_mask(cls, mask) -> "ObservationSet":
        mask = np.asarray(mask, dtype=bool)
        return cls(mask.shape[0], mask.shape[1], np.flatnonzero(mask))

    @classmethod
    def full(cls, rows: int, cols: int) -> "ObservationSet":
        return cls(rows, cols, np.arange(rows * cols))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def fraction(self) -> float:
        return len(self) / (self.rows * self.cols)

    def __len__(self) -> int:
        return int(self.indices.size)

    def __contains__(self, ij) -> bool:
        i, j = ij
        return 0 <= i < self.rows and 0 <= j < self.cols and bool(self.mask[i, j])

    def __iter__(self):
        for k in self.indices:
            yield divmod(int(k), self.cols)

    def pairs(self) -> np.ndarray:
        return np.stack(np.divmod(self.indices, self.cols), axis=1)

    def complement(self) -> "ObservationSet":
        return ObservationSet.from_mask(~self.mask)

    def unsampled_rows(self) -> list[int]:
        return np.flatnonzero(~self.mask.any(axis=1)).tolist()

    def unsampled_cols(self) -> list[int]:
        return np.flatnonzero(~self.mask.any(axis=0)).tolist()

    def has_unsampled_lines(self) -> bool:
        return not (self.mask.any(axis=1).all() and self.mask.any(axis=0).all())


def sample_uniform(n1: int, n2: int, m: int, rng: RngSeed | np.random.Generator | int | None = None) -> ObservationSet:
    """Exactly ``m`` distinct positions, uniform over all size-m subsets."""
    total = n1 * n2
    if not 0 <= m <= total:
        raise ParameterError(f"m must lie in [0, {total}], got {m}")
    g = as_generator(rng)
    return ObservationSet(n1, n2, g.choice(total, size=m, replace=False))


def sample_bernoulli(n1: int, n2: int, p: float, rng: RngSeed | np.random.Generator | int | None = None) -> ObservationSet:
    """Each position included independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must lie in [0, 1], got {p}")
    g = as_generator(rng)
    return ObservationSet(n1, n2, np.flatnonzero(g.random(n1 * n2) < p))


def project_omega(X, omega: ObservationSet) -> np.ndarray:
    X = as_matrix(X)
    if X.shape != omega.shape:
        raise DimensionError(f"matrix shape {X.shape} does not match observation grid {omega.shape}")
    return np.where(omega.mask, X, 0.0)


def write_observations(path, Y_omega, omega: ObservationSet) -> None:
    """Write ``# rows cols count`` then one ``i<TAB>j<TAB>value`` line per entry."""
    Y = project_omega(Y_omega, omega)
    with open(path, "w") as fh:
        fh.write(f"# {omega.rows} {omega.cols} {len(omega)}\n")
        for i, j in omega:
            fh.write(f"{i}\t{j}\t{float(Y[i, j])!r}\n")


def read_observations(path) -> tuple[np.ndarray, ObservationSet]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    if not lines or not lines[0].startswith("#"):
        raise IngestionError(f"{path}:1: missing '# rows cols count' header")
    try:
        rows, cols, count = (int(t) for t in lines[0][1:].split())
    except ValueError:
        raise IngestionError(f"{path}:1: malformed header {lines[0]!r}") from None
    ii, jj, vals = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise IngestionError(f"{path}:{lineno}: expected 3 tab-separated fields")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise IngestionError(f"{path}:{lineno}: cannot parse {line!r}") from None
        if not (0 <= i < rows and 0 <= j < cols):
            raise IngestionError(f"{path}:{lineno}: index ({i}, {j}) outside {rows}x{cols}")
        if not np.isfinite(v):
            raise IngestionError(f"{path}:{lineno}: non-finite value")
        ii.append(i)
        jj.append(j)
        vals.append(v)
    if len(vals) != count:
        raise IngestionError(f"{path}: header announces {count} observations, found {len(vals)}")
    try:
        omega = ObservationSet.from_pairs(rows, cols, zip(ii, jj))
    except ParameterError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    Y = np.zeros((rows, cols))
    Y[ii, jj] = vals
    return Y, omega
