"""Index algebra, array storage, and latent-factor synthetic data generation.

Two array layouts are supported:

* ``JointArray`` — observations indexed by ordered k-tuples of *distinct*
  units from one population (dyadic data is k=2).  Cells are stored densely
  in lexicographic tuple order.
* ``SeparateArray`` — observations on a rectangular k-dimensional grid,
  one index per population/cluster dimension (multiway clustering).

Synthetic arrays are produced from an ``AhkModel``: a kernel function of
i.i.d. latent factors, one factor per nonempty subset of the units (joint
case) or of the dimensions (separate case).  Arrays built this way satisfy
exchangeability and dissociation by construction.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DataFormatError, DomainError, ModelSpecError
from .rng import TAG_JOINT_LATENT, TAG_SEPARATE_LATENT, substream

__all__ = [
    "AhkModel",
    "JointArray",
    "SeparateArray",
    "LoadedTable",
    "enumerate_tuples",
    "index_matrix",
    "tuple_count",
    "rank_tuples",
    "rank_combinations",
    "latent_argument_ranks",
    "generate_joint",
    "generate_separate",
    "relabel",
    "read_joint_csv",
    "write_joint_csv",
    "write_separate_csv",
    "uniform_latents",
]


# ---------------------------------------------------------------------------
# index algebra
# ---------------------------------------------------------------------------

def tuple_count(n: int, k: int) -> int:
    """Number of ordered k-tuples of distinct units from {1..n}."""
    return math.perm(n, k)


def _check_arity(n: int, k: int) -> None:
    if k < 1:
        raise DomainError(f"arity must be >= 1, got {k}")
    if n < k:
        raise DomainError(f"sample smaller than arity: n={n} < k={k}")


def enumerate_tuples(n: int, k: int) -> list[tuple[int, ...]]:
    """All ordered k-tuples of distinct units from {1..n}, lexicographic."""
    _check_arity(n, k)
    return list(itertools.permutations(range(1, n + 1), k))


def index_matrix(n: int, k: int) -> np.ndarray:
    """(M, k) int64 matrix of all distinct-entry tuples in lexicographic order."""
    _check_arity(n, k)
    if n ** k <= 4_000_000:
        # dense grid + distinctness mask; row-major order of np.indices is
        # exactly lexicographic order of the tuples
        grids = np.indices((n,) * k).reshape(k, -1).T + 1
        mask = np.ones(len(grids), dtype=bool)
        for a in range(k):
            for b in range(a + 1, k):
                mask &= grids[:, a] != grids[:, b]
        return np.ascontiguousarray(grids[mask], dtype=np.int64)
    out = np.empty((tuple_count(n, k), k), dtype=np.int64)
    for m, tpl in enumerate(itertools.permutations(range(1, n + 1), k)):
        out[m] = tpl
    return out


def rank_tuples(tuples: np.ndarray, n: int) -> np.ndarray:
    """Lexicographic rank of each row among all distinct-entry k-tuples.

    Inverse of ``index_matrix`` row order: ``rank_tuples(index_matrix(n, k), n)``
    is ``0..M-1``.
    """
    tuples = np.atleast_2d(np.asarray(tuples, dtype=np.int64))
    k = tuples.shape[1]
    ranks = np.zeros(len(tuples), dtype=np.int64)
    for p in range(k):
        # entries smaller than tuples[:, p] still unused at position p
        smaller = tuples[:, p] - 1
        for q in range(p):
            smaller -= (tuples[:, q] < tuples[:, p]).astype(np.int64)
        ranks += smaller * math.perm(n - 1 - p, k - 1 - p)
    return ranks


def _pascal(n: int, r: int) -> np.ndarray:
    """Binomial coefficient table C[a, b] for a in 0..n, b in 0..r (int64)."""
    table = np.zeros((n + 1, r + 2), dtype=np.int64)
    table[:, 0] = 1
    for a in range(1, n + 1):
        for b in range(1, min(a, r + 1) + 1):
            table[a, b] = table[a - 1, b - 1] + table[a - 1, b]
    return table


def rank_combinations(combos: np.ndarray, n: int) -> np.ndarray:
    """Lexicographic rank of sorted r-subsets of {1..n} given as rows."""
    combos = np.atleast_2d(np.asarray(combos, dtype=np.int64))
    r = combos.shape[1]
    if r == 1:
        return combos[:, 0] - 1
    table = _pascal(n, r)
    ranks = np.zeros(len(combos), dtype=np.int64)
    prev = np.zeros(len(combos), dtype=np.int64)
    for j in range(r):
        m = r - j - 1  # remaining slots after position j
        # sum_{v=prev+1}^{c_j - 1} C(n - v, m) telescopes via hockey stick
        ranks += table[n - prev, m + 1] - table[n - combos[:, j] + 1, m + 1]
        prev = combos[:, j]
    return ranks


# ---------------------------------------------------------------------------
# array containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JointArray:
    """Observations on all ordered k-tuples of distinct units from {1..n}.

    ``values`` has one row per tuple in lexicographic order and ``d``
    columns (the observation vector).  Instances are immutable and safe to
    share across threads.
    """

    n: int
    k: int
    values: np.ndarray
    _index: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        _check_arity(self.n, self.k)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != tuple_count(self.n, self.k):
            raise DomainError(
                f"expected {tuple_count(self.n, self.k)} cells, got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def index(self) -> np.ndarray:
        """(M, k) matrix of tuples, built lazily and cached."""
        if self._index is None:
            object.__setattr__(self, "_index", index_matrix(self.n, self.k))
        return self._index

    @property
    def flat_values(self) -> np.ndarray:
        return self.values

    @property
    def rate_count(self) -> int:
        """Unit count driving the convergence rate (the normalization uses its root)."""
        return self.n

    def rank(self, tpl: Sequence[int]) -> int:
        return int(rank_tuples(np.asarray([tpl]), self.n)[0])

    def cell(self, tpl: Sequence[int]) -> np.ndarray:
        """Observation vector at one tuple."""
        return self.values[self.rank(tpl)]

    def tuple_at(self, m: int) -> tuple[int, ...]:
        return tuple(int(x) for x in self.index[m])


@dataclass(frozen=True, eq=False)
class SeparateArray:
    """Observations on a dense rectangular grid, one axis per dimension.

    ``values`` has shape ``(*dims, d)``; flattening is C-order.
    """

    dims: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(x) for x in self.dims)
        if len(dims) < 1 or any(x < 1 for x in dims):
            raise DomainError(f"grid dimensions must all be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)
        values = np.asarray(self.values, dtype=float)
        if values.shape == dims:
            values = values[..., None]
        if values.shape[:-1] != dims:
            raise DomainError(f"expected grid shape {dims} (+feature axis), got {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return len(self.dims)

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def m(self) -> int:
        return int(np.prod(self.dims))

    @property
    def flat_values(self) -> np.ndarray:
        return self.values.reshape(-1, self.values.shape[-1])

    @property
    def rate_count(self) -> int:
        return min(self.dims)

    def tuple_at(self, m: int) -> tuple[int, ...]:
        return tuple(int(x) + 1 for x in np.unravel_index(m, self.dims))


# ---------------------------------------------------------------------------
# latent-factor models
# ---------------------------------------------------------------------------

def uniform_latents(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Default latent sampler: i.i.d. Uniform(0, 1)."""
    return rng.random(shape)


@dataclass(frozen=True)
class AhkModel:
    """Kernel function over i.i.d. latent factors, one per index subset.

    ``tau`` receives ``2**k - 1`` latent arguments: the single-index
    factors in position order, then the two-index factors with positions in
    lexicographic order, and so on up to the full-index factor.  For k=2
    that is ``tau(u_first, u_second, u_pair)``.

    When ``vectorized`` (default) the arguments are numpy arrays covering
    all cells at once and ``tau`` must broadcast; otherwise it is called
    once per cell with scalar arguments.

    Generation is deterministic: the same (model, size, seed) always
    reproduces the same array bit-exactly, regardless of evaluation order.
    """

    k: int
    tau: Callable[..., np.ndarray]
    latent_sampler: Callable[[np.random.Generator, tuple[int, ...]], np.ndarray] = uniform_latents
    vectorized: bool = True
    label: str = ""

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"arity must be >= 1, got {self.k}")


def _position_subsets(k: int) -> list[tuple[int, ...]]:
    """Nonempty position subsets: singletons first, then pairs, ... (lex within size)."""
    out: list[tuple[int, ...]] = []
    for r in range(1, k + 1):
        out.extend(itertools.combinations(range(k), r))
    return out


def latent_argument_ranks(n: int, k: int) -> list[tuple[int, np.ndarray]]:
    """Which latent factor each cell consumes, per kernel argument.

    Returns one ``(subset_size, ranks)`` pair per kernel argument, where
    ``ranks[m]`` identifies the latent factor (by rank within its size
    class) used by cell ``m``.  Lets callers audit that cells on disjoint
    unit sets depend on disjoint latent factors.
    """
    idx = index_matrix(n, k)
    out = []
    for pos in _position_subsets(k):
        sub = np.sort(idx[:, pos], axis=1)
        out.append((len(pos), rank_combinations(sub, n)))
    return out


def _coerce_cells(raw, m: int, what: str) -> np.ndarray:
    vals = np.asarray(raw)
    if vals.dtype == object:
        raise ModelSpecError(f"{what} returned ragged output; observation length must be fixed")
    vals = vals.astype(float)
    if vals.ndim == 0:
        vals = np.broadcast_to(vals, (m,)).copy()
    if vals.ndim == 1:
        if vals.shape[0] != m:
            raise ModelSpecError(f"{what} returned {vals.shape[0]} cells, expected {m}")
        vals = vals[:, None]
    elif vals.ndim == 2:
        if vals.shape[0] != m:
            raise ModelSpecError(f"{what} returned {vals.shape[0]} cells, expected {m}")
    else:
        raise ModelSpecError(f"{what} returned array of rank {vals.ndim}; expected 1 or 2")
    return vals


def _eval_cellwise(tau, args: list[np.ndarray], m: int) -> np.ndarray:
    rows = []
    width = None
    for i in range(m):
        out = np.atleast_1d(np.asarray(tau(*(float(a[i]) for a in args)), dtype=float))
        if width is None:
            width = out.shape[0]
        elif out.shape[0] != width:
            raise ModelSpecError(
                f"kernel output dimension changed from {width} to {out.shape[0]} at cell {i}"
            )
        rows.append(out)
    return np.asarray(rows)


def generate_joint(model: AhkModel, n: int, seed: int) -> JointArray:
    """Draw one array of size n from a latent-factor model.

    One latent factor is drawn per nonempty unit subset of size <= k and
    shared by every tuple containing that subset, so the resulting array is
    exchangeable and dissociated by construction.
    """
    _check_arity(n, model.k)
    k = model.k
    idx = index_matrix(n, k)
    m = len(idx)
    blocks = {
        r: np.asarray(
            model.latent_sampler(substream(seed, TAG_JOINT_LATENT, r), (math.comb(n, r),)),
            dtype=float,
        )
        for r in range(1, k + 1)
    }
    for r, block in blocks.items():
        if block.shape != (math.comb(n, r),):
            raise ModelSpecError(
                f"latent sampler returned shape {block.shape} for size-{r} subsets, "
                f"expected {(math.comb(n, r),)}"
            )
    args = []
    for pos in _position_subsets(k):
        sub = np.sort(idx[:, pos], axis=1)
        args.append(blocks[len(pos)][rank_combinations(sub, n)])
    if model.vectorized:
        raw = model.tau(*args)
        if np.ndim(raw) == 0:
            raw = np.broadcast_to(np.asarray(raw, dtype=float), (m,))
        vals = _coerce_cells(raw, m, "kernel")
    else:
        vals = _eval_cellwise(model.tau, args, m)
    return JointArray(n=n, k=k, values=vals, _index=idx)


def generate_separate(model: AhkModel, dims: Sequence[int], seed: int) -> SeparateArray:
    """Draw one grid array from a latent-factor model.

    Latent factors are dimension-specific: one i.i.d. family per nonempty
    subset of dimensions, indexed by the sub-tuple of that subset (for k=2:
    a factor per row, per column, and per cell).
    """
    dims = tuple(int(x) for x in dims)
    if len(dims) != model.k:
        raise DomainError(f"model arity {model.k} does not match dims {dims}")
    if len(dims) == 0 or any(x < 1 for x in dims):
        raise DomainError(f"grid dimensions must all be >= 1, got {dims}")
    k = model.k
    args = []
    for pos in _position_subsets(k):
        mask = sum(1 << p for p in pos)
        shape = tuple(dims[p] for p in pos)
        block = np.asarray(
            model.latent_sampler(substream(seed, TAG_SEPARATE_LATENT, mask), shape), dtype=float
        )
        if block.shape != shape:
            raise ModelSpecError(
                f"latent sampler returned shape {block.shape}, expected {shape}"
            )
        # place the block's axes at its dimension positions for broadcasting
        expand = tuple(dims[p] if p in pos else 1 for p in range(k))
        args.append(block.reshape(expand))
    m = int(np.prod(dims))
    if model.vectorized:
        raw = np.asarray(model.tau(*args), dtype=float)
        if raw.ndim <= k:
            grid = np.broadcast_to(raw, dims).astype(float)[..., None]
        elif raw.ndim == k + 1:
            if raw.shape[:k] != dims:
                raise ModelSpecError(f"kernel returned shape {raw.shape}, expected {dims} (+feature axis)")
            grid = raw
        else:
            raise ModelSpecError(f"kernel returned array of rank {raw.ndim}")
    else:
        full_args = [np.broadcast_to(a, dims) for a in args]
        flat = _eval_cellwise(model.tau, [a.reshape(-1) for a in full_args], m)
        grid = flat.reshape(*dims, -1)
    return SeparateArray(dims=dims, values=grid)


def relabel(array: JointArray, permutation: Sequence[int]) -> JointArray:
    """Relabel units: the output cell at the permuted tuple equals the input cell.

    ``permutation[i-1]`` is the new label of unit ``i``; it must be a
    bijection on {1..n}.
    """
    perm = np.asarray(permutation, dtype=np.int64)
    n = array.n
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(1, n + 1)):
        raise DomainError(f"permutation must be a bijection on 1..{n}")
    lookup = np.empty(n + 1, dtype=np.int64)
    lookup[1:] = perm
    new_index = lookup[array.index]
    ranks = rank_tuples(new_index, n)
    values = np.empty_like(array.values)
    values[ranks] = array.values
    return JointArray(n=n, k=array.k, values=values)


# ---------------------------------------------------------------------------
# CSV interchange (long format, k = 2)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadedTable:
    """A dyadic CSV pulled into memory: the array plus its label mappings."""

    array: JointArray
    unit_labels: list[str]
    value_names: list[str]


def read_joint_csv(path, zero_fill: bool = False) -> LoadedTable:
    """Read a dyadic array from long-format CSV.

    Expected header: ``unit_i,unit_j,<value columns...>``.  Unit labels are
    arbitrary strings, mapped to 1..n in first-appearance order (scanning
    unit_i then unit_j within each row).  Exactly one row per ordered pair
    is required unless ``zero_fill`` is set, in which case absent pairs get
    a zero vector.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file") from None
        if len(header) < 3 or header[0] != "unit_i" or header[1] != "unit_j":
            raise DataFormatError(
                f"header must start with 'unit_i,unit_j' and have at least one value column, got {header!r}"
            )
        value_names = header[2:]
        d = len(value_names)
        labels: dict[str, int] = {}
        rows: list[tuple[int, int, list[float]]] = []
        for rownum, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataFormatError(
                    f"expected {len(header)} fields, got {len(row)}", row=rownum
                )
            ui, uj = row[0], row[1]
            for u in (ui, uj):
                if u not in labels:
                    labels[u] = len(labels) + 1
            if ui == uj:
                raise DataFormatError(f"self-pair {ui!r} not allowed", row=rownum)
            try:
                vals = [float(x) for x in row[2:]]
            except ValueError as exc:
                raise DataFormatError(str(exc), row=rownum) from None
            rows.append((labels[ui], labels[uj], vals))
    n = len(labels)
    if n < 2:
        raise DataFormatError(f"need at least 2 units, found {n}")
    m = tuple_count(n, 2)
    values = np.zeros((m, d))
    seen = np.zeros(m, dtype=bool)
    label_list = list(labels)
    pairs = np.asarray([(i, j) for i, j, _ in rows], dtype=np.int64)
    ranks = rank_tuples(pairs, n)
    for rownum, (rank, (_, _, vals)) in enumerate(zip(ranks, rows), start=1):
        if seen[rank]:
            i, j = pairs[rownum - 1]
            raise DataFormatError(
                f"duplicate pair ({label_list[i - 1]!r}, {label_list[j - 1]!r})", row=rownum
            )
        seen[rank] = True
        values[rank] = vals
    if not seen.all() and not zero_fill:
        missing = np.flatnonzero(~seen)
        idx = index_matrix(n, 2)
        examples = ", ".join(
            f"({label_list[idx[m0, 0] - 1]!r}, {label_list[idx[m0, 1] - 1]!r})"
            for m0 in missing[:3]
        )
        raise DataFormatError(
            f"{len(missing)} ordered pairs absent (e.g. {examples}); "
            "pass zero_fill to treat them as zero flows"
        )
    array = JointArray(n=n, k=2, values=values)
    return LoadedTable(array=array, unit_labels=label_list, value_names=value_names)


def write_joint_csv(path, array: JointArray, unit_labels: Sequence[str] | None = None,
                    value_names: Sequence[str] | None = None) -> None:
    """Write a dyadic array as long-format CSV (one row per ordered pair)."""
    if array.k != 2:
        raise DomainError(f"CSV interchange is defined for k=2 arrays, got k={array.k}")
    labels = list(unit_labels) if unit_labels is not None else [str(i) for i in range(1, array.n + 1)]
    if len(labels) != array.n:
        raise DomainError(f"need {array.n} unit labels, got {len(labels)}")
    names = list(value_names) if value_names is not None else [f"v{j + 1}" for j in range(array.d)]
    if len(names) != array.d:
        raise DomainError(f"need {array.d} value names, got {len(names)}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit_i", "unit_j", *names])
        for (i, j), row in zip(array.index, array.values):
            writer.writerow([labels[i - 1], labels[j - 1], *(repr(float(x)) for x in row)])


def write_separate_csv(path, array: SeparateArray,
                       value_names: Sequence[str] | None = None) -> None:
    """Write a two-dimensional grid array as long-format CSV.

    Row/column labels live in disjoint namespaces (``r#`` / ``c#``) so the
    file cannot be mistaken for a joint dyadic array.
    """
    if array.k != 2:
        raise DomainError(f"CSV interchange is defined for k=2 grids, got k={array.k}")
    names = list(value_names) if value_names is not None else [f"v{j + 1}" for j in range(array.d)]
    n1, n2 = array.dims
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit_i", "unit_j", *names])
        for i in range(n1):
            for j in range(n2):
                writer.writerow([f"r{i + 1}", f"c{j + 1}",
                                 *(repr(float(x)) for x in array.values[i, j])])
