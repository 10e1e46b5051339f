"""Uniform structured grids and overlapping coarse partitions.

Cells are indexed x-fastest: the flat id of cell ``(i, j[, k])`` is
``i + Mx*(j + My*k)``.  A coarse layout splits the cell set into disjoint
axis-aligned boxes (coarse elements) and grows each box by ``m`` fine
layers, clipped at the domain boundary, to obtain the overlapping
subdomains used by the local solvers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class LayoutError(ValueError):
    """The requested coarse partition cannot be built."""


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform axis-aligned mesh with cell-centered degrees of freedom.

    dims: per-axis cell counts, spacing: per-axis cell lengths.  Supports
    2 or 3 dimensions.
    """

    dims: tuple[int, ...]
    spacing: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        if len(self.dims) not in (2, 3):
            raise ValueError(f"grid must be 2D or 3D, got {len(self.dims)} axes")
        if len(self.spacing) != len(self.dims):
            raise ValueError("dims and spacing must have the same length")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"cell counts must be >= 1, got {self.dims}")
        if any(not (h > 0) for h in self.spacing):
            raise ValueError(f"spacings must be > 0, got {self.spacing}")

    @property
    def dimension(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        """Total cell count (pressure DoF count)."""
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def face_area(self, axis: int) -> float:
        """Area of a face orthogonal to ``axis``."""
        return self.cell_volume / self.spacing[axis]

    def ravel(self, coords) -> np.ndarray:
        """Cell (i, j[, k]) coordinates -> flat ids, x-fastest."""
        return np.ravel_multi_index(tuple(np.asarray(c) for c in coords), self.dims, order="F")

    def unravel(self, index) -> tuple[np.ndarray, ...]:
        """Flat ids -> per-axis coordinate arrays."""
        return np.unravel_index(np.asarray(index), self.dims, order="F")

    def reshape(self, values: np.ndarray) -> np.ndarray:
        """View a flat cell vector as a dims-shaped array (x-fastest)."""
        return np.asarray(values).reshape(self.dims, order="F")


@dataclass(frozen=True)
class Box:
    """Half-open axis-aligned cell-index box [lo, hi) per axis."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise LayoutError(f"empty box {self.lo}..{self.hi}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def grow(self, layers: int, dims: tuple[int, ...]) -> "Box":
        """Grow by ``layers`` cells per side, clipped to [0, dims)."""
        return Box(
            tuple(max(0, l - layers) for l in self.lo),
            tuple(min(d, h + layers) for h, d in zip(self.hi, dims)),
        )

    def intersects(self, other: "Box") -> bool:
        return all(l1 < h2 and l2 < h1 for l1, h1, l2, h2 in zip(self.lo, self.hi, other.lo, other.hi))

    def contains(self, other: "Box") -> bool:
        return all(l1 <= l2 and h2 <= h1 for l1, h1, l2, h2 in zip(self.lo, self.hi, other.lo, other.hi))


def box_indices(grid: StructuredGrid, box: Box) -> np.ndarray:
    """Sorted flat cell ids covered by ``box``."""
    axes = [np.arange(l, h) for l, h in zip(box.lo, box.hi)]
    coords = np.meshgrid(*axes, indexing="ij")
    idx = grid.ravel(tuple(c.ravel(order="F") for c in coords))
    return np.sort(idx)


@dataclass(frozen=True)
class CoarseLayout:
    """Disjoint coarse elements plus their oversampled (grown) boxes."""

    grid: StructuredGrid
    elements: tuple[Box, ...]
    oversampled: tuple[Box, ...]
    overlap_layers: int
    sd: int
    worker_count: int
    worker_grid: tuple[int, ...]

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def cell_ids(self, i: int, oversampled: bool = False) -> np.ndarray:
        box = self.oversampled[i] if oversampled else self.elements[i]
        return box_indices(self.grid, box)


def _axis_segments(length: int, parts: int) -> list[tuple[int, int]]:
    """Split [0, length) into ``parts`` near-equal segments.

    Remainder cells go one per segment starting from the low-index side, so
    segment sizes differ by at most one.
    """
    base, rem = divmod(length, parts)
    segments = []
    start = 0
    for p in range(parts):
        size = base + (1 if p < rem else 0)
        segments.append((start, start + size))
        start += size
    return segments


def _factor_tuples(n: int, parts: int):
    """All ordered tuples of ``parts`` positive integers with product ``n``."""
    if parts == 1:
        yield (n,)
        return
    for head in range(1, n + 1):
        if n % head == 0:
            for tail in _factor_tuples(n // head, parts - 1):
                yield (head,) + tail


def _worker_grid(dims: tuple[int, ...], sd: int, workers: int) -> tuple[int, ...]:
    """Factor ``workers`` into a per-axis grid giving near-cubical elements.

    Feasible candidates keep every coarse element non-empty
    (``w_a * sd <= dims_a``).  The score prefers balanced element extents;
    ties resolve to the lexicographically smallest tuple, which places
    larger factors on later axes.
    """
    best = None
    best_score = None
    for combo in _factor_tuples(workers, len(dims)):
        if any(w * sd > dim for w, dim in zip(combo, dims)):
            continue
        extents = [dim / (w * sd) for w, dim in zip(combo, dims)]
        score = max(extents) / min(extents)
        if best_score is None or score < best_score - 1e-12:
            best, best_score = combo, score
        elif abs(score - best_score) <= 1e-12 and combo < best:
            best = combo
    if best is None:
        raise LayoutError(
            f"cannot factor {workers} workers onto grid dims {dims} with sd={sd}: "
            "every coarse element must contain at least one cell"
        )
    return best


def build_layout(grid: StructuredGrid, sd: int, worker_count: int, m: int) -> CoarseLayout:
    """Partition the grid into ``sd^d * worker_count`` coarse elements.

    Each worker owns an axis-aligned block which is further split ``sd``
    ways per axis; every resulting element is grown by ``m`` fine layers
    (clipped at the boundary) to form its oversampled box.
    """
    if sd < 1:
        raise LayoutError(f"sd must be >= 1, got {sd}")
    if worker_count < 1:
        raise LayoutError(f"worker_count must be >= 1, got {worker_count}")
    if m < 0:
        raise LayoutError(f"overlap layers must be >= 0, got {m}")
    wgrid = _worker_grid(grid.dims, sd, worker_count)
    per_axis = [_axis_segments(dim, w * sd) for dim, w in zip(grid.dims, wgrid)]

    elements = []
    # x-fastest element ordering, mirroring the cell ordering
    for combo in itertools.product(*[range(len(seg)) for seg in reversed(per_axis)]):
        combo = combo[::-1]
        lo = tuple(per_axis[a][c][0] for a, c in enumerate(combo))
        hi = tuple(per_axis[a][c][1] for a, c in enumerate(combo))
        elements.append(Box(lo, hi))
    oversampled = tuple(b.grow(m, grid.dims) for b in elements)
    return CoarseLayout(
        grid=grid,
        elements=tuple(elements),
        oversampled=oversampled,
        overlap_layers=m,
        sd=sd,
        worker_count=worker_count,
        worker_grid=wgrid,
    )


def restriction_indices(layout: CoarseLayout, i: int, oversampled: bool = False) -> np.ndarray:
    """Sorted global cell ids of element ``i`` (or of its oversampled box)."""
    return layout.cell_ids(i, oversampled=oversampled)


def embedding_positions(layout: CoarseLayout, i: int) -> np.ndarray:
    """Positions of element ``i``'s cells inside its oversampled cell list.

    Realizes the zero-extension map from the element to its oversampled
    box: ``over_ids[positions] == element_ids``.
    """
    inner = layout.cell_ids(i, oversampled=False)
    outer = layout.cell_ids(i, oversampled=True)
    pos = np.searchsorted(outer, inner)
    if not np.array_equal(outer[pos], inner):
        raise AssertionError(f"element {i} is not contained in its oversampled box")
    return pos


def overlap_constant(layout: CoarseLayout) -> int:
    """Max number of oversampled boxes meeting any once-more-grown box.

    For each element the box grown by ``m+1`` layers is intersected against
    every oversampled box; the result is the largest such count.  Requires
    ``m >= 1``.
    """
    m = layout.overlap_layers
    if m < 1:
        raise ValueError("overlap constant requires at least one overlap layer (m >= 1)")
    dims = layout.grid.dims
    worst = 0
    for i, elem in enumerate(layout.elements):
        grown = elem.grow(m + 1, dims)
        count = sum(1 for over in layout.oversampled if over.intersects(grown))
        worst = max(worst, count)
    return worst
