"""Log-polar rasterisation, disconnection, loops and path domains.

Rows of an :class:`OccupancyGrid` are centred on ``u_min + i*h_u`` for
``i = 0..N`` so both bounding circles sit on row centres; column ``j`` covers
angles ``[j*h_theta, (j+1)*h_theta)`` and wraps.  Paths are thickened to the
cells their polylines touch: obstacle chains are 8-connected, free space is
4-connected, so neither phase can leak through a diagonal gap of the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .paths import TWO_PI, AnnulusSpec, SampledPath

MAX_CELL = 0.05
_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = ndimage.generate_binary_structure(2, 2)


class Cell(IntEnum):
    FREE = 0
    OBSTACLE = 1
    INNER_BOUNDARY = 2
    OUTER_BOUNDARY = 3


class InnerCap(Enum):
    SUPER_NODE = "super_node"
    ABSORB = "absorb"


class MalformedInput(ValueError):
    pass


@dataclass(frozen=True)
class GridShape:
    u_min: float
    u_max: float
    h: float

    @property
    def n_rows(self) -> int:
        return int(round((self.u_max - self.u_min) / self.h)) + 1

    @property
    def n_cols(self) -> int:
        return math.ceil(TWO_PI / self.h - 1e-9)

    @property
    def h_u(self) -> float:
        return (self.u_max - self.u_min) / (self.n_rows - 1)

    @property
    def h_theta(self) -> float:
        return TWO_PI / self.n_cols

    def row_of(self, u: float) -> int:
        return int(np.rint((u - self.u_min) / self.h_u))

    def col_of(self, theta: float) -> int:
        return int(math.floor(theta / self.h_theta)) % self.n_cols


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    u_min: float
    u_max: float
    h: float
    cells: np.ndarray
    inner_cap_mode: InnerCap = InnerCap.ABSORB

    @property
    def shape(self) -> GridShape:
        return GridShape(self.u_min, self.u_max, self.h)

    @property
    def n_rows(self) -> int:
        return self.cells.shape[0]

    @property
    def n_cols(self) -> int:
        return self.cells.shape[1]

    @property
    def h_u(self) -> float:
        return self.shape.h_u

    @property
    def h_theta(self) -> float:
        return self.shape.h_theta

    def row_u(self, i) -> np.ndarray:
        return self.u_min + np.asarray(i) * self.h_u

    @property
    def start_row(self) -> int:
        """Row of the unit circle when it is interior, otherwise the inner row."""
        if self.inner_cap_mode is InnerCap.SUPER_NODE and self.u_min < 0.0 < self.u_max:
            return self.shape.row_of(0.0)
        return 0

    def obstacle_count(self) -> int:
        return int(np.count_nonzero(self.cells == Cell.OBSTACLE))


def _label_boundary_rows(cells: np.ndarray) -> None:
    top = cells.shape[0] - 1
    cells[0][cells[0] != Cell.OBSTACLE] = Cell.INNER_BOUNDARY
    cells[top][cells[top] != Cell.OBSTACLE] = Cell.OUTER_BOUNDARY


def empty_grid(u_min: float, u_max: float, h: float,
               inner_cap_mode: InnerCap = InnerCap.ABSORB) -> OccupancyGrid:
    shape = _check_shape(u_min, u_max, h)
    cells = np.zeros((shape.n_rows, shape.n_cols), dtype=np.int8)
    _label_boundary_rows(cells)
    cells.flags.writeable = False
    return OccupancyGrid(u_min, u_max, h, cells, inner_cap_mode)


def _check_shape(u_min: float, u_max: float, h: float) -> GridShape:
    if h > MAX_CELL + 1e-12:
        raise ValueError(f"cell size {h} is coarser than {MAX_CELL}")
    if h <= 0 or not u_min < u_max:
        raise ValueError("need h > 0 and u_min < u_max")
    return GridShape(u_min, u_max, h)


def path_cells(path: SampledPath, shape: GridShape) -> np.ndarray:
    """Flat indices of grid cells touched by the polyline of ``path``.

    Segments are resampled so that consecutive samples move less than half a
    cell in each coordinate; when a resampled step changes both row and
    column, the corner cell the segment passes through is added, so the
    result is the full set of touched cells.  Samples outside the row range
    are dropped, as is every segment flagged as a jump in ``path.breaks``.
    """
    u, th = path.u, path.theta
    n_rows, n_cols, h_u, h_t = shape.n_rows, shape.n_cols, shape.h_u, shape.h_theta
    if len(u) == 1:
        su, st = u, th
    else:
        du = np.diff(u)
        dth = np.diff(th)
        steps = np.maximum(np.ceil(np.maximum(np.abs(du) / h_u, np.abs(dth) / h_t) * 2.0), 1).astype(np.int64)
        if path.breaks:
            steps[list(path.breaks)] = 1
        seg = np.repeat(np.arange(len(du)), steps)
        offs = np.arange(seg.size) - np.repeat(np.cumsum(steps) - steps, steps)
        frac = offs / steps[seg]
        if path.breaks:
            frac[np.isin(seg, path.breaks)] = 0.0
        su = np.concatenate((u[seg] + frac * du[seg], u[-1:]))
        st = np.concatenate((th[seg] + frac * dth[seg], th[-1:]))
    # cell coordinates: row boundaries sit at half-integers of x, column boundaries at integers of y
    x = (su - shape.u_min) / h_u
    y = st / h_t
    rows = np.rint(x).astype(np.int64)
    cols = np.floor(y).astype(np.int64)
    if rows.size > 1:
        # a step changing both row and column passes through one corner cell; add it
        diag = (rows[1:] != rows[:-1]) & (cols[1:] != cols[:-1])
        if path.breaks:
            # jumps are not segments of the trace
            diag[(np.cumsum(steps) - steps)[list(path.breaks)]] = False
        i = np.flatnonzero(diag)
        if i.size:
            rb = (np.maximum(rows[i], rows[i + 1]) - 0.5)
            cb = np.maximum(cols[i], cols[i + 1]).astype(float)
            dx = x[i + 1] - x[i]
            dy = y[i + 1] - y[i]
            tr = (rb - x[i]) / dx
            tc = (cb - y[i]) / dy
            row_first = tr < tc
            extra_r = np.where(row_first, rows[i + 1], rows[i])
            extra_c = np.where(row_first, cols[i], cols[i + 1])
            rows = np.concatenate((rows, extra_r))
            cols = np.concatenate((cols, extra_c))
    keep = (rows >= 0) & (rows < n_rows)
    return np.unique(rows[keep] * n_cols + cols[keep] % n_cols)


def rasterize(paths: list[SampledPath], u_min: float, u_max: float, h: float,
              inner_cap_mode: InnerCap = InnerCap.ABSORB) -> OccupancyGrid:
    """Mark every cell touched by a path as OBSTACLE and label the boundary rows.

    Parts of paths outside ``[u_min, u_max]`` (half a cell of slack) are ignored.
    """
    shape = _check_shape(u_min, u_max, h)
    cells = np.zeros((shape.n_rows, shape.n_cols), dtype=np.int8)
    flat = cells.reshape(-1)
    for p in paths:
        flat[path_cells(p, shape)] = Cell.OBSTACLE
    _label_boundary_rows(cells)
    cells.flags.writeable = False
    return OccupancyGrid(u_min, u_max, h, cells, inner_cap_mode)


def with_obstacles(grid: OccupancyGrid, mask: np.ndarray) -> OccupancyGrid:
    """Copy of ``grid`` with extra OBSTACLE cells."""
    cells = grid.cells.copy()
    cells[mask] = Cell.OBSTACLE
    _label_boundary_rows(cells)
    cells.flags.writeable = False
    return OccupancyGrid(grid.u_min, grid.u_max, grid.h, cells, grid.inner_cap_mode)


def paths_intersect(a: SampledPath, b: SampledPath, h: float) -> bool:
    """True iff the two paths share a cell of a common grid of size ``h``."""
    lo = min(a.u.min(), b.u.min())
    hi = max(a.u.max(), b.u.max())
    n = max(math.ceil((hi - lo) / h), 1)
    shape = GridShape(lo, lo + n * h, h)
    return bool(np.intersect1d(path_cells(a, shape), path_cells(b, shape), assume_unique=True).size)


def loop_in_annulus(path: SampledPath, annulus: AnnulusSpec) -> bool:
    """True iff an excursion of the path inside the closed annulus winds at least once.

    An excursion is a maximal run of consecutive samples with log-radius in
    ``[r_in, r_out]``; its winding is the spread of the unwrapped angle.
    """
    inside = (path.u >= annulus.r_in) & (path.u <= annulus.r_out)
    if not inside.any():
        return False
    edges = np.diff(np.concatenate(([0], inside.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    th = path.theta
    for s, e in zip(starts, stops):
        seg = th[s:e]
        if seg.max() - seg.min() >= TWO_PI:
            return True
    return False


def label_periodic(mask: np.ndarray, merge_rows: tuple[int, ...] = ()) -> tuple[np.ndarray, int]:
    """4-connected labels of ``mask`` with the column axis wrapping.

    Cells of each row listed in ``merge_rows`` are additionally joined into a
    single component (used for the super-node inner cap).
    """
    labels, n = ndimage.label(mask, structure=_FOUR)
    if n == 0:
        return labels, 0
    a = [labels[:, 0]]
    b = [labels[:, -1]]
    for r in merge_rows:
        row = labels[r][labels[r] > 0]
        if row.size > 1:
            a.append(row[:-1])
            b.append(row[1:])
    a = np.concatenate(a)
    b = np.concatenate(b)
    keep = (a > 0) & (b > 0)
    if not keep.any():
        return labels, n
    g = coo_matrix((np.ones(int(keep.sum())), (a[keep], b[keep])), shape=(n + 1, n + 1))
    k, comp = connected_components(g, directed=False)
    relabel = comp.copy()
    # keep 0 as background: shift so that the background's component maps to 0
    relabel = np.where(np.arange(n + 1) == 0, -1, relabel)
    uniq, inv = np.unique(relabel[1:], return_inverse=True)
    out = np.zeros(n + 1, dtype=labels.dtype)
    out[1:] = inv + 1
    return out[labels], len(uniq)


def reachable_from_outer(grid: OccupancyGrid) -> np.ndarray:
    """Boolean mask of non-obstacle cells connected to the outer row."""
    passable = grid.cells != Cell.OBSTACLE
    merge = (0,) if grid.inner_cap_mode is InnerCap.SUPER_NODE else ()
    labels, _ = label_periodic(passable, merge)
    top = np.unique(labels[-1][labels[-1] > 0])
    return np.isin(labels, top) & passable


def disconnection_test(grid: OccupancyGrid) -> bool:
    """True iff the obstacles separate the start circle from the outer row.

    The start circle is the inner row, or, for super-node grids extending
    inside the unit circle, the row of ``C_0``.
    """
    reach = reachable_from_outer(grid)
    return not bool(reach[grid.start_row].any())


# --- path domains -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathDomainSpec:
    """One path domain, stored in a lifted (unwrapped) window of the grid.

    ``interior`` marks component cells; ``arc`` holds 1..4 for the boundary
    pieces.  Row ``i`` of the window is grid row ``i``; window column ``j``
    is lifted column ``col0 + j`` (cell ``j`` covers angles
    ``[(col0+j)*h_theta, (col0+j+1)*h_theta)``).
    """

    u_min: float
    h_u: float
    h_theta: float
    col0: int
    interior: np.ndarray
    arc: np.ndarray
    n_cols_grid: int | None = None
    extra_inner_arcs: int = 0
    inner_free: np.ndarray | None = None
    grid: OccupancyGrid | None = field(default=None, repr=False)

    @property
    def n_rows(self) -> int:
        return self.interior.shape[0]

    @property
    def u_max(self) -> float:
        return self.u_min + (self.n_rows - 1) * self.h_u

    def arc_cells(self, k: int) -> np.ndarray:
        """Window indices ``(row, col)`` of boundary piece ``k``."""
        return np.argwhere(self.arc == k)

    @property
    def component_cells(self) -> np.ndarray:
        """``(row, col)`` grid cells of the component (columns wrapped)."""
        rc = np.argwhere(self.interior)
        if self.n_cols_grid is not None:
            rc[:, 1] = (rc[:, 1] + self.col0) % self.n_cols_grid
        return rc

    def centers(self, rc: np.ndarray) -> np.ndarray:
        """Cylinder coordinates ``(u, theta)`` of window cells."""
        rc = np.asarray(rc).reshape(-1, 2)
        return np.column_stack((self.u_min + rc[:, 0] * self.h_u,
                                (self.col0 + rc[:, 1] + 0.5) * self.h_theta))

    @property
    def has_inner_arc(self) -> bool:
        return bool((self.arc == 1).any())

    def inner_corners(self) -> tuple[np.ndarray, np.ndarray]:
        """Junctions ``z1`` (with the lower side) and ``z2`` (upper side) of the inner arc."""
        cols = np.flatnonzero(self.arc[0] == 1)
        lo = (self.col0 + cols.min()) * self.h_theta
        hi = (self.col0 + cols.max() + 1) * self.h_theta
        return np.array([self.u_min, lo]), np.array([self.u_min, hi])


def _runs(cols: np.ndarray) -> list[np.ndarray]:
    if cols.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(cols) > 1) + 1
    return np.split(cols, cuts)


def build_domain(interior: np.ndarray, inner_free: np.ndarray, outer_free: np.ndarray,
                 u_min: float, h_u: float, h_theta: float, col0: int = 0,
                 n_cols_grid: int | None = None, grid: OccupancyGrid | None = None) -> PathDomainSpec:
    """Label the four boundary pieces of a lifted component.

    ``interior`` is a window whose first and last rows are the boundary
    circles (never interior) and whose first and last columns are padding.
    ``inner_free``/``outer_free`` flag boundary-row cells that are not
    obstacles.  The inner and outer arcs are the largest runs of free
    boundary cells adjacent to the component; the remaining adjacent cells
    split into the lower side (piece 3) and upper side (piece 4) according to
    which side of the component they lie on.
    """
    n_rows, width = interior.shape
    arc = np.zeros(interior.shape, dtype=np.int8)
    extra = 0
    for row, nb, free, k in ((0, 1, inner_free, 1), (n_rows - 1, n_rows - 2, outer_free, 2)):
        runs = _runs(np.flatnonzero(interior[nb] & free))
        if runs:
            best = max(runs, key=len)
            arc[row, best] = k
            if k == 1:
                extra = len(runs) - 1
    has_inner = bool((arc == 1).any())
    if has_inner:
        adj = ndimage.binary_dilation(interior, structure=_FOUR) & ~interior & (arc == 0)
        barrier = interior | (arc > 0)
        rest, _ = ndimage.label(~barrier, structure=_EIGHT)
        lower = rest[:, 0].max()
        upper = rest[:, -1].max()
        arc[adj & (rest == lower)] = 3
        arc[adj & (rest == upper) & (rest != lower)] = 4
    return PathDomainSpec(u_min, h_u, h_theta, col0, interior.copy(), arc, n_cols_grid, extra,
                          np.asarray(inner_free, dtype=bool).copy(), grid)


def _lift(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Unwrap a non-winding periodic component; returns a padded window and its offset."""
    n_rows, n_cols = mask.shape
    cols = np.flatnonzero(mask.any(axis=0))
    seam = bool((mask[:, 0] & mask[:, -1]).any())
    if not seam:
        lo, hi = cols.min(), cols.max()
        win = np.zeros((n_rows, hi - lo + 3), dtype=bool)
        win[:, 1:-1] = mask[:, lo:hi + 1]
        return win, int(lo) - 1
    reps = 3
    while True:
        big = np.tile(mask, (1, reps))
        labels, _ = ndimage.label(big, structure=_FOUR)
        mid = (reps // 2) * n_cols
        r0, c0 = np.argwhere(mask)[0]
        piece = labels == labels[r0, c0 + mid]
        pc = np.flatnonzero(piece.any(axis=0))
        if pc.min() > 0 and pc.max() < big.shape[1] - 1:
            break
        reps += 4
    lo, hi = pc.min(), pc.max()
    win = np.zeros((n_rows, hi - lo + 3), dtype=bool)
    win[:, 1:-1] = piece[:, lo:hi + 1]
    return win, int(lo - mid) - 1


def _lifted_rows(row: np.ndarray, col0: int, width: int, n_cols: int) -> np.ndarray:
    return row[(col0 + np.arange(width)) % n_cols]


def domain_from_component(grid: OccupancyGrid, labels: np.ndarray, label: int) -> PathDomainSpec:
    mask = labels == label
    win, col0 = _lift(mask)
    n_cols = grid.n_cols
    inner_free = _lifted_rows(grid.cells[0] != Cell.OBSTACLE, col0, win.shape[1], n_cols)
    outer_free = _lifted_rows(grid.cells[-1] != Cell.OBSTACLE, col0, win.shape[1], n_cols)
    return build_domain(win, inner_free, outer_free, grid.u_min, grid.h_u, grid.h_theta,
                        col0, n_cols, grid)


def free_components(grid: OccupancyGrid) -> tuple[np.ndarray, int]:
    """Labels of 4-connected FREE components strictly between the boundary rows."""
    free = grid.cells == Cell.FREE
    free[0] = False
    free[-1] = False
    return label_periodic(free)


def extract_domains(grid: OccupancyGrid, end1: float, end2: float,
                    labels: tuple[np.ndarray, int] | None = None
                    ) -> tuple[PathDomainSpec | None, PathDomainSpec | None]:
    """Path domains ``O1`` and ``O2`` bounded by two upcrossings.

    ``O1`` owns the counterclockwise outer arc from angle ``end1`` to ``end2``.
    Either domain is None when the corresponding arc carries no free cell
    adjacent to a component (a grid-level pinch between the two endpoints).
    """
    shape = grid.shape
    n = grid.n_cols
    top = grid.n_rows - 1
    c1, c2 = shape.col_of(end1), shape.col_of(end2)
    for c in (c1, c2):
        if grid.cells[top, c] != Cell.OBSTACLE:
            raise MalformedInput("end angle does not point at a path end on the outer circle")
    lab, _ = labels if labels is not None else free_components(grid)
    outer_free = grid.cells[top] == Cell.OUTER_BOUNDARY
    below = lab[top - 1]
    chosen = []
    for a, b, ea, eb in ((c1, c2, end1, end2), (c2, c1, end2, end1)):
        k = (b - a) % n
        if k == 0 and (eb - ea) % TWO_PI > shape.h_theta:
            k = n
        cols = (a + np.arange(1, k)) % n
        hits = below[cols][outer_free[cols] & (below[cols] > 0)]
        if hits.size == 0:
            chosen.append(None)
            continue
        vals, counts = np.unique(hits, return_counts=True)
        chosen.append(int(vals[np.argmax(counts)]))
    if chosen[0] is not None and chosen[0] == chosen[1]:
        chosen[1] = None
    return tuple(None if c is None else domain_from_component(grid, lab, c) for c in chosen)


def rectangle_domain(length: float, height: float, h: float) -> PathDomainSpec:
    """Square-celled rectangle ``(0, length) x (0, height)`` with the vertical sides as arcs 1 and 2."""
    n_rows = int(round(length / h)) + 1
    n_cols = int(round(height / h))
    interior = np.zeros((n_rows, n_cols + 2), dtype=bool)
    interior[1:-1, 1:-1] = True
    free = np.ones(n_cols + 2, dtype=bool)
    free[[0, -1]] = False
    return build_domain(interior, free, free, 0.0, length / (n_rows - 1), height / n_cols, -1)
