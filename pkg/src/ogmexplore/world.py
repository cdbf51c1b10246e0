"""Ground-truth environments: synthetic floorplans and file loading."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class WorldError(ValueError):
    code = "world-error"


class MalformedWorldFile(WorldError):
    code = "malformed-file"


class OpenWorldError(WorldError):
    code = "open-world"


class NoFreeCellError(WorldError):
    code = "no-free-cell"


class DisconnectedWorldError(WorldError):
    code = "disconnected-free-space"


class GenerationError(WorldError):
    code = "generation-failed"


@dataclass
class WorldGrid:
    """Binary occupancy raster: the hidden environment the robot explores.

    cells is uint8, 1 = occupied, 0 = free. The border is closed and the
    free cells form one 4-connected component.
    """
    cells: np.ndarray
    resolution: float = 0.1

    def __post_init__(self):
        self.cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        self.cells.flags.writeable = False

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def free_fraction(self) -> float:
        return float((self.cells == 0).mean())


@dataclass
class WorldGenParams:
    width: int = 64
    height: int = 64
    resolution: float = 0.1
    rooms_min: int = 3
    rooms_max: int = 6
    room_size_min: int = 10
    room_size_max: int = 26
    # 3 keeps corridor-mouth frontiers above the planner's default
    # min-frontier-size filter; 2 remains legal via config
    corridor_width: int = 3
    max_retries: int = 20

    def __post_init__(self):
        if self.corridor_width < 2:
            raise ValueError("corridor width must be >= 2 cells")
        if self.width < 8 or self.height < 8:
            raise ValueError("world extent too small")
        if self.rooms_min < 1 or self.rooms_max < self.rooms_min:
            raise ValueError("bad room count range")


def _free_components(cells: np.ndarray) -> int:
    from scipy import ndimage
    free = cells == 0
    _, count = ndimage.label(free, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    return count


def _validate(cells: np.ndarray) -> None:
    border = np.concatenate([cells[0, :], cells[-1, :], cells[:, 0], cells[:, -1]])
    if not border.all():
        raise OpenWorldError("world border contains free cells")
    if not (cells == 0).any():
        raise NoFreeCellError("no free cell")
    if _free_components(cells) != 1:
        raise DisconnectedWorldError("disconnected free space")


def _carve_corridor(cells: np.ndarray, a: tuple[int, int], b: tuple[int, int],
                    width: int, rng: np.random.Generator) -> None:
    """L-shaped corridor between two points, horizontal-first or vertical-first."""
    h, w = cells.shape
    (r1, c1), (r2, c2) = a, b

    def carve_h(r, ca, cb):
        lo, hi = sorted((ca, cb))
        r0 = min(max(r, 1), h - 1 - width)
        cells[r0:r0 + width, max(lo, 1):min(hi + width, w - 1)] = 0

    def carve_v(c, ra, rb):
        lo, hi = sorted((ra, rb))
        c0 = min(max(c, 1), w - 1 - width)
        cells[max(lo, 1):min(hi + width, h - 1), c0:c0 + width] = 0

    if rng.integers(2) == 0:
        carve_h(r1, c1, c2)
        carve_v(c2, r1, r2)
    else:
        carve_v(c1, r1, r2)
        carve_h(r2, c1, c2)


def generate_world(seed: int, params: WorldGenParams | None = None) -> WorldGrid:
    """Deterministic rooms-and-corridors floorplan.

    Pure function of (seed, params); raises GenerationError if no valid
    layout is found within the retry budget.
    """
    params = params or WorldGenParams()
    for attempt in range(params.max_retries):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        cells = np.ones((params.height, params.width), np.uint8)
        n_rooms = int(rng.integers(params.rooms_min, params.rooms_max + 1))
        centers = []
        for _ in range(n_rooms):
            rh = int(rng.integers(params.room_size_min, params.room_size_max + 1))
            rw = int(rng.integers(params.room_size_min, params.room_size_max + 1))
            rh = min(rh, params.height - 4)
            rw = min(rw, params.width - 4)
            r0 = int(rng.integers(1, params.height - rh))
            c0 = int(rng.integers(1, params.width - rw))
            cells[r0:r0 + rh, c0:c0 + rw] = 0
            centers.append((r0 + rh // 2, c0 + rw // 2))
        order = rng.permutation(len(centers))
        for i in range(len(order) - 1):
            _carve_corridor(cells, centers[order[i]], centers[order[i + 1]],
                            params.corridor_width, rng)
        cells[0, :] = 1
        cells[-1, :] = 1
        cells[:, 0] = 1
        cells[:, -1] = 1
        # connectivity repair: join remaining components with corridors
        from scipy import ndimage
        four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        for _ in range(8):
            labels, count = ndimage.label(cells == 0, structure=four)
            if count <= 1:
                break
            cells_a = np.argwhere(labels == 1)
            cells_b = np.argwhere(labels == 2)
            pa = tuple(cells_a[rng.integers(len(cells_a))])
            pb = tuple(cells_b[rng.integers(len(cells_b))])
            _carve_corridor(cells, pa, pb, params.corridor_width, rng)
            cells[0, :] = 1
            cells[-1, :] = 1
            cells[:, 0] = 1
            cells[:, -1] = 1
        try:
            _validate(cells)
        except WorldError:
            continue
        return WorldGrid(cells, params.resolution)
    raise GenerationError(
        f"no valid world after {params.max_retries} attempts (seed={seed})")


HEADER = "ogm-world"


def save_world(world: WorldGrid, path: str | Path) -> None:
    path = Path(path)
    lines = [f"{HEADER} {world.width} {world.height} {world.resolution}"]
    for r in range(world.height):
        lines.append("".join("#" if world.cells[r, c] else "." for c in range(world.width)))
    path.write_text("\n".join(lines) + "\n")


def load_world(path: str | Path) -> WorldGrid:
    """Load an ASCII raster (or binary P5 PGM) world file and validate it."""
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(b"P5"):
        cells, resolution = _parse_pgm(raw)
    else:
        cells, resolution = _parse_ascii(raw)
    try:
        _validate(cells)
    except NoFreeCellError:
        raise NoFreeCellError(f"{path}: no free cell")
    except OpenWorldError:
        raise OpenWorldError(f"{path}: border not fully occupied")
    except DisconnectedWorldError:
        raise DisconnectedWorldError(f"{path}: disconnected free space")
    return WorldGrid(cells, resolution)


def _parse_ascii(raw: bytes) -> tuple[np.ndarray, float]:
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as e:
        raise MalformedWorldFile(f"not ascii: {e}") from None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedWorldFile("empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != HEADER:
        raise MalformedWorldFile(f"bad header line: {lines[0]!r}")
    try:
        width, height, resolution = int(head[1]), int(head[2]), float(head[3])
    except ValueError:
        raise MalformedWorldFile(f"bad header values: {lines[0]!r}") from None
    if len(lines) - 1 != height:
        raise MalformedWorldFile(f"expected {height} raster lines, got {len(lines) - 1}")
    cells = np.empty((height, width), np.uint8)
    for r, line in enumerate(lines[1:]):
        if len(line) != width:
            raise MalformedWorldFile(f"line {r + 2}: expected {width} chars, got {len(line)}")
        for c, ch in enumerate(line):
            if ch == "#":
                cells[r, c] = 1
            elif ch == ".":
                cells[r, c] = 0
            else:
                raise MalformedWorldFile(f"line {r + 2}: bad character {ch!r}")
    return cells, resolution


def _parse_pgm(raw: bytes) -> tuple[np.ndarray, float]:
    # P5 <width> <height> <maxval> then binary data; values <= 127 are occupied
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(raw) and raw[i] in b" \t\r\n":
            i += 1
        if i < len(raw) and raw[i] == ord("#"):
            while i < len(raw) and raw[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(raw) and raw[j] not in b" \t\r\n":
            j += 1
        if j == i:
            raise MalformedWorldFile("truncated pgm header")
        tokens.append(raw[i:j])
        i = j
    i += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedWorldFile("bad pgm header") from None
    if maxval > 255:
        raise MalformedWorldFile("16-bit pgm not supported")
    data = raw[i:i + width * height]
    if len(data) != width * height:
        raise MalformedWorldFile("truncated pgm data")
    vals = np.frombuffer(data, np.uint8).reshape(height, width)
    return (vals <= 127).astype(np.uint8), 0.1


def reachable_free_mask(world: WorldGrid, start: tuple[int, int]) -> np.ndarray:
    """4-connected free component containing start (plain BFS)."""
    h, w = world.cells.shape
    seen = np.zeros((h, w), bool)
    if world.cells[start]:
        return seen
    q = deque([start])
    seen[start] = True
    while q:
        r, c = q.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not seen[nr, nc] and not world.cells[nr, nc]:
                seen[nr, nc] = True
                q.append((nr, nc))
    return seen


def default_start(world: WorldGrid):
    """Most open free cell (max distance to any occupied cell, row-major
    tie-break): a sane deployment point that never wedges the robot into a
    dead-end corridor tip."""
    from scipy import ndimage
    clearance = ndimage.distance_transform_edt(world.cells == 0)
    best = np.argwhere(clearance == clearance.max())[0]
    return int(best[0]), int(best[1])
