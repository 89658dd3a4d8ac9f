"""Block-world state, per-block spatial input features, and train-time noising.

Geometry is in block-length units. The board is an axis-aligned rectangle in
the horizontal x-z plane; y is vertical. Each block's 12-dim feature vector is
its raw coordinates (3), Euclidean distances to the four board corners and the
four board edge lines measured in the x-z plane (8), and a binary stack flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_MAX_BLOCKS = 20

STACK_HORIZONTAL_RADIUS = 0.5
STACK_VERTICAL_REACH = 1.5

FEATURE_DIM = 12
COORD_FEATURE_DIM = 3


@dataclass(frozen=True)
class WorldState:
    """Ordered block positions plus the board rectangle they sit on."""

    blocks: np.ndarray  # (n, 3) float64, columns x, y, z
    board_min: np.ndarray  # (2,) = (min x, min z)
    board_max: np.ndarray  # (2,) = (max x, max z)
    max_blocks: int = DEFAULT_MAX_BLOCKS

    def __post_init__(self):
        object.__setattr__(self, "blocks", np.asarray(self.blocks, dtype=np.float64))
        object.__setattr__(self, "board_min", np.asarray(self.board_min, dtype=np.float64))
        object.__setattr__(self, "board_max", np.asarray(self.board_max, dtype=np.float64))
        if self.blocks.ndim != 2 or self.blocks.shape[1] != 3:
            raise ValueError(f"blocks must be (n, 3), got {self.blocks.shape}")
        n = self.blocks.shape[0]
        if not 1 <= n <= self.max_blocks:
            raise ValueError(f"block count {n} outside [1, {self.max_blocks}]")
        if not np.all(self.board_min < self.board_max):
            raise ValueError("board_min must be componentwise below board_max")
        if not (np.all(np.isfinite(self.blocks))
                and np.all(np.isfinite(self.board_min))
                and np.all(np.isfinite(self.board_max))):
            raise ValueError("non-finite world geometry")

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    def corners(self) -> np.ndarray:
        """Board corners in the x-z plane, order (min,min), (min,max), (max,min), (max,max)."""
        (x0, z0), (x1, z1) = self.board_min, self.board_max
        return np.array([[x0, z0], [x0, z1], [x1, z0], [x1, z1]])


@dataclass(frozen=True)
class BlockFeatures:
    """12 spatial input features of one block."""

    coords: np.ndarray  # (3,)
    board_distances: np.ndarray  # (8,): 4 corner distances then 4 edge distances
    stack_flag: float  # 0.0 or 1.0

    def vector(self) -> np.ndarray:
        return np.concatenate([self.coords, self.board_distances, [self.stack_flag]])


def detect_stack(world: WorldState, index: int) -> int:
    """1 iff another block sits within 0.5 horizontally and (0, 1.5] vertically."""
    _check_index(world, index)
    me = world.blocks[index]
    others = np.delete(world.blocks, index, axis=0)
    if others.size == 0:
        return 0
    horiz = np.hypot(others[:, 0] - me[0], others[:, 2] - me[2])
    vert = np.abs(others[:, 1] - me[1])
    hit = (horiz < STACK_HORIZONTAL_RADIUS) & (vert > 0.0) & (vert <= STACK_VERTICAL_REACH)
    return int(np.any(hit))


def featurize(world: WorldState, index: int) -> BlockFeatures:
    """Spatial features of block ``index``: coords, 8 board distances, stack flag."""
    _check_index(world, index)
    pos = world.blocks[index]
    xz = pos[[0, 2]]
    corner_d = np.linalg.norm(world.corners() - xz, axis=1)
    # Perpendicular distance to each edge line: left, right, near, far.
    edge_d = np.abs(np.array([
        xz[0] - world.board_min[0],
        world.board_max[0] - xz[0],
        xz[1] - world.board_min[1],
        world.board_max[1] - xz[1],
    ]))
    return BlockFeatures(
        coords=pos.copy(),
        board_distances=np.concatenate([corner_d, edge_d]),
        stack_flag=float(detect_stack(world, index)),
    )


def feature_matrix(world: WorldState, features: str = "full") -> np.ndarray:
    """All blocks' feature rows; ``features`` selects "full" (12) or "coords" (3)."""
    rows = np.stack([featurize(world, i).vector() for i in range(world.n_blocks)])
    if features == "full":
        return rows
    if features == "coords":
        return rows[:, :COORD_FEATURE_DIM]
    raise ValueError(f"unknown feature subset {features!r}")


def add_noise(
    world: WorldState,
    target: np.ndarray,
    local_sigma: float,
    global_sigma: float,
    rng: np.random.Generator,
) -> tuple[WorldState, np.ndarray]:
    """Training-time noising: per-block local 2D jitter, one shared global 2D
    shift applied to the target position only. Vertical coordinates and stack
    structure are untouched.
    """
    if local_sigma < 0 or global_sigma < 0:
        raise ValueError("noise sigmas must be nonnegative")
    blocks = world.blocks.copy()
    if local_sigma > 0:
        jitter = rng.normal(0.0, local_sigma, size=(world.n_blocks, 2))
        blocks[:, 0] += jitter[:, 0]
        blocks[:, 2] += jitter[:, 1]
    target = np.asarray(target, dtype=np.float64).copy()
    if global_sigma > 0:
        shift = rng.normal(0.0, global_sigma, size=2)
        target[0] += shift[0]
        target[2] += shift[1]
    noisy = WorldState(blocks, world.board_min, world.board_max, world.max_blocks)
    return noisy, target


def _check_index(world: WorldState, index: int) -> None:
    if not 0 <= index < world.n_blocks:
        raise IndexError(f"block index {index} out of range [0, {world.n_blocks})")
