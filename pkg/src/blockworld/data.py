"""Dataset records, line-delimited storage, and a synthetic task generator.

Records are UTF-8 JSON lines with the exact schema::

    {"instruction": str, "world": [[x,y,z],...],
     "board": [[minx,minz],[maxx,maxz]], "source": int, "target": [x,y,z]}

plus an optional ``"oracle"`` object holding the latent reference index and
offset a generated record was built from. The loader strips the oracle so the
model never sees intermediate supervision; generator tests read it from the
in-memory records instead. File coordinates are divided by the configured
``block_length`` on load, so all in-memory geometry is in block lengths.

The synthetic generator places non-overlapping blocks on a randomized board
and realizes templated movement instructions whose ground truth is exact by
construction: the target is the latent reference block position plus a latent
unit offset. Descriptors cover coordinate extremes, nearest-corner phrases
(which require the board-relative distance features, not raw coordinates),
and the top of a stack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .world import WorldState

SPLIT_NAMES = ("train", "dev", "test")
DEFAULT_SPLIT_FRACTIONS = (0.7, 0.15, 0.15)

REQUIRED_KEYS = ("instruction", "world", "board", "source", "target")
OPTIONAL_KEYS = ("oracle",)

MIN_BLOCK_SEPARATION = 1.0
SELECTOR_MARGIN = 0.3


class DataFormatError(ValueError):
    """Malformed dataset file or record."""


class GenerationError(RuntimeError):
    """Synthetic placement failed within the retry budget."""


@dataclass(frozen=True)
class InstructionRecord:
    """One supervised example; ``oracle`` is generator provenance, never model input."""

    instruction: str
    world: WorldState
    source: int
    target: np.ndarray  # (3,)
    oracle: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))
        if self.target.shape != (3,) or not np.all(np.isfinite(self.target)):
            raise DataFormatError(f"target must be a finite 3-vector, got {self.target}")
        if not 0 <= self.source < self.world.n_blocks:
            raise DataFormatError(
                f"source index {self.source} out of range for {self.world.n_blocks} blocks")


@dataclass
class Dataset:
    records: list[InstructionRecord]
    splits: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.splits:
            self.splits = split_indices(len(self.records))

    def subset(self, split: str) -> list[InstructionRecord]:
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return [self.records[i] for i in self.splits[split]]


def split_indices(count: int, fractions=DEFAULT_SPLIT_FRACTIONS) -> dict[str, list[int]]:
    """Contiguous, non-overlapping train/dev/test partition of record indices."""
    if len(fractions) != 3 or not np.isclose(sum(fractions), 1.0):
        raise ValueError("fractions must be three values summing to 1")
    n_train = int(round(count * fractions[0]))
    n_dev = int(round(count * fractions[1]))
    bounds = [0, n_train, min(count, n_train + n_dev), count]
    return {name: list(range(bounds[i], bounds[i + 1])) for i, name in enumerate(SPLIT_NAMES)}


def record_to_json(record: InstructionRecord, block_length: float = 1.0) -> str:
    """Serialize one record, scaling geometry back to file units."""
    payload = {
        "instruction": record.instruction,
        "world": (record.world.blocks * block_length).tolist(),
        "board": [
            (record.world.board_min * block_length).tolist(),
            (record.world.board_max * block_length).tolist(),
        ],
        "source": int(record.source),
        "target": (record.target * block_length).tolist(),
    }
    if record.oracle is not None:
        payload["oracle"] = record.oracle
    return json.dumps(payload)


def record_from_json(line: str, block_length: float = 1.0, max_blocks: int = 20,
                     keep_oracle: bool = False) -> InstructionRecord:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataFormatError("record must be a JSON object")
    missing = [k for k in REQUIRED_KEYS if k not in payload]
    if missing:
        raise DataFormatError(f"missing keys {missing}")
    unknown = [k for k in payload if k not in REQUIRED_KEYS + OPTIONAL_KEYS]
    if unknown:
        raise DataFormatError(f"unknown keys {unknown}")
    board = payload["board"]
    if len(board) != 2 or any(len(c) != 2 for c in board):
        raise DataFormatError(f"board must be [[minx,minz],[maxx,maxz]], got {board}")
    scale = 1.0 / block_length
    world = WorldState(
        np.asarray(payload["world"], dtype=np.float64) * scale,
        np.asarray(board[0], dtype=np.float64) * scale,
        np.asarray(board[1], dtype=np.float64) * scale,
        max_blocks=max_blocks,
    )
    return InstructionRecord(
        instruction=payload["instruction"],
        world=world,
        source=int(payload["source"]),
        target=np.asarray(payload["target"], dtype=np.float64) * scale,
        oracle=payload.get("oracle") if keep_oracle else None,
    )


def load_dataset(path, block_length: float = 1.0, fractions=DEFAULT_SPLIT_FRACTIONS,
                 max_blocks: int = 20) -> Dataset:
    """Read a JSON-lines dataset; reports the line number of any bad record."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(record_from_json(line, block_length, max_blocks))
            except (DataFormatError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    if not records:
        raise DataFormatError(f"{path}: no records")
    return Dataset(records, split_indices(len(records), fractions))


def save_dataset(records, path, block_length: float = 1.0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_to_json(record, block_length) + "\n")


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

# selector name -> phrases; the key function (smaller = chosen) lives below.
_SELECTOR_PHRASES = {
    "leftmost": ["leftmost block", "block furthest to the left", "block closest to the left edge"],
    "rightmost": ["rightmost block", "block furthest to the right", "block closest to the right edge"],
    "frontmost": ["frontmost block", "block nearest the front", "block closest to the front edge"],
    "rearmost": ["rearmost block", "block furthest back", "block closest to the back edge"],
    "corner_fl": ["block closest to the front left corner", "block in the front left corner"],
    "corner_fr": ["block closest to the front right corner", "block in the front right corner"],
    "corner_bl": ["block closest to the back left corner", "block in the back left corner"],
    "corner_br": ["block closest to the back right corner", "block in the back right corner"],
    "center": ["block in the middle of the board", "centermost block",
               "block closest to the center of the board"],
    "stack_top": ["block on top of the stack", "topmost block of the stack"],
}

COORD_SELECTORS = ("leftmost", "rightmost", "frontmost", "rearmost")
CORNER_SELECTORS = ("corner_fl", "corner_fr", "corner_bl", "corner_br")
# Corner and center descriptors depend on where the board sits, so they are
# unreadable from raw coordinates once the board rectangle is randomized.
BOARD_RELATIVE_SELECTORS = CORNER_SELECTORS + ("center",)

_DIRECTIONS = {
    "left": (np.array([-1.0, 0.0, 0.0]), "to the left of"),
    "right": (np.array([1.0, 0.0, 0.0]), "to the right of"),
    "front": (np.array([0.0, 0.0, -1.0]), "in front of"),
    "back": (np.array([0.0, 0.0, 1.0]), "behind"),
}

_TEMPLATES = [
    "move the {src} one space {dir} the {ref}",
    "place the {src} {dir} the {ref}",
    "take the {src} and put it {dir} the {ref}",
    "the {src} should go {dir} the {ref}",
    "slide the {src} so that it sits {dir} the {ref}",
]


def selector_key(name: str, world: WorldState) -> np.ndarray:
    """Per-block key values for a selector; the chosen block minimizes the key."""
    blocks = world.blocks
    if name == "leftmost":
        return blocks[:, 0]
    if name == "rightmost":
        return -blocks[:, 0]
    if name == "frontmost":
        return blocks[:, 2]
    if name == "rearmost":
        return -blocks[:, 2]
    if name in CORNER_SELECTORS:
        (x0, z0), (x1, z1) = world.board_min, world.board_max
        corner = {
            "corner_fl": (x0, z0), "corner_fr": (x1, z0),
            "corner_bl": (x0, z1), "corner_br": (x1, z1),
        }[name]
        return np.hypot(blocks[:, 0] - corner[0], blocks[:, 2] - corner[1])
    if name == "center":
        cx, cz = (world.board_min + world.board_max) / 2.0
        return np.hypot(blocks[:, 0] - cx, blocks[:, 2] - cz)
    if name == "stack_top":
        return -blocks[:, 1]
    raise KeyError(f"unknown selector {name!r}")


def select_block(name: str, world: WorldState, margin: float = SELECTOR_MARGIN) -> int | None:
    """Index the selector picks, or None when the choice is ambiguous."""
    key = selector_key(name, world)
    order = np.argsort(key, kind="stable")
    if len(order) > 1 and key[order[1]] - key[order[0]] < margin:
        return None
    return int(order[0])


def _place_world(n_blocks: int, with_stack: bool, rng: np.random.Generator,
                 max_tries: int = 200) -> WorldState:
    width = rng.uniform(8.0, 12.0)
    depth = rng.uniform(8.0, 12.0)
    origin = rng.uniform(-4.0, 4.0, size=2)
    board_min, board_max = origin, origin + (width, depth)

    placed: list[np.ndarray] = []
    margin = 0.5
    for _ in range(n_blocks):
        for _ in range(max_tries):
            x = rng.uniform(board_min[0] + margin, board_max[0] - margin)
            z = rng.uniform(board_min[1] + margin, board_max[1] - margin)
            if all(np.hypot(p[0] - x, p[2] - z) >= MIN_BLOCK_SEPARATION for p in placed):
                placed.append(np.array([x, 0.0, z]))
                break
        else:
            raise GenerationError(f"could not place {n_blocks} blocks in {max_tries} tries")
    if with_stack:
        base = placed[int(rng.integers(len(placed)))]
        placed.append(base + (0.0, 1.0, 0.0))
    return WorldState(np.stack(placed), board_min, board_max, max_blocks=len(placed))


def generate_record(max_blocks: int, rng: np.random.Generator,
                    max_tries: int = 50) -> InstructionRecord:
    """One synthetic record; target = latent reference + latent unit offset."""
    if max_blocks < 3:
        raise ValueError("max_blocks must be >= 3")
    for _ in range(max_tries):
        with_stack = max_blocks >= 4 and rng.random() < 0.35
        n_ground = int(rng.integers(3, max_blocks - int(with_stack) + 1))
        world = _place_world(n_ground, with_stack, rng)

        pool = list(COORD_SELECTORS) * 3 + list(CORNER_SELECTORS) * 2 + ["center"] * 6
        if with_stack:
            pool += ["stack_top"] * 2
        src_sel, ref_sel = (str(s) for s in rng.choice(pool, size=2, replace=False))

        src_idx = select_block(src_sel, world)
        ref_idx = select_block(ref_sel, world)
        if src_idx is None or ref_idx is None or src_idx == ref_idx:
            continue

        direction = str(rng.choice(sorted(_DIRECTIONS)))
        offset, dir_phrase = _DIRECTIONS[direction]
        template = str(rng.choice(_TEMPLATES))
        instruction = template.format(
            src=str(rng.choice(_SELECTOR_PHRASES[src_sel])),
            ref=str(rng.choice(_SELECTOR_PHRASES[ref_sel])),
            dir=dir_phrase,
        )
        target = world.blocks[ref_idx] + offset
        oracle = {
            "reference": int(ref_idx),
            "offset": offset.tolist(),
            "source_selector": src_sel,
            "reference_selector": ref_sel,
            "direction": direction,
        }
        return InstructionRecord(instruction, world, src_idx, target, oracle)
    raise GenerationError(f"no valid record after {max_tries} attempts")


def generate_synthetic(count: int, max_blocks: int = 10, rng=None,
                       fractions=DEFAULT_SPLIT_FRACTIONS) -> Dataset:
    """Deterministic-under-seed synthetic dataset with train/dev/test splits."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if isinstance(rng, (int, np.integer)) or rng is None:
        rng = np.random.default_rng(rng)
    records = [generate_record(max_blocks, rng) for _ in range(count)]
    return Dataset(records, split_indices(count, fractions))
