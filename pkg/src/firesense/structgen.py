"""Random regular steel frames, element removal, gravity loads and fire points.

A structure is a regular grid of rooms. Nodes sit on the grid corners,
columns join vertically adjacent nodes and beams join horizontally adjacent
nodes on every elevated level (there are no ground beams). Roughly 8% of the
elements are then removed, re-sampling the whole removal set until the
remaining frame is a single connected piece standing on the ground.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import GenerationExhausted

ROOM_LEN_RANGE = (2.0, 5.0)
ROOM_COUNT_RANGE = (2, 7)
E0_RANGE_GPA = (168.0, 252.0)
FY_RANGE_MPA = (220.0, 330.0)
HARDENING_RANGE = (0.008, 0.012)
GRAVITY_RANGES = {
    "column": (0.5, 1.0),
    "edge_beam": (1.5, 4.5),
    "interior_beam": (3.0, 7.5),
}
REMOVAL_FRACTION = 0.08
MAX_REMOVAL_ATTEMPTS = 100
GRAVITY_MIDR_LIMIT = 1.0  # percent
SECTION_SIDE = 0.1  # m

BEAM_X, BEAM_Y, COLUMN = "beam_x", "beam_y", "column"
_EPS = 1e-9


@dataclass(frozen=True)
class RoomGrid:
    room_len_x: float
    room_len_y: float
    room_len_z: float
    count_x: int
    count_y: int
    count_z: int

    @property
    def story_height(self) -> float:
        return self.room_len_z

    @property
    def n_rooms(self) -> int:
        return self.count_x * self.count_y * self.count_z

    @property
    def extent(self) -> tuple[float, float, float]:
        return (
            self.room_len_x * self.count_x,
            self.room_len_y * self.count_y,
            self.room_len_z * self.count_z,
        )

    @property
    def room_dims(self) -> tuple[float, float, float]:
        return (self.room_len_x, self.room_len_y, self.room_len_z)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.count_x, self.count_y, self.count_z)

    def story_of(self, z: float) -> int:
        """Story whose vertical span contains ``z``; boundaries belong to the lower story."""
        k = math.ceil(z / self.room_len_z - _EPS)
        return int(min(max(k, 1), self.count_z))

    def room_index(self, i: int, j: int, k: int) -> int:
        return (i * self.count_y + j) * self.count_z + k

    def room_ijk(self, index: int) -> tuple[int, int, int]:
        i, rem = divmod(index, self.count_y * self.count_z)
        j, k = divmod(rem, self.count_z)
        return i, j, k

    def room_bounds(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        ijk = np.array(self.room_ijk(index), dtype=float)
        dims = np.array(self.room_dims)
        return ijk * dims, (ijk + 1) * dims

    def containing_room(self, x: float, y: float, z: float) -> int:
        """Room containing a point; points on shared faces go to the lowest index."""
        idx = []
        for v, d, n in zip((x, y, z), self.room_dims, self.counts):
            idx.append(int(min(max(math.ceil(v / d - _EPS) - 1, 0), n - 1)))
        return self.room_index(*idx)


@dataclass(frozen=True)
class StructNode:
    id: int
    x: float
    y: float
    z: float
    h: int


@dataclass(frozen=True)
class Element:
    id: int
    node_a: int
    node_b: int
    kind: str
    length: float
    floor: int
    gravity_load: float = 0.0
    edge: bool = False  # beam on the plan perimeter


@dataclass(frozen=True)
class Material:
    young_modulus_E0: float  # GPa
    yield_strength: float  # MPa
    hardening_ratio: float  # fraction


@dataclass(frozen=True)
class FirePoint:
    x_f: float
    y_f: float
    z_f: float
    h_f: int
    room_index: int = -1

    @property
    def xyz(self) -> tuple[float, float, float]:
        return (self.x_f, self.y_f, self.z_f)


@dataclass
class Structure:
    id: int
    room_grid: RoomGrid
    nodes: list[StructNode]
    elements: list[Element]
    material: Material
    rng_seed: int
    n_elements_before_removal: int = 0
    n_nodes_before_removal: int = 0
    removal_attempts: int = 0
    _node_pos: dict = field(default_factory=dict, repr=False, compare=False)

    def node_position(self) -> dict[int, int]:
        """Map node id -> row in ``nodes``."""
        if len(self._node_pos) != len(self.nodes):
            self._node_pos = {n.id: i for i, n in enumerate(self.nodes)}
        return self._node_pos

    def node_coords(self) -> np.ndarray:
        return np.array([[n.x, n.y, n.z] for n in self.nodes], dtype=float)

    def element_midpoints(self) -> np.ndarray:
        xyz = self.node_coords()
        pos = self.node_position()
        a = np.array([pos[e.node_a] for e in self.elements])
        b = np.array([pos[e.node_b] for e in self.elements])
        return 0.5 * (xyz[a] + xyz[b])

    @property
    def bbox(self) -> tuple[float, float, float]:
        return self.room_grid.extent

    @property
    def center(self) -> tuple[float, float, float]:
        lx, ly, lz = self.bbox
        return (0.5 * lx, 0.5 * ly, 0.5 * lz)

    @property
    def removed_fraction(self) -> float:
        n0 = self.n_elements_before_removal or len(self.elements)
        return 1.0 - len(self.elements) / n0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "seed": self.rng_seed,
            "room_grid": asdict(self.room_grid),
            "material": asdict(self.material),
            "nodes": [asdict(n) for n in self.nodes],
            "elements": [asdict(e) for e in self.elements],
            "n_elements_before_removal": self.n_elements_before_removal,
            "n_nodes_before_removal": self.n_nodes_before_removal,
            "removal_attempts": self.removal_attempts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Structure":
        return cls(
            id=d["id"],
            room_grid=RoomGrid(**d["room_grid"]),
            nodes=[StructNode(**n) for n in d["nodes"]],
            elements=[Element(**e) for e in d["elements"]],
            material=Material(**d["material"]),
            rng_seed=d["seed"],
            n_elements_before_removal=d.get("n_elements_before_removal", 0),
            n_nodes_before_removal=d.get("n_nodes_before_removal", 0),
            removal_attempts=d.get("removal_attempts", 0),
        )


def grid_frame(grid: RoomGrid) -> tuple[list[StructNode], list[Element]]:
    """Full (pre-removal) grid frame with zero gravity loads."""
    cx, cy, cz = grid.counts
    lx, ly, lz = grid.room_dims

    def nid(i, j, k):
        return (k * (cy + 1) + j) * (cx + 1) + i

    nodes = [
        StructNode(nid(i, j, k), i * lx, j * ly, k * lz, k)
        for k in range(cz + 1)
        for j in range(cy + 1)
        for i in range(cx + 1)
    ]
    elements: list[Element] = []

    def add(a, b, kind, length, floor, edge=False):
        elements.append(Element(len(elements), a, b, kind, length, floor, 0.0, edge))

    for k in range(1, cz + 1):
        for j in range(cy + 1):
            for i in range(cx + 1):
                add(nid(i, j, k - 1), nid(i, j, k), COLUMN, lz, k)
        for j in range(cy + 1):
            for i in range(cx):
                add(nid(i, j, k), nid(i + 1, j, k), BEAM_X, lx, k, j in (0, cy))
        for j in range(cy):
            for i in range(cx + 1):
                add(nid(i, j, k), nid(i, j + 1, k), BEAM_Y, ly, k, i in (0, cx))
    return nodes, elements


def expected_element_count(grid: RoomGrid) -> int:
    cx, cy, cz = grid.counts
    return cz * ((cx + 1) * (cy + 1) + cx * (cy + 1) + (cx + 1) * cy)


def is_grounded_and_connected(nodes: list[StructNode], elements: list[Element]) -> bool:
    """True if the element graph is one component that touches the ground."""
    if not elements:
        return False
    ids = sorted({e.node_a for e in elements} | {e.node_b for e in elements})
    pos = {n: i for i, n in enumerate(ids)}
    a = np.array([pos[e.node_a] for e in elements])
    b = np.array([pos[e.node_b] for e in elements])
    adj = coo_matrix((np.ones(len(a)), (a, b)), shape=(len(ids), len(ids)))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        return False
    ground = {n.id for n in nodes if n.h == 0}
    return any(i in ground for i in ids)


def _sample_removal(rng, nodes, elements, fraction, max_attempts):
    n_remove = int(round(fraction * len(elements)))
    for attempt in range(1, max_attempts + 1):
        drop = set(rng.choice(len(elements), size=n_remove, replace=False).tolist())
        kept = [e for e in elements if e.id not in drop]
        if is_grounded_and_connected(nodes, kept):
            return kept, attempt
    raise GenerationExhausted(
        f"no connected removal set found in {max_attempts} attempts"
    )


def _seed_children(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(n)]


def generate_structure(
    seed: int,
    structure_id: int = 0,
    removal_fraction: float = REMOVAL_FRACTION,
    max_attempts: int = MAX_REMOVAL_ATTEMPTS,
    counts: tuple[int, int, int] | None = None,
) -> Structure:
    """Sample geometry, material and gravity loads from one seed.

    ``counts`` pins the room counts; it exists for fixtures and is otherwise
    drawn uniformly from [2, 7] per axis.
    """
    geo_seed, load_seed = _seed_children(seed, 2)
    rng = np.random.default_rng(geo_seed)
    dims = rng.uniform(*ROOM_LEN_RANGE, size=3)
    drawn = rng.integers(ROOM_COUNT_RANGE[0], ROOM_COUNT_RANGE[1] + 1, size=3)
    c = counts if counts is not None else tuple(int(v) for v in drawn)
    grid = RoomGrid(float(dims[0]), float(dims[1]), float(dims[2]), *c)
    material = Material(
        float(rng.uniform(*E0_RANGE_GPA)),
        float(rng.uniform(*FY_RANGE_MPA)),
        float(rng.uniform(*HARDENING_RANGE)),
    )
    nodes, elements = grid_frame(grid)
    n_el, n_nodes = len(elements), len(nodes)
    attempts = 0
    if removal_fraction > 0:
        elements, attempts = _sample_removal(rng, nodes, elements, removal_fraction, max_attempts)
    used = {e.node_a for e in elements} | {e.node_b for e in elements}
    nodes = [n for n in nodes if n.id in used]
    structure = Structure(
        id=structure_id,
        room_grid=grid,
        nodes=nodes,
        elements=elements,
        material=material,
        rng_seed=int(seed),
        n_elements_before_removal=n_el,
        n_nodes_before_removal=n_nodes,
        removal_attempts=attempts,
    )
    return sample_gravity_loads(structure, load_seed)


def gravity_class(element: Element) -> str:
    if element.kind == COLUMN:
        return "column"
    return "edge_beam" if element.edge else "interior_beam"


def sample_gravity_loads(structure: Structure, seed: int) -> Structure:
    """Independent uniform load (kN/m) per element from its class range."""
    rng = np.random.default_rng(seed)
    elements = []
    for e in structure.elements:
        lo, hi = GRAVITY_RANGES[gravity_class(e)]
        elements.append(replace(e, gravity_load=float(rng.uniform(lo, hi))))
    return replace(structure, elements=elements, _node_pos={})


def gravity_filter(structure: Structure, fea_result) -> bool:
    """Keep a structure iff its gravity-only MIDR is at most 1%."""
    return fea_result.midr <= GRAVITY_MIDR_LIMIT


def _point_in_room(rng, grid: RoomGrid, room: int) -> FirePoint:
    lo, hi = grid.room_bounds(room)
    p = rng.uniform(lo, hi)
    return FirePoint(float(p[0]), float(p[1]), float(p[2]), grid.room_ijk(room)[2] + 1, int(room))


def sample_fire_points(structure: Structure, n: int, seed: int) -> list[FirePoint]:
    """Two-stage room/point sampling.

    Rooms are drawn without replacement while any remain unvisited, then
    with replacement; each chosen room receives one uniform point.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    grid = structure.room_grid
    n_rooms = grid.n_rooms
    if n_rooms >= n:
        rooms = rng.choice(n_rooms, size=n, replace=False)
    else:
        extra = rng.choice(n_rooms, size=n - n_rooms, replace=True)
        rooms = np.concatenate([rng.permutation(n_rooms), extra])
    return [_point_in_room(rng, grid, int(r)) for r in rooms]


def room_centers(structure: Structure) -> list[FirePoint]:
    """Centroid of every room, ordered by room index (x-major, then y, then z)."""
    grid = structure.room_grid
    out = []
    for r in range(grid.n_rooms):
        lo, hi = grid.room_bounds(r)
        c = 0.5 * (lo + hi)
        out.append(FirePoint(float(c[0]), float(c[1]), float(c[2]), grid.room_ijk(r)[2] + 1, r))
    return out


def fire_point_at(structure: Structure, x: float, y: float, z: float) -> FirePoint:
    """Fire point at arbitrary coordinates with its integer story and room."""
    grid = structure.room_grid
    return FirePoint(float(x), float(y), float(z), grid.story_of(z), grid.containing_room(x, y, z))
