"""Procedural urban scene generation and transmitter placement.

Scenes are Manhattan grids of extruded buildings standing on a flat terrain
plane at ``z = 0``. Every triangle carries an outward unit normal, a material
id, a semantic class and a facet id. A facet is a convex planar polygon made
of one or more triangles; the radio tracer reflects off facets, not triangles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

TX_HEIGHT = 1.6


class Archetype(str, Enum):
    DOWNTOWN = "Downtown"
    MIX = "Mix"
    MARGIN = "Margin"


class SemanticClass(IntEnum):
    TERRAIN = 0
    ROAD = 1
    BUILDING_WALL = 2
    BUILDING_ROOF = 3
    SKY = 255


@dataclass(frozen=True)
class Material:
    """Radio material with ITU-style power-law parameters.

    ``eps_r'(f) = a * f_GHz**b`` and ``sigma(f) = c * f_GHz**d`` in S/m.
    ``albedo`` and ``roughness`` only feed the rasterizer.
    """

    name: str
    permittivity_coeffs: tuple[float, float]
    conductivity_coeffs: tuple[float, float]
    albedo: float
    roughness: float

    def relative_permittivity(self, frequency: float) -> float:
        a, b = self.permittivity_coeffs
        return a * (frequency / 1e9) ** b

    def conductivity(self, frequency: float) -> float:
        c, d = self.conductivity_coeffs
        return c * (frequency / 1e9) ** d

    def complex_permittivity(self, frequency: float) -> complex:
        eps0 = 8.8541878128e-12
        return complex(
            self.relative_permittivity(frequency),
            -self.conductivity(frequency) / (2.0 * math.pi * frequency * eps0),
        )


CONCRETE = Material("concrete", (5.24, 0.0), (0.0462, 0.7822), albedo=0.7, roughness=0.8)
VERY_DRY_GROUND = Material("very_dry_ground", (3.0, 0.0), (0.00015, 2.52), albedo=0.35, roughness=0.95)

# Index in this tuple is the material id stored on triangles.
MATERIALS: tuple[Material, ...] = (CONCRETE, VERY_DRY_GROUND)
CONCRETE_ID = 0
GROUND_ID = 1

MATERIAL_OF_CLASS = {
    SemanticClass.TERRAIN: GROUND_ID,
    SemanticClass.ROAD: GROUND_ID,
    SemanticClass.BUILDING_WALL: CONCRETE_ID,
    SemanticClass.BUILDING_ROOF: CONCRETE_ID,
}


# (density, height range, lot size, street width)
ARCHETYPE_TABLE = {
    Archetype.DOWNTOWN: (0.85, (40.0, 150.0), 30.0, 15.0),
    Archetype.MIX: (0.6, (10.0, 60.0), 30.0, 15.0),
    Archetype.MARGIN: (0.35, (4.0, 15.0), 30.0, 15.0),
}

L_SHAPE_PROBABILITY = 0.3
MAX_SETBACK_FRACTION = 0.15


@dataclass(frozen=True)
class BlockSpec:
    archetype: Archetype
    grid_extent: float
    street_width: float
    lot_size: float
    building_height_range: tuple[float, float]
    density: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "archetype", Archetype(self.archetype))
        object.__setattr__(self, "building_height_range", tuple(float(h) for h in self.building_height_range))
        self.validate()

    def validate(self) -> None:
        hmin, hmax = self.building_height_range
        if not self.street_width > 0:
            raise ValueError("street_width must be positive")
        if not self.lot_size > 0:
            raise ValueError("lot_size must be positive")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError("density must lie in [0, 1]")
        if not (0 < hmin <= hmax):
            raise ValueError("building height range must satisfy 0 < min <= max")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def for_archetype(cls, archetype, grid_extent: float = 240.0, seed: int = 0, **overrides) -> "BlockSpec":
        density, heights, lot, street = ARCHETYPE_TABLE[Archetype(archetype)]
        params = dict(
            archetype=Archetype(archetype),
            grid_extent=grid_extent,
            street_width=street,
            lot_size=lot,
            building_height_range=heights,
            density=density,
            seed=seed,
        )
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return {
            "archetype": self.archetype.value,
            "grid_extent": self.grid_extent,
            "street_width": self.street_width,
            "lot_size": self.lot_size,
            "building_height_range": list(self.building_height_range),
            "density": self.density,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockSpec":
        if set(d) <= {"archetype", "grid_extent", "seed"}:
            return cls.for_archetype(d["archetype"], d.get("grid_extent", 240.0), d.get("seed", 0))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable triangle soup plus building metadata.

    Array shapes: ``vertices`` (T, 3, 3), ``normals`` (T, 3), ``material_ids``,
    ``semantic`` and ``facet_ids`` (T,). ``footprints`` are CCW polygons (k, 2)
    with matching ``heights``; ``streets`` are road strip rectangles
    ``(x0, y0, x1, y1)``; ``bounds`` is ``[[xmin, ymin, zmin], [xmax, ymax, zmax]]``.
    """

    vertices: np.ndarray
    normals: np.ndarray
    material_ids: np.ndarray
    semantic: np.ndarray
    facet_ids: np.ndarray
    footprints: tuple = ()
    heights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    streets: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    bounds: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))
    datum_z: float = 0.0
    materials: tuple[Material, ...] = MATERIALS

    def __post_init__(self):
        conv = {
            "vertices": (np.float64, (-1, 3, 3)),
            "normals": (np.float64, (-1, 3)),
            "material_ids": (np.int64, (-1,)),
            "semantic": (np.int64, (-1,)),
            "facet_ids": (np.int64, (-1,)),
            "heights": (np.float64, (-1,)),
            "streets": (np.float64, (-1, 4)),
            "bounds": (np.float64, (2, 3)),
        }
        for name, (dtype, shape) in conv.items():
            arr = np.array(getattr(self, name), dtype=dtype).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        fps = []
        for fp in self.footprints:
            a = np.array(fp, dtype=np.float64).reshape(-1, 2)
            a.setflags(write=False)
            fps.append(a)
        object.__setattr__(self, "footprints", tuple(fps))
        if len(self.heights) != len(self.footprints):
            raise ValueError("one height per footprint required")

    @property
    def num_triangles(self) -> int:
        return len(self.vertices)

    @property
    def extent(self) -> float:
        return float(max(self.bounds[1, 0] - self.bounds[0, 0], self.bounds[1, 1] - self.bounds[0, 1]))

    @property
    def center(self) -> np.ndarray:
        c = 0.5 * (self.bounds[0] + self.bounds[1])
        c[2] = self.datum_z
        return c

    def tobytes(self) -> bytes:
        parts = [self.vertices, self.normals, self.material_ids, self.semantic, self.facet_ids,
                 self.heights, self.streets, self.bounds, *self.footprints]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


def _axis_intervals(extent: float, lot: float, street: float):
    """Split ``[-extent/2, extent/2]`` into border/street/lot intervals."""
    pitch = lot + street
    n_lots = int(math.floor((extent - street) / pitch + 1e-9))
    used = n_lots * lot + (n_lots + 1) * street
    x = -extent / 2.0
    out = []
    border = (extent - used) / 2.0
    if border > 1e-9:
        out.append((x, x + border, "border"))
        x += border
    for i in range(n_lots):
        out.append((x, x + street, "street"))
        x += street
        out.append((x, x + lot, "lot"))
        x += lot
    out.append((x, x + street, "street"))
    x += street
    if border > 1e-9:
        out.append((x, extent / 2.0, "border"))
    return out


def _rect_footprint(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def _l_footprint(x0, y0, x1, y1, corner, fx, fy):
    """L-shaped CCW footprint with a notch cut at ``corner`` (0..3).

    Returns the polygon and its decomposition into two roof rectangles.
    """
    w, h = x1 - x0, y1 - y0
    nx, ny = x1 - fx * w, y1 - fy * h
    # Notch at the (x1, y1) corner in canonical orientation.
    poly = np.array([[x0, y0], [x1, y0], [x1, ny], [nx, ny], [nx, y1], [x0, y1]])
    rects = [(x0, y0, x1, ny), (x0, ny, nx, y1)]
    sx = -1.0 if corner in (1, 2) else 1.0
    sy = -1.0 if corner in (2, 3) else 1.0
    cxm, cym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    poly = np.column_stack([cxm + sx * (poly[:, 0] - cxm), cym + sy * (poly[:, 1] - cym)])
    if sx * sy < 0:
        poly = poly[::-1]
    mirrored = []
    for a0, b0, a1, b1 in rects:
        xa, xb = sorted((cxm + sx * (a0 - cxm), cxm + sx * (a1 - cxm)))
        ya, yb = sorted((cym + sy * (b0 - cym), cym + sy * (b1 - cym)))
        mirrored.append((xa, ya, xb, yb))
    return poly, mirrored


class _TriangleSink:
    def __init__(self):
        self.verts, self.normals, self.mats, self.sem, self.facets = [], [], [], [], []
        self.next_facet = 0

    def new_facet(self) -> int:
        f = self.next_facet
        self.next_facet += 1
        return f

    def add(self, a, b, c, semantic, facet):
        a, b, c = (np.asarray(p, dtype=np.float64) for p in (a, b, c))
        n = np.cross(b - a, c - a)
        n = n / np.linalg.norm(n)
        self.verts.append((a, b, c))
        self.normals.append(n)
        self.sem.append(int(semantic))
        self.mats.append(MATERIAL_OF_CLASS[semantic])
        self.facets.append(facet)

    def add_horizontal_rect(self, x0, y0, x1, y1, z, semantic, facet):
        self.add((x0, y0, z), (x1, y0, z), (x1, y1, z), semantic, facet)
        self.add((x0, y0, z), (x1, y1, z), (x0, y1, z), semantic, facet)


def _add_building(sink: _TriangleSink, poly, roof_rects, height: float) -> None:
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        f = sink.new_facet()
        a, b = (p[0], p[1], 0.0), (q[0], q[1], 0.0)
        c, d = (q[0], q[1], height), (p[0], p[1], height)
        sink.add(a, b, c, SemanticClass.BUILDING_WALL, f)
        sink.add(a, c, d, SemanticClass.BUILDING_WALL, f)
    for rx0, ry0, rx1, ry1 in roof_rects:
        sink.add_horizontal_rect(rx0, ry0, rx1, ry1, height, SemanticClass.BUILDING_ROOF, sink.new_facet())


def box_scene(extent: float, boxes=(), ground: bool = True) -> Scene:
    """Scripted scene: a square ground plane of side ``extent`` plus boxes ``(x0, y0, x1, y1, height)``."""
    sink = _TriangleSink()
    h = extent / 2.0
    if ground:
        sink.add_horizontal_rect(-h, -h, h, h, 0.0, SemanticClass.TERRAIN, sink.new_facet())
    footprints, heights = [], []
    for x0, y0, x1, y1, height in boxes:
        poly = _rect_footprint(x0, y0, x1, y1)
        _add_building(sink, poly, [(x0, y0, x1, y1)], height)
        footprints.append(poly)
        heights.append(height)
    zmax = max(heights) if heights else 0.0
    return Scene(
        vertices=np.array(sink.verts).reshape(-1, 3, 3),
        normals=np.array(sink.normals).reshape(-1, 3),
        material_ids=np.array(sink.mats, dtype=np.int64),
        semantic=np.array(sink.sem, dtype=np.int64),
        facet_ids=np.array(sink.facets, dtype=np.int64),
        footprints=tuple(footprints),
        heights=np.array(heights),
        bounds=np.array([[-h, -h, 0.0], [h, h, zmax]]),
    )


def generate_city(spec: BlockSpec) -> Scene:
    """Build a Manhattan-grid city for ``spec``; pure function of the spec."""
    spec.validate()
    E, s, L = float(spec.grid_extent), float(spec.street_width), float(spec.lot_size)
    if E < 2.0 * (L + s):
        raise ValueError(
            f"grid_extent {E} too small: need at least 2*(lot_size + street_width) = {2 * (L + s)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(int(spec.seed)))
    intervals = _axis_intervals(E, L, s)
    sink = _TriangleSink()

    ground = sink.new_facet()
    for ya, yb, ky in intervals:
        for xa, xb, kx in intervals:
            cls = SemanticClass.ROAD if "street" in (kx, ky) else SemanticClass.TERRAIN
            sink.add_horizontal_rect(xa, ya, xb, yb, 0.0, cls, ground)

    streets = []
    for a, b, kind in intervals:
        if kind == "street":
            streets.append((a, -E / 2, b, E / 2))
            streets.append((-E / 2, a, E / 2, b))

    hmin, hmax = spec.building_height_range
    lots = [(a, b) for a, b, kind in intervals if kind == "lot"]
    footprints, heights = [], []
    for ya, yb in lots:
        for xa, xb in lots:
            # Fixed number of draws per lot keeps lots independent of density.
            present = rng.random() < spec.density
            height = rng.uniform(hmin, hmax)
            insets = rng.uniform(0.0, MAX_SETBACK_FRACTION * L, size=4)
            l_shape = rng.random() < L_SHAPE_PROBABILITY
            corner = int(rng.integers(4))
            notch = rng.uniform(0.3, 0.5, size=2)
            if not present:
                continue
            x0, y0, x1, y1 = xa + insets[0], ya + insets[1], xb - insets[2], yb - insets[3]
            if l_shape:
                poly, roof_rects = _l_footprint(x0, y0, x1, y1, corner, notch[0], notch[1])
            else:
                poly, roof_rects = _rect_footprint(x0, y0, x1, y1), [(x0, y0, x1, y1)]
            footprints.append(poly)
            heights.append(height)
            _add_building(sink, poly, roof_rects, height)

    zmax = max(heights) if heights else 0.0
    return Scene(
        vertices=np.array(sink.verts),
        normals=np.array(sink.normals),
        material_ids=np.array(sink.mats),
        semantic=np.array(sink.sem),
        facet_ids=np.array(sink.facets),
        footprints=tuple(footprints),
        heights=np.array(heights),
        streets=np.array(streets).reshape(-1, 4),
        bounds=np.array([[-E / 2, -E / 2, 0.0], [E / 2, E / 2, zmax]]),
    )


def points_in_polygon(points: np.ndarray, poly: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Even-odd containment test; points on the boundary count as inside."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0:1], pts[:, 1:2]
    a = poly
    b = np.roll(poly, -1, axis=0)
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    # Boundary: distance to any edge below tol.
    ex, ey = bx - ax, by - ay
    len2 = ex * ex + ey * ey
    t = np.clip(((x - ax) * ex + (y - ay) * ey) / len2, 0.0, 1.0)
    dist2 = (x - (ax + t * ex)) ** 2 + (y - (ay + t * ey)) ** 2
    on_edge = (dist2 <= tol * tol).any(axis=1)
    crosses = ((ay > y) != (by > y)) & (x < ax + (y - ay) * ex / np.where(ey == 0, 1.0, ey))
    inside = (crosses.sum(axis=1) % 2) == 1
    return inside | on_edge


def distance_to_polygon_boundary(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0:1], pts[:, 1:2]
    a, b = poly, np.roll(poly, -1, axis=0)
    ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    t = np.clip(((x - a[:, 0]) * ex + (y - a[:, 1]) * ey) / (ex * ex + ey * ey), 0.0, 1.0)
    d2 = (x - (a[:, 0] + t * ex)) ** 2 + (y - (a[:, 1] + t * ey)) ** 2
    return np.sqrt(d2.min(axis=1))


class InsufficientFreeAreaError(RuntimeError):
    pass


def sample_tx_positions(scene: Scene, n: int, seed: int, clearance: float = 0.0,
                        batch: int = 256) -> np.ndarray:
    """Draw ``n`` transmitter positions 1.6 m above the datum, outside footprints.

    Candidates are uniform over the scene's xy bounds and rejected when they
    fall inside (or on the boundary of) a footprint, or closer than
    ``clearance`` to one. The rejection budget is ``10_000 * n`` candidates.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    lo, hi = scene.bounds[0, :2], scene.bounds[1, :2]
    budget = 10_000 * n
    accepted: list[np.ndarray] = []
    drawn = 0
    while len(accepted) < n:
        if drawn >= budget:
            raise InsufficientFreeAreaError(
                f"only {len(accepted)} of {n} transmitter positions found after {budget} candidates"
            )
        m = min(batch, budget - drawn)
        cand = lo + rng.random((m, 2)) * (hi - lo)
        drawn += m
        ok = np.ones(m, dtype=bool)
        for fp in scene.footprints:
            ok &= ~points_in_polygon(cand, fp)
            if clearance > 0:
                ok &= distance_to_polygon_boundary(cand, fp) > clearance
        for c in cand[ok]:
            accepted.append(c)
            if len(accepted) == n:
                break
    xy = np.array(accepted)
    return np.column_stack([xy, np.full(n, scene.datum_z + TX_HEIGHT)])
