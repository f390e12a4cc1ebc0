"""Planar electrode layouts: point traps and addressable trap arrays.

All lengths are in meters.  Electrodes are stored as the metal actually on
the board; the gaps between them are recorded once, as ``layout.gap``, and
the field solver splits each gap at its midline.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon, box
from shapely.geometry.polygon import orient
from shapely.ops import unary_union

from .errors import GeometryError, InvalidParameterError

ROLES = ("rf_fixed", "rf_addressable", "dc", "ground")
LAYOUT_VERSION = 1
DEFAULT_VERTICES = 64
FIXED_RF_GROUP = "rf"
GROUND_GROUP = "gnd"


@dataclass(frozen=True, eq=False)
class Electrode:
    id: str
    outer: np.ndarray
    role: str
    drive_group: str
    holes: tuple = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidParameterError(f"electrode {self.id!r}: unknown role {self.role!r}")
        object.__setattr__(self, "outer", np.asarray(self.outer, dtype=float).reshape(-1, 2))
        object.__setattr__(
            self, "holes", tuple(np.asarray(h, dtype=float).reshape(-1, 2) for h in self.holes)
        )

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.outer, [h for h in self.holes])

    @property
    def is_rf(self) -> bool:
        return self.role in ("rf_fixed", "rf_addressable")

    def loops(self):
        """Boundary loops with outer counter-clockwise and holes clockwise."""
        yield _ccw(self.outer)
        for h in self.holes:
            yield _ccw(h)[::-1]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "role": self.role,
            "drive_group": self.drive_group,
            "outer": self.outer.tolist(),
            "holes": [h.tolist() for h in self.holes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Electrode":
        return cls(
            id=d["id"],
            outer=np.array(d["outer"], dtype=float),
            role=d["role"],
            drive_group=d["drive_group"],
            holes=tuple(np.array(h, dtype=float) for h in d.get("holes", [])),
        )


@dataclass(frozen=True, eq=False)
class ElectrodeLayout:
    electrodes: tuple
    bounding_region: tuple
    ground_plane_height: float | None = None
    gap: float = 0.0
    sites: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "electrodes", tuple(self.electrodes))
        object.__setattr__(self, "bounding_region", tuple(float(v) for v in self.bounding_region))
        object.__setattr__(self, "sites", np.asarray(self.sites, dtype=float).reshape(-1, 2))
        if self.ground_plane_height is not None and not self.ground_plane_height > 0:
            raise InvalidParameterError("ground_plane_height must be positive")
        if self.gap < 0:
            raise InvalidParameterError("gap must be non-negative")

    def __getitem__(self, eid: str) -> Electrode:
        for e in self.electrodes:
            if e.id == eid:
                return e
        raise KeyError(eid)

    @property
    def drive_groups(self) -> list[str]:
        seen = []
        for e in self.electrodes:
            if e.drive_group not in seen:
                seen.append(e.drive_group)
        return seen

    @property
    def addressable_groups(self) -> list[str]:
        return [g for g in self.drive_groups
                if any(e.role == "rf_addressable" for e in self.group(g))]

    @property
    def rf_groups(self) -> list[str]:
        return [g for g in self.drive_groups if any(e.is_rf for e in self.group(g))]

    def group(self, name: str) -> list[Electrode]:
        return [e for e in self.electrodes if e.drive_group == name]

    @property
    def pitch(self) -> float | None:
        if len(self.sites) < 2:
            return None
        d = np.linalg.norm(self.sites[:, None, :] - self.sites[None, :, :], axis=-1)
        return float(d[d > 0].min())

    @property
    def extent(self) -> float:
        x0, y0, x1, y1 = self.bounding_region
        return max(x1 - x0, y1 - y0)

    def with_ground_plane(self, height: float | None) -> "ElectrodeLayout":
        return ElectrodeLayout(self.electrodes, self.bounding_region, height, self.gap,
                               self.sites, self.name)

    def to_dict(self) -> dict:
        return {
            "version": LAYOUT_VERSION,
            "name": self.name,
            "electrodes": [e.to_dict() for e in self.electrodes],
            "ground_plane_height": self.ground_plane_height,
            "bounding_region": list(self.bounding_region),
            "gap": self.gap,
            "sites": self.sites.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ElectrodeLayout":
        if d.get("version") != LAYOUT_VERSION:
            raise InvalidParameterError(f"unsupported layout version {d.get('version')!r}")
        return cls(
            electrodes=tuple(Electrode.from_dict(e) for e in d["electrodes"]),
            bounding_region=tuple(d["bounding_region"]),
            ground_plane_height=d.get("ground_plane_height"),
            gap=d.get("gap", 0.0),
            sites=np.array(d.get("sites", []), dtype=float).reshape(-1, 2),
            name=d.get("name", "custom"),
        )

    def save(self, path) -> None:
        # repr-precision floats make the round trip bit-exact
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ElectrodeLayout":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ArrayParams:
    """Dimensions of a square-lattice addressable array.

    ``inner_ground_radius`` and ``addressing_electrode_length`` default so the
    addressing electrode plus one gap spans 90% of the pitch and the
    addressing electrode runs right up to the ground discs.
    """
    rows: int = 2
    cols: int = 2
    pitch: float = 6e-3
    inner_ground_radius: float | None = None
    addressing_electrode_length: float | None = None
    gap: float = 50e-6
    addressing_width: float | None = None
    ring_width: float | None = None
    outer_ground_width: float | None = None
    ground_plane_height: float | None = None
    n_vertices: int = DEFAULT_VERTICES

    @property
    def r0(self) -> float:
        if self.inner_ground_radius is not None:
            return self.inner_ground_radius
        return (0.1 * self.pitch - self.gap) / 2

    @property
    def la(self) -> float:
        if self.addressing_electrode_length is not None:
            return self.addressing_electrode_length
        return self.pitch - 2 * self.r0 - 2 * self.gap

    @property
    def wa(self) -> float:
        if self.addressing_width is not None:
            return self.addressing_width
        return 2 * self.r0

    @property
    def ring(self) -> float:
        return self.ring_width if self.ring_width is not None else self.pitch / 2

    @property
    def outer_ground(self) -> float:
        return self.outer_ground_width if self.outer_ground_width is not None else self.pitch

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise InvalidParameterError("rows and cols must be positive")
        lengths = dict(pitch=self.pitch, inner_ground_radius=self.r0, gap=self.gap,
                       addressing_width=self.wa, ring_width=self.ring,
                       outer_ground_width=self.outer_ground)
        if self.rows * self.cols > 1:
            lengths["addressing_electrode_length"] = self.la
        for k, v in lengths.items():
            if not v > 0:
                raise InvalidParameterError(f"{k} must be positive, got {v!r}")
        if self.rows * self.cols > 1 and not self.la + self.gap < self.pitch:
            raise InvalidParameterError("addressing_electrode_length + gap must be below the pitch")
        if 2 * self.r0 + 2 * self.gap >= self.pitch:
            raise InvalidParameterError("ground discs overlap at this pitch")
        if self.ground_plane_height is not None and not self.ground_plane_height > 0:
            raise InvalidParameterError("ground_plane_height must be positive")
        if self.n_vertices < 8 or self.n_vertices % 4:
            raise InvalidParameterError("n_vertices must be a multiple of 4, at least 8")


def _ccw(xy: np.ndarray) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    area2 = np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)
    return xy if area2 >= 0 else xy[::-1].copy()


def circle(center, radius: float, n: int = DEFAULT_VERTICES) -> np.ndarray:
    t = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])


def _require_positive(**kw):
    for k, v in kw.items():
        if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
            raise InvalidParameterError(f"{k} must be a positive length, got {v!r}")


def make_point_trap(inner_ground_radius: float, ring_width: float, gap: float,
                    outer_ground_width: float | None = None,
                    ground_plane_height: float | None = None,
                    n_vertices: int = DEFAULT_VERTICES) -> ElectrodeLayout:
    """Single point trap: ground disc, RF annulus, outer ground."""
    if outer_ground_width is None:
        outer_ground_width = inner_ground_radius + 2 * gap + ring_width
    _require_positive(inner_ground_radius=inner_ground_radius, ring_width=ring_width,
                      gap=gap, outer_ground_width=outer_ground_width)
    r0 = inner_ground_radius
    r1 = r0 + gap
    r2 = r1 + ring_width
    r3 = r2 + gap
    half = r3 + outer_ground_width
    c = (0.0, 0.0)
    sq = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
    electrodes = (
        Electrode("center", circle(c, r0, n_vertices), "ground", GROUND_GROUP),
        Electrode("rf_ring", circle(c, r2, n_vertices), "rf_fixed", FIXED_RF_GROUP,
                  holes=(circle(c, r1, n_vertices)[::-1],)),
        Electrode("outer_ground", sq, "ground", GROUND_GROUP,
                  holes=(circle(c, r3, n_vertices)[::-1],)),
    )
    return ElectrodeLayout(electrodes, (-half, -half, half, half), ground_plane_height, gap,
                           np.zeros((1, 2)), name="point")


def _polys(geom) -> list[Polygon]:
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    if isinstance(geom, MultiPolygon):
        return list(geom.geoms)
    return [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon) and g.area > 0]


def _electrode_from_polygon(eid, poly: Polygon, role, group) -> Electrode:
    poly = orient(poly, sign=1.0)
    outer = np.asarray(poly.exterior.coords)[:-1]
    holes = tuple(np.asarray(h.coords)[:-1] for h in poly.interiors)
    return Electrode(eid, outer, role, group, holes)


def _snap(geom, tol):
    # drop sliver artifacts from boolean ops
    return shapely.set_precision(geom, tol * 1e-4) if tol > 0 else geom


def make_addressable_array(params: ArrayParams) -> ElectrodeLayout:
    """Rows x cols array of point traps sharing addressable RF electrodes.

    Between each pair of lattice neighbours sits an ``rf_addressable`` bar
    with its own drive group.  Fixed-RF filler occupies the interior of each
    lattice cell, a fixed-RF ring surrounds the array and an outer ground
    surrounds the ring.  Shapes are first built as a gapless tiling, then
    every cell is shrunk by half a gap.
    """
    params.validate()
    p = params
    if p.rows == 1 and p.cols == 1:
        return make_point_trap(p.r0, p.ring, p.gap, p.outer_ground,
                               p.ground_plane_height, p.n_vertices)
    a, g, n = p.pitch, p.gap, p.n_vertices
    rho = p.r0 + g / 2
    xs = (np.arange(p.cols) - (p.cols - 1) / 2) * a
    ys = (np.arange(p.rows) - (p.rows - 1) / 2) * a
    sites = np.array([(x, y) for y in ys for x in xs])
    disc_cells = [Polygon(circle(s, rho, n)) for s in sites]
    discs = unary_union(disc_cells)

    half_len = (p.la + g) / 2
    if p.la + g >= a - 2 * rho - 1e-12 * a:
        # run into the discs so the bar ends follow the disc outline
        half_len = a / 2
    half_w = (p.wa + g) / 2
    bars = []
    for r in range(p.rows):
        for c in range(p.cols):
            i = r * p.cols + c
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr >= p.rows or cc >= p.cols:
                    continue
                j = rr * p.cols + cc
                m = (sites[i] + sites[j]) / 2
                d = (sites[j] - sites[i]) / a
                e = np.array([-d[1], d[0]])
                corners = [m - d * half_len - e * half_w, m + d * half_len - e * half_w,
                           m + d * half_len + e * half_w, m - d * half_len + e * half_w]
                cell = Polygon(corners)
                # keep clear of the perpendicular bars meeting at each site
                for s, sgn in ((sites[i], 1), (sites[j], -1)):
                    big = 4 * a
                    dd = d * sgn
                    ee = np.array([-dd[1], dd[0]])
                    wedge = Polygon([s, s + big * (dd - ee), s + big * (dd + ee)])
                    cell = cell.intersection(wedge)
                cell = cell.difference(discs)
                bars.append(((r, c, rr, cc), cell))
    bar_union = unary_union([b for _, b in bars])

    x0, x1 = xs[0], xs[-1]
    y0, y1 = ys[0], ys[-1]
    hull = box(x0, y0, x1, y1)
    filler = hull.difference(bar_union).difference(discs)
    outer_rf = hull.buffer(p.ring + rho, quad_segs=n // 4)
    ring = outer_rf.difference(hull).difference(bar_union).difference(discs)
    ground_outer = outer_rf.buffer(p.outer_ground, join_style="mitre")
    bx0, by0, bx1, by1 = ground_outer.bounds
    bbox = box(bx0, by0, bx1, by1)
    outer_gnd = bbox.difference(outer_rf)

    def shrink(geom):
        return _snap(geom.buffer(-g / 2, join_style="mitre"), g)

    electrodes = []
    for k, s in enumerate(sites):
        electrodes.append(_electrode_from_polygon(
            f"site_{k}", shrink(Polygon(circle(s, rho, n))), "ground", GROUND_GROUP))
    for (r, c, rr, cc), cell in bars:
        name = f"addr_r{r}c{c}_r{rr}c{cc}"
        polys = _polys(shrink(cell))
        if len(polys) != 1:
            raise GeometryError(f"addressing electrode {name} split into {len(polys)} pieces")
        electrodes.append(_electrode_from_polygon(name, polys[0], "rf_addressable", name))
    fill_polys = sorted(_polys(shrink(filler)), key=lambda q: (round(q.centroid.y, 12),
                                                               round(q.centroid.x, 12)))
    for k, q in enumerate(fill_polys):
        electrodes.append(_electrode_from_polygon(f"filler_{k}", q, "rf_fixed", FIXED_RF_GROUP))
    ring_polys = _polys(shrink(ring))
    for k, q in enumerate(ring_polys):
        electrodes.append(_electrode_from_polygon(
            "rf_ring" if len(ring_polys) == 1 else f"rf_ring_{k}", q, "rf_fixed", FIXED_RF_GROUP))
    for k, q in enumerate(_polys(shrink(outer_gnd))):
        electrodes.append(_electrode_from_polygon(
            "outer_ground" if k == 0 else f"outer_ground_{k}", q, "ground", GROUND_GROUP))

    layout = ElectrodeLayout(tuple(electrodes), (bx0, by0, bx1, by1), p.ground_plane_height,
                             g, sites, name=f"array{p.rows}x{p.cols}")
    problems = validate_layout(layout)
    if problems:
        raise GeometryError("; ".join(problems))
    return layout


def validate_layout(layout: ElectrodeLayout) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    polys = {}
    for e in layout.electrodes:
        outer = Polygon(e.outer)
        if len(e.outer) < 3 or not outer.is_valid or not outer.exterior.is_simple:
            out.append(f"{e.id}: outer polygon is not simple")
            continue
        for k, h in enumerate(e.holes):
            hp = Polygon(h)
            if len(h) < 3 or not hp.is_valid:
                out.append(f"{e.id}: hole {k} is not simple")
            elif not outer.contains(hp):
                out.append(f"{e.id}: hole {k} not strictly inside outer polygon")
        poly = e.polygon
        if not poly.is_valid:
            out.append(f"{e.id}: polygon with holes is invalid ({shapely.is_valid_reason(poly)})")
            continue
        polys[e.id] = poly
    ids = list(polys)
    tree = shapely.STRtree([polys[i] for i in ids])
    for a_idx, b_idx in zip(*tree.query([polys[i] for i in ids], predicate="intersects")):
        if a_idx >= b_idx:
            continue
        a, b = ids[a_idx], ids[b_idx]
        inter = polys[a].intersection(polys[b])
        if inter.area > 1e-12 * max(polys[a].area, polys[b].area):
            out.append(f"{a}, {b}: electrodes overlap")
    x0, y0, x1, y1 = layout.bounding_region
    bound = box(x0, y0, x1, y1).buffer(1e-9 * max(layout.extent, 1e-12))
    for eid, poly in polys.items():
        if not bound.contains(poly):
            out.append(f"{eid}: outside bounding region")
    if layout.ground_plane_height is not None and not layout.ground_plane_height > 0:
        out.append("ground plane height must be positive")
    seen = set()
    for e in layout.electrodes:
        if e.id in seen:
            out.append(f"{e.id}: duplicate electrode id")
        seen.add(e.id)
    return out


def array4x4_params(**overrides) -> ArrayParams:
    """4x4, 1.5 mm pitch, 400 um ground discs, ground plane 1.5 mm above."""
    kw = dict(rows=4, cols=4, pitch=1.5e-3, inner_ground_radius=200e-6, gap=50e-6,
              ground_plane_height=1.5e-3)
    kw.update(overrides)
    return ArrayParams(**kw)


def array2x2_params(**overrides) -> ArrayParams:
    """2x2 array at 6 mm pitch with a ground plane half a pitch above."""
    kw = dict(rows=2, cols=2, pitch=6e-3)
    kw.update(overrides)
    if "ground_plane_height" not in overrides:
        kw["ground_plane_height"] = kw["pitch"] / 2
    return ArrayParams(**kw)


def reflect(layout: ElectrodeLayout, axis: str) -> ElectrodeLayout:
    """Mirror a layout across x=0 (axis='x') or y=0 (axis='y')."""
    s = np.array([-1.0, 1.0]) if axis == "x" else np.array([1.0, -1.0])
    es = tuple(Electrode(e.id, e.outer * s, e.role, e.drive_group, tuple(h * s for h in e.holes))
               for e in layout.electrodes)
    x0, y0, x1, y1 = layout.bounding_region
    b = (-x1, y0, -x0, y1) if axis == "x" else (x0, -y1, x1, -y0)
    return ElectrodeLayout(es, b, layout.ground_plane_height, layout.gap, layout.sites * s,
                           layout.name)
