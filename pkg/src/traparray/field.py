"""Electrostatics of planar electrode layouts in the gapless-plane model.

An electrode held at potential V contributes ``V * Omega / (2 pi)`` at a
point above the plane, where Omega is the solid angle it subtends.  A
grounded plane at height H is handled with the two-plane image series,
truncated at ``n_images`` on each side and closed with an analytic
far-image remainder.  Gaps are split at their midline by growing every
electrode by half a gap before evaluation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np
from scipy import constants as const
from shapely.geometry import Polygon, box
from shapely.geometry.polygon import orient
from shapely.ops import unary_union

from . import _kernels
from .errors import DomainError, InvalidParameterError
from .geometry import ElectrodeLayout

DEFAULT_IMAGES = 8


@dataclass(frozen=True)
class DriveConfig:
    """RF amplitude, drive frequency and per-group settings.

    Groups missing from ``amplitude_fraction`` run at full amplitude if they
    contain RF electrodes; groups missing from ``dc_bias`` sit at 0 V.
    """
    v_nom: float
    omega: float
    amplitude_fraction: Mapping[str, float] = field(default_factory=dict)
    dc_bias: Mapping[str, float] = field(default_factory=dict)
    phase: float = 0.0

    def __post_init__(self):
        if not self.omega > 0:
            raise InvalidParameterError("drive frequency omega must be positive")
        if not self.v_nom >= 0:
            raise InvalidParameterError("v_nom must be non-negative")
        for k, v in self.amplitude_fraction.items():
            if not 0.0 <= v <= 1.0:
                raise InvalidParameterError(f"amplitude fraction for {k!r} outside [0, 1]: {v}")
        object.__setattr__(self, "amplitude_fraction", dict(self.amplitude_fraction))
        object.__setattr__(self, "dc_bias", dict(self.dc_bias))

    def with_fraction(self, group: str, fraction: float) -> "DriveConfig":
        fr = dict(self.amplitude_fraction)
        fr[group] = fraction
        return DriveConfig(self.v_nom, self.omega, fr, self.dc_bias, self.phase)

    def scaled(self, factor: float) -> "DriveConfig":
        return DriveConfig(self.v_nom * factor, self.omega, self.amplitude_fraction,
                           self.dc_bias, self.phase)

    def rf_amplitudes(self, layout: ElectrodeLayout, groups) -> np.ndarray:
        rf = set(layout.rf_groups)
        return np.array([self.v_nom * self.amplitude_fraction.get(g, 1.0) if g in rf else 0.0
                         for g in groups])

    def dc_voltages(self, groups) -> np.ndarray:
        return np.array([self.dc_bias.get(g, 0.0) for g in groups])

    def to_dict(self) -> dict:
        return {"v_nom": self.v_nom, "omega": self.omega,
                "amplitude_fraction": dict(self.amplitude_fraction),
                "dc_bias": dict(self.dc_bias), "phase": self.phase}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DriveConfig":
        return cls(float(d["v_nom"]), float(d["omega"]), dict(d.get("amplitude_fraction", {})),
                   dict(d.get("dc_bias", {})), float(d.get("phase", 0.0)))


@dataclass(frozen=True)
class BasisEvaluation:
    """Per-electrode potential weights and their gradients at one point."""
    point: np.ndarray
    ids: tuple
    beta: np.ndarray
    grad: np.ndarray

    def __getitem__(self, eid):
        i = self.ids.index(eid)
        return self.beta[i], self.grad[i]


class _EdgeSet:
    """Flattened polygon edges for a set of output columns.

    For the far-image remainder each polygon is also chopped into tiles no
    larger than ``tile`` so that a point-source per tile stays accurate.
    """

    def __init__(self, columns: list[list[Polygon]], tile: float | None = None):
        ax, ay, bx, by, owner = [], [], [], [], []
        cx, cy, area, piece_owner = [], [], [], []
        for k, polys in enumerate(columns):
            for poly in polys:
                poly = orient(poly, sign=1.0)
                for ring, sgn in [(poly.exterior, 1)] + [(r, -1) for r in poly.interiors]:
                    xy = np.asarray(ring.coords)[:-1]
                    nxt = np.roll(xy, -1, axis=0)
                    ax.append(xy[:, 0]); ay.append(xy[:, 1])
                    bx.append(nxt[:, 0]); by.append(nxt[:, 1])
                    owner.append(np.full(len(xy), k))
                for piece in _tiles(poly, tile):
                    c = piece.centroid
                    cx.append(c.x); cy.append(c.y); area.append(piece.area)
                    piece_owner.append(k)
        cat = (lambda v: np.concatenate(v)) if ax else (lambda v: np.zeros(0))
        self.ax, self.ay, self.bx, self.by = (cat(v) for v in (ax, ay, bx, by))
        self.owner = cat(owner).astype(np.int64) if owner else np.zeros(0, np.int64)
        self.cx, self.cy = np.array(cx, float), np.array(cy, float)
        self.area = np.array(area, float)
        self.piece_owner = np.array(piece_owner, dtype=np.int64)
        self.n_out = len(columns)


class FieldSolver:
    """Cached evaluator of potential weights for one layout.

    Columns are either drive groups (``per='group'``, used for drive
    combinations) or individual electrodes (``per='electrode'``).  Images
    beyond the first on each side see simplified outlines (tolerance
    ``lod * H``); their distance makes the difference negligible.
    """

    def __init__(self, layout: ElectrodeLayout, n_images: int = DEFAULT_IMAGES, tail: bool = True,
                 lod: float = 5e-3):
        self.layout = layout
        self.height = layout.ground_plane_height
        self.n_images = int(n_images) if self.height is not None else 0
        if self.n_images < 0:
            raise InvalidParameterError("n_images must be non-negative")
        self.tail = bool(tail) and self.height is not None
        half = layout.gap / 2
        grown = {}
        for e in layout.electrodes:
            poly = e.polygon
            if half > 0:
                poly = poly.buffer(half, join_style="mitre", mitre_limit=10.0)
            grown[e.id] = poly
        self.electrode_ids = tuple(e.id for e in layout.electrodes)
        self.groups = tuple(layout.drive_groups)
        group_cols = []
        for gname in self.groups:
            merged = unary_union([grown[e.id] for e in layout.group(gname)])
            group_cols.append(_polygons(merged))
        elec_cols = [_polygons(grown[i]) for i in self.electrode_ids]
        tile = self.height
        self._sets = {"group": _EdgeSet(group_cols, tile), "electrode": _EdgeSet(elec_cols, tile)}
        self._far = {}
        if self.height is None:
            self.zshift = np.zeros(1)
            self.far_shift = np.zeros(0)
        else:
            near = np.arange(-min(1, self.n_images), min(1, self.n_images) + 1)
            far = np.array([n for n in range(-self.n_images, self.n_images + 1) if abs(n) > 1])
            self.zshift = 2.0 * near * self.height
            self.far_shift = 2.0 * far * self.height
            tol = lod * self.height
            for key, cols in (("group", group_cols), ("electrode", elec_cols)):
                simple = [[q for p in polys for q in _polygons(p.simplify(tol))] for polys in cols]
                self._far[key] = _EdgeSet(simple)

    def columns(self, per: str):
        return self.groups if per == "group" else self.electrode_ids

    def check_domain(self, pts: np.ndarray) -> None:
        z = pts[:, 2]
        if not np.all(np.isfinite(pts)):
            raise DomainError("non-finite evaluation point")
        if np.any(z <= 0):
            raise DomainError("evaluation point on or below the electrode plane")
        if self.height is not None and np.any(z >= self.height):
            raise DomainError("evaluation point on or above the ground plane")

    def basis(self, points, grad: bool = True, per: str = "group", columns=None):
        """Weights ``w[n, k]`` and gradients ``g[n, k, 3]`` at ``points``.

        ``columns`` optionally restricts evaluation to a subset of column
        names; the result then follows that order.
        """
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        self.check_domain(pts)
        names = self.columns(per)
        if columns is None:
            remap = np.arange(len(names))
            n_out = len(names)
        else:
            idx = [names.index(c) for c in columns]
            remap = np.full(len(names), -1, dtype=np.int64)
            remap[idx] = np.arange(len(idx))
            n_out = len(idx)
        es = self._sets[per]
        w, g = _sum_edges(pts, self.zshift, es, remap, n_out, grad)
        if len(self.far_shift):
            fw, fg = _sum_edges(pts, self.far_shift, self._far[per], remap, n_out, grad)
            w += fw
            if grad:
                g += fg
        if self.tail:
            keep = remap[es.piece_owner] >= 0
            if np.any(keep):
                tw, tg = _kernels.image_tail(pts, self.height, self.n_images, es.cx[keep],
                                             es.cy[keep], es.area[keep], grad)
                onehot = _onehot(remap[es.piece_owner][keep], n_out)
                w += tw @ onehot
                if grad:
                    g += np.einsum("npc,pk->nkc", tg, onehot)
        return (w, g) if grad else (w, None)


def _sum_edges(pts, shifts, es: _EdgeSet, remap, n_out, grad):
    owner = remap[es.owner]
    keep = owner >= 0
    return _kernels.solid_angle_sum(pts, shifts, es.ax[keep], es.ay[keep], es.bx[keep],
                                    es.by[keep], owner[keep], n_out, grad)


def _tiles(poly: Polygon, tile: float | None) -> list[Polygon]:
    if tile is None:
        return [poly]
    x0, y0, x1, y1 = poly.bounds
    nx = max(1, math.ceil((x1 - x0) / tile))
    ny = max(1, math.ceil((y1 - y0) / tile))
    if nx * ny == 1:
        return [poly]
    out = []
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    for i in range(nx):
        for j in range(ny):
            piece = poly.intersection(box(xs[i], ys[j], xs[i + 1], ys[j + 1]))
            out.extend(p for p in _polygons(piece))
    return out


def _onehot(owner, n_out):
    m = np.zeros((len(owner), n_out))
    m[np.arange(len(owner)), owner] = 1.0
    return m


def _polygons(geom) -> list[Polygon]:
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    return [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon) and g.area > 0]


@lru_cache(maxsize=16)
def solver_for(layout: ElectrodeLayout, n_images: int = DEFAULT_IMAGES, tail: bool = True) -> FieldSolver:
    return FieldSolver(layout, n_images, tail)


def _as_points(point):
    p = np.asarray(point, dtype=float)
    return p.reshape(-1, 3), p.ndim == 1


def basis_at(layout: ElectrodeLayout, point, n_images: int = DEFAULT_IMAGES) -> BasisEvaluation:
    """Per-electrode weights beta_i and gradients at a single point."""
    pts, _ = _as_points(point)
    s = solver_for(layout, n_images)
    w, g = s.basis(pts[:1], per="electrode")
    return BasisEvaluation(pts[0].copy(), s.electrode_ids, w[0], g[0])


def potential_at(layout: ElectrodeLayout, drive: DriveConfig, point, phase_angle: float = 0.0,
                 n_images: int = DEFAULT_IMAGES):
    """Instantaneous potential (V) with the RF at phase ``phase_angle``."""
    pts, single = _as_points(point)
    s = solver_for(layout, n_images)
    w, _ = s.basis(pts, grad=False)
    v = drive.rf_amplitudes(layout, s.groups) * math.cos(phase_angle) + drive.dc_voltages(s.groups)
    out = w @ v
    return out[0] if single else out


def potential_gradient(layout, drive, point, phase_angle: float = 0.0, n_images=DEFAULT_IMAGES):
    pts, single = _as_points(point)
    s = solver_for(layout, n_images)
    _, g = s.basis(pts)
    v = drive.rf_amplitudes(layout, s.groups) * math.cos(phase_angle) + drive.dc_voltages(s.groups)
    out = np.einsum("nkc,k->nc", g, v)
    return out[0] if single else out


def rf_field_at(layout: ElectrodeLayout, drive: DriveConfig, point, n_images=DEFAULT_IMAGES):
    """Amplitude vector (V/m) of the RF part of the electric field."""
    pts, single = _as_points(point)
    s = solver_for(layout, n_images)
    _, g = s.basis(pts)
    out = -np.einsum("nkc,k->nc", g, drive.rf_amplitudes(layout, s.groups))
    return out[0] if single else out


def dc_field_at(layout: ElectrodeLayout, drive: DriveConfig, point, n_images=DEFAULT_IMAGES):
    pts, single = _as_points(point)
    s = solver_for(layout, n_images)
    _, g = s.basis(pts)
    out = -np.einsum("nkc,k->nc", g, drive.dc_voltages(s.groups))
    return out[0] if single else out


def converged_image_order(layout: ElectrodeLayout, point, rtol: float = 1e-4,
                          start: int = DEFAULT_IMAGES, limit: int = 64) -> int:
    """Smallest image order >= ``start`` whose RF weights change by < rtol.

    Returns ``start`` unchanged for layouts without a ground plane.
    """
    if layout.ground_plane_height is None:
        return start
    pts, _ = _as_points(point)
    n = start
    prev = FieldSolver(layout, n).basis(pts, grad=False)[0]
    while n < limit:
        n2 = 2 * n
        cur = FieldSolver(layout, n2).basis(pts, grad=False)[0]
        scale = np.abs(cur).max()
        if np.abs(cur - prev).max() <= rtol * max(scale, 1e-300):
            return n
        n, prev = n2, cur
    return n


@dataclass
class FieldGrid:
    """RF field amplitude and pseudopotential on a rectilinear grid.

    ``phi_pseudo`` is the pseudopotential energy ``q^2 |E|^2 / (4 m Omega^2)``
    in eV, the unit used by every other depth and map quantity.
    """
    axes: tuple
    e_field: np.ndarray
    phi_pseudo: np.ndarray

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_csv(self) -> str:
        rows = np.column_stack([self.points(), self.e_field, self.phi_pseudo])
        lines = ["x,y,z,Ex,Ey,Ez,phi_pseudo"]
        lines += [",".join(repr(float(v)) for v in r) for r in rows]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        spacing = [float(a[1] - a[0]) if len(a) > 1 else 0.0 for a in self.axes]
        uniform = all(len(a) < 3 or np.allclose(np.diff(a), a[1] - a[0], rtol=1e-9, atol=0)
                      for a in self.axes)
        d = {"origin": [float(a[0]) for a in self.axes], "spacing": spacing if uniform else None,
             "shape": list(self.shape), "axes": [a.tolist() for a in self.axes],
             "order": "lexicographic (x, y, z), z fastest",
             "Ex": self.e_field[:, 0].tolist(), "Ey": self.e_field[:, 1].tolist(),
             "Ez": self.e_field[:, 2].tolist(), "phi_pseudo": self.phi_pseudo.tolist()}
        return json.dumps(d)


def evaluate_grid(layout: ElectrodeLayout, drive: DriveConfig, axes, charge: float, mass: float,
                  n_images: int = DEFAULT_IMAGES, chunk: int = 4096) -> FieldGrid:
    """RF field and pseudopotential at every node of the grid spanned by ``axes``."""
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    s = solver_for(layout, n_images)
    amp = drive.rf_amplitudes(layout, s.groups)
    e = np.empty_like(pts)
    for k in range(0, len(pts), chunk):
        _, g = s.basis(pts[k:k + chunk])
        e[k:k + chunk] = -np.einsum("nkc,k->nc", g, amp)
    phi = charge ** 2 * np.sum(e * e, axis=1) / (4.0 * mass * drive.omega ** 2) / const.e
    return FieldGrid(axes, e, phi)
