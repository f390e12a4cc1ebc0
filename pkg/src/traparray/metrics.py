"""Pseudopotential maps and per-site trap metrics.

Energies are in eV throughout; Hessians are reported in J/m^2.  Most
routines take either a physical setup (layout, drive, species) or a plain
callable ``f(points) -> eV`` so that analytic test potentials can be run
through the same code.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import constants as const
from scipy import ndimage

from . import _kernels
from .errors import DomainError, InvalidParameterError, SaddleNotMinimumError
from .field import DEFAULT_IMAGES, DriveConfig, solver_for
from .geometry import ElectrodeLayout

E_CHARGE = const.e
STABLE_RATIO = 1.0 / 7.0
MARGINAL_RATIO = 0.25
# axial geometry factor and trap efficiency of the hyperbolic reference trap
K_AXIAL = math.sqrt(2.0)
KAPPA_TYPICAL = 0.2

Potential = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Species:
    charge: float
    mass: float
    label: str = ""

    def __post_init__(self):
        if self.charge == 0:
            raise InvalidParameterError("species charge must be non-zero")
        if not self.mass > 0:
            raise InvalidParameterError("species mass must be positive")

    @property
    def q_over_m(self) -> float:
        return self.charge / self.mass

    def to_dict(self) -> dict:
        return {"charge": self.charge, "mass": self.mass, "label": self.label}

    @classmethod
    def from_dict(cls, d) -> "Species":
        return cls(float(d["charge"]), float(d["mass"]), d.get("label", ""))


CA40 = Species(const.e, 39.962590863 * const.atomic_mass, "Ca-40+")

# 20 um diameter sphere at 1 g/cm^3 (pollen-like dust grain)
DUST_MASS = 1000.0 * 4.0 / 3.0 * math.pi * (10e-6) ** 3


def dust_species(q_over_m: float, mass: float = DUST_MASS) -> Species:
    """Charged grain with the given charge-to-mass ratio."""
    return Species(q_over_m * mass, mass, "dust")


class PseudoPotential:
    """Callable effective potential (eV) of a species in a drive.

    ``q^2 |E_rf|^2 / (4 m Omega^2)`` plus ``q * phi_dc`` when any DC bias is
    set, both expressed in eV.
    """

    def __init__(self, layout: ElectrodeLayout, drive: DriveConfig, species: Species,
                 n_images: int = DEFAULT_IMAGES):
        self.layout = layout
        self.drive = drive
        self.species = species
        self.solver = solver_for(layout, n_images)
        groups = self.solver.groups
        self.rf = drive.rf_amplitudes(layout, groups)
        self.dc = drive.dc_voltages(groups)
        self.has_dc = bool(np.any(self.dc != 0))
        q, m = species.charge, species.mass
        self.prefactor = q * q / (4.0 * m * drive.omega ** 2) / E_CHARGE
        self.dc_factor = q / E_CHARGE

    def rf_field(self, pts) -> np.ndarray:
        _, g = self.solver.basis(np.atleast_2d(pts))
        return -np.einsum("nkc,k->nc", g, self.rf)

    def from_basis(self, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Potential from precomputed group weights ``w`` and gradients ``g``."""
        e = np.einsum("nkc,k->nc", g, self.rf)
        val = self.prefactor * np.einsum("nc,nc->n", e, e)
        if self.has_dc:
            val = val + self.dc_factor * (w @ self.dc)
        return val

    def __call__(self, pts, chunk: int = 4096) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.empty(len(pts))
        for s in range(0, len(pts), chunk):
            out[s:s + chunk] = self.from_basis(*self.solver.basis(pts[s:s + chunk]))
        return out


def pseudopotential_at(layout, drive, species, point, n_images=DEFAULT_IMAGES):
    """Effective potential in eV at one point or an (n, 3) array of points."""
    p = np.asarray(point, dtype=float)
    val = PseudoPotential(layout, drive, species, n_images)(p.reshape(-1, 3))
    return float(val[0]) if p.ndim == 1 else val


def pseudopotential_from_field(e_field, species: Species, omega: float) -> np.ndarray:
    """Pseudopotential energy in eV for given RF field amplitudes (V/m)."""
    e = np.asarray(e_field, dtype=float)
    e2 = np.sum(e * e, axis=-1)
    return species.charge ** 2 * e2 / (4.0 * species.mass * omega ** 2) / E_CHARGE


# ---------------------------------------------------------------- sampling

def characteristic_length(layout: ElectrodeLayout) -> float:
    """Pitch for arrays, otherwise the outer radius of the RF electrodes."""
    if layout.pitch is not None:
        return layout.pitch
    rf = [e for e in layout.electrodes if e.is_rf]
    pts = np.vstack([e.outer for e in rf]) if rf else np.vstack([e.outer for e in layout.electrodes])
    c = layout.sites[0] if len(layout.sites) else pts.mean(axis=0)
    return float(np.max(np.linalg.norm(pts - c, axis=1)))


def graded_axis(lo: float, hi: float, core_lo: float, core_hi: float, h: float,
                growth: float = 1.25) -> np.ndarray:
    """Points with spacing ``h`` on [core_lo, core_hi], growing geometrically outside."""
    core_lo, core_hi = max(lo, core_lo), min(hi, core_hi)
    n = max(1, int(math.ceil((core_hi - core_lo) / h)))
    core = np.linspace(core_lo, core_hi, n + 1)
    step = (core_hi - core_lo) / n
    left, right = [], []
    x, s = core_lo, step
    while x > lo + 1e-12 * (hi - lo):
        s *= growth
        x = max(lo, x - s)
        left.append(x)
    x, s = core_hi, step
    while x < hi - 1e-12 * (hi - lo):
        s *= growth
        x = min(hi, x + s)
        right.append(x)
    return np.concatenate([left[::-1], core, right])


@dataclass
class SamplingRegion:
    """Axis-aligned box with graded sampling: fine in ``core``, coarser outside."""
    lo: np.ndarray
    hi: np.ndarray
    core_lo: np.ndarray
    core_hi: np.ndarray
    spacing: float
    z_spacing: float | None = None

    def axes(self, refine: float = 1.0):
        h = self.spacing / refine
        hz = (self.z_spacing or self.spacing) / refine
        out = []
        for k in range(3):
            out.append(graded_axis(self.lo[k], self.hi[k], self.core_lo[k], self.core_hi[k],
                                   hz if k == 2 else h))
        return tuple(out)


def default_region(layout: ElectrodeLayout, spacing: float | None = None,
                   z_core: float | None = None) -> SamplingRegion:
    """Bounding region times [eps, H - eps] (or up to 4 pitch without a ground plane)."""
    length = characteristic_length(layout)
    x0, y0, x1, y1 = layout.bounding_region
    if layout.ground_plane_height is not None:
        eps = 0.01 * min(layout.ground_plane_height, length)
        zmax = layout.ground_plane_height - eps
    else:
        eps = 0.01 * length
        zmax = 4.0 * length
    rf = [e.polygon for e in layout.electrodes if e.is_rf]
    if rf:
        bx = np.array([p.bounds for p in rf])
        cx0, cy0, cx1, cy1 = bx[:, 0].min(), bx[:, 1].min(), bx[:, 2].max(), bx[:, 3].max()
    else:
        cx0, cy0, cx1, cy1 = x0, y0, x1, y1
    h = spacing if spacing is not None else length / 24.0
    zc = z_core if z_core is not None else min(zmax, 1.5 * length)
    return SamplingRegion(np.array([x0, y0, eps]), np.array([x1, y1, zmax]),
                          np.array([cx0, cy0, eps]), np.array([cx1, cy1, zc]), h)


@dataclass
class PotentialGrid:
    """Potential sampled on a rectilinear (possibly graded) grid."""
    axes: tuple
    values: np.ndarray

    @classmethod
    def sample(cls, potential: Potential, axes) -> "PotentialGrid":
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.asarray(potential(pts), dtype=float).reshape(mesh[0].shape)
        return cls(axes, vals)

    @property
    def shape(self):
        return self.values.shape

    def point(self, idx) -> np.ndarray:
        return np.array([self.axes[k][idx[k]] for k in range(3)])

    def nearest(self, p) -> tuple:
        return tuple(int(np.argmin(np.abs(self.axes[k] - p[k]))) for k in range(3))

    def cell_size(self, idx) -> np.ndarray:
        out = np.empty(3)
        for k in range(3):
            a = self.axes[k]
            i = idx[k]
            lo, hi = a[max(i - 1, 0)], a[min(i + 1, len(a) - 1)]
            out[k] = (hi - lo) / max(1, min(i + 1, len(a) - 1) - max(i - 1, 0))
        return out

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0], m[-1] = True, True
        m[:, 0], m[:, -1] = True, True
        m[:, :, 0], m[:, :, -1] = True, True
        return m

    def connect(self, start: tuple, target: tuple | None = None):
        """Minimax level joining ``start`` to ``target`` or to the box boundary.

        Returns (level, saddle_index) or (inf, None) when never connected.
        """
        nx, ny, nz = self.shape
        flat = np.ascontiguousarray(self.values.ravel())
        s = np.ravel_multi_index(start, self.shape)
        t = -1 if target is None else int(np.ravel_multi_index(target, self.shape))
        v = _kernels.minimax_connect(flat, nx, ny, nz, int(s), t,
                                     np.ascontiguousarray(self.boundary_mask().ravel()))
        if v < 0:
            return math.inf, None
        idx = np.unravel_index(v, self.shape)
        return float(flat[v]), tuple(int(i) for i in idx)

    def local_minima(self) -> list[tuple]:
        v = self.values
        lo = ndimage.minimum_filter(v, size=3, mode="nearest")
        hi = ndimage.maximum_filter(v, size=3, mode="nearest")
        mask = (v <= lo) & (hi > v) & ~self.boundary_mask()
        idx = np.argwhere(mask)
        order = np.argsort(v[mask], kind="stable")
        return [tuple(int(i) for i in idx[k]) for k in order]

    def slice_points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------- local analysis

def gradient_fd(potential: Potential, p, h: float) -> np.ndarray:
    """Central-difference gradient with one Richardson step."""
    p = np.asarray(p, dtype=float)
    offs = []
    for step in (h, h / 2):
        for k in range(3):
            d = np.zeros(3)
            d[k] = step
            offs.extend([p + d, p - d])
    f = potential(np.array(offs))
    g1 = (f[0:6:2] - f[1:6:2]) / (2 * h)
    g2 = (f[6:12:2] - f[7:12:2]) / h
    return (4 * g2 - g1) / 3


def hessian_fd(potential: Potential, p, h: float, richardson: bool = True) -> np.ndarray:
    """Symmetric Hessian by second-order central differences.

    With ``richardson`` the estimates at steps h and h/2 are combined to
    cancel the leading O(h^2) error.
    """
    p = np.asarray(p, dtype=float)
    steps = (h, h / 2) if richardson else (h,)
    stencil, layout = [p], []
    for s in steps:
        for i in range(3):
            for j in range(i, 3):
                di = np.zeros(3)
                di[i] = s
                dj = np.zeros(3)
                dj[j] = s
                if i == j:
                    stencil.extend([p + di, p - di])
                else:
                    stencil.extend([p + di + dj, p + di - dj, p - di + dj, p - di - dj])
                layout.append((s, i, j))
    f = potential(np.array(stencil))
    f0 = f[0]
    pos = 1
    hs = {}
    for s, i, j in layout:
        if i == j:
            val = (f[pos] - 2 * f0 + f[pos + 1]) / (s * s)
            pos += 2
        else:
            val = (f[pos] - f[pos + 1] - f[pos + 2] + f[pos + 3]) / (4 * s * s)
            pos += 4
        hs.setdefault(s, np.zeros((3, 3)))
        hs[s][i, j] = hs[s][j, i] = val
    if richardson:
        out = (4 * hs[h / 2] - hs[h]) / 3
    else:
        out = hs[h]
    return 0.5 * (out + out.T)


@dataclass
class Refinement:
    position: np.ndarray
    value: float
    converged: bool
    iterations: int


def refine_minimum(potential: Potential, p0, h: float, length: float, max_iter: int = 60,
                   lower=None, upper=None) -> Refinement:
    """Descent on the potential with Armijo backtracking.

    The search direction is the Newton direction when the local Hessian is
    positive definite and steepest descent otherwise.  Stops when the step
    falls below 1e-9 of ``length``.
    """
    p = np.asarray(p0, dtype=float).copy()
    if lower is not None:
        # keep the difference stencil inside the sampled box
        lower = np.asarray(lower) + 2 * h
        upper = np.asarray(upper) - 2 * h
        p = np.clip(p, lower, upper)
    f = float(potential(p[None])[0])
    for it in range(1, max_iter + 1):
        g = gradient_fd(potential, p, h)
        H = hessian_fd(potential, p, h, richardson=False)
        lam = np.linalg.eigvalsh(H)
        if lam[0] > 0:
            d = -np.linalg.solve(H, g)
        else:
            d = -g * (h / max(np.linalg.norm(g), 1e-300)) * 10
        slope = float(g @ d)
        if slope >= 0:
            d = -g * (h / max(np.linalg.norm(g), 1e-300))
            slope = float(g @ d)
        if np.linalg.norm(d) < 1e-9 * length:
            return Refinement(p, f, True, it)
        alpha = 1.0
        while alpha > 1e-8:
            q = p + alpha * d
            if lower is not None:
                q = np.clip(q, lower, upper)
            if q[2] > 0:
                fq = float(potential(q[None])[0])
                if fq <= f + 1e-4 * alpha * slope:
                    break
            alpha *= 0.5
        else:
            # no descent possible at this resolution: stationary to working precision
            return Refinement(p, f, np.linalg.norm(g) * h < 1e-10 * max(abs(f), 1e-30) or lam[0] > 0,
                              it)
        step = np.linalg.norm(q - p)
        p, f = q, fq
        if step < 1e-9 * length:
            return Refinement(p, f, True, it)
    return Refinement(p, f, False, max_iter)


def refine_saddle(potential: Potential, p0, h: float, length: float, radius: float,
                  max_iter: int = 30):
    """Newton iteration for an index-1 critical point near ``p0``.

    Returns (point, value) or None when the iteration leaves ``radius`` or
    lands on something other than a first-order saddle.
    """
    try:
        return _newton_saddle(potential, np.asarray(p0, dtype=float), h, length, radius,
                              max_iter)
    except DomainError:
        return None


def _newton_saddle(potential, p0, h, length, radius, max_iter):
    p = p0.copy()
    for _ in range(max_iter):
        g = gradient_fd(potential, p, h)
        H = hessian_fd(potential, p, h, richardson=False)
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        nd = np.linalg.norm(d)
        if nd > radius:
            d *= radius / nd / 2
        p = p + d
        if np.linalg.norm(p - p0) > radius or p[2] <= 0:
            return None
        if nd < 1e-9 * length:
            lam = np.linalg.eigvalsh(hessian_fd(potential, p, h))
            scale = np.abs(lam).max()
            if np.sum(lam < -1e-8 * scale) == 1:
                return p, float(potential(p[None])[0])
            return None
    return None


# ---------------------------------------------------------------- metrics

def hessian_step(length: float) -> float:
    return max(1e-3 * length, 1e-6)


@dataclass(frozen=True)
class SecularResult:
    omegas: np.ndarray
    axes: np.ndarray
    hessian: np.ndarray


def secular_from_potential(potential: Potential, site, mass: float, h: float,
                           tol: float = 1e-6) -> SecularResult:
    """Principal frequencies (rad/s) from the Hessian of an eV-valued potential."""
    H = hessian_fd(potential, site, h) * E_CHARGE
    lam, vec = np.linalg.eigh(H)
    scale = np.abs(lam).max()
    if lam[0] < -tol * scale:
        raise SaddleNotMinimumError(
            f"Hessian has negative eigenvalue {lam[0]:.3e} J/m^2 at {np.asarray(site).tolist()}")
    lam = np.clip(lam, 0.0, None)
    # fix the sign of each axis so the largest component is positive
    for k in range(3):
        if vec[np.argmax(np.abs(vec[:, k])), k] < 0:
            vec[:, k] = -vec[:, k]
    return SecularResult(np.sqrt(lam / mass), vec.T.copy(), H)


def secular_frequencies(layout, drive, species, site_position, n_images=DEFAULT_IMAGES):
    """Secular frequencies, principal axes and Hessian at a pseudopotential minimum."""
    pot = PseudoPotential(layout, drive, species, n_images)
    h = hessian_step(characteristic_length(layout))
    h = min(h, 0.25 * float(site_position[2]))
    return secular_from_potential(pot, site_position, species.mass, h)


def classify_stability(ratio: float, stable: float = STABLE_RATIO,
                       marginal: float = MARGINAL_RATIO, eps: float = 1e-9) -> str:
    if ratio <= stable + eps:
        return "stable-centered"
    if ratio <= marginal:
        return "marginal"
    return "unstable-risk"


def stability_ratio(omega_sec: float, omega_drive: float, stable: float = STABLE_RATIO,
                    marginal: float = MARGINAL_RATIO):
    """Return (omega_sec / omega_drive, classification)."""
    if not omega_drive > 0:
        raise InvalidParameterError("drive frequency must be positive")
    if omega_sec < 0:
        raise InvalidParameterError("secular frequency must be non-negative")
    r = omega_sec / omega_drive
    return r, classify_stability(r, stable, marginal)


def depth_efficiency(depth_ev: float, species: Species, drive: DriveConfig,
                     d_ion_electrode: float) -> float:
    """Depth relative to a hyperbolic trap of the same size and drive."""
    if not drive.v_nom > 0:
        raise InvalidParameterError("depth efficiency needs a non-zero RF amplitude")
    if not d_ion_electrode > 0 or depth_ev < 0:
        raise InvalidParameterError("depth and distance must be positive")
    return (4.0 * species.mass * drive.omega ** 2 * d_ion_electrode ** 2 * depth_ev * E_CHARGE
            / (species.charge ** 2 * drive.v_nom ** 2))


@dataclass(frozen=True)
class DepthResult:
    depth: float
    escape_point: np.ndarray
    level: float
    uncertainty: float
    refined: bool


def depth_on_grid(grid: PotentialGrid, site, site_value: float | None = None,
                  potential: Potential | None = None, target=None,
                  length: float | None = None) -> DepthResult:
    """Flood-fill depth from ``site`` to the box boundary (or to ``target``).

    With ``potential`` given, the grid saddle is polished by a Newton
    search for a nearby first-order saddle.
    """
    start = grid.nearest(site)
    if site_value is None:
        site_value = float(grid.values[start])
    tgt = None if target is None else grid.nearest(target)
    level, sidx = grid.connect(start, tgt)
    if sidx is None:
        return DepthResult(math.inf, np.full(3, np.nan), math.inf, math.inf, False)
    cell = grid.cell_size(sidx)
    nb = grid.values[tuple(slice(max(i - 1, 0), i + 2) for i in sidx)]
    unc = float(np.max(np.abs(nb - level)))
    point = grid.point(sidx)
    refined = False
    on_face = any(i == 0 or i == n - 1 for i, n in zip(sidx, grid.shape))
    if potential is not None and sidx != start and not on_face:
        length = length or float(np.linalg.norm(cell)) * 10
        h = 0.05 * float(cell.min())
        res = refine_saddle(potential, point, h, length, radius=2.0 * float(np.linalg.norm(cell)))
        if res is not None and abs(res[1] - level) <= max(unc, 1e-12 * abs(level)):
            unc = abs(res[1] - level)
            point, level = res
            refined = True
    depth = max(0.0, level - site_value)
    return DepthResult(depth, point, level, unc, refined)


def trap_depth(layout, drive, species, site, region: SamplingRegion | None = None,
               grid: PotentialGrid | None = None, n_images=DEFAULT_IMAGES) -> DepthResult:
    """Depth (eV) along the lowest escape path from ``site`` and the escape saddle."""
    pot = PseudoPotential(layout, drive, species, n_images)
    if grid is None:
        grid = PotentialGrid.sample(pot, (region or default_region(layout)).axes())
    site = np.asarray(site, dtype=float)
    return depth_on_grid(grid, site, float(pot(site[None])[0]), pot,
                         length=characteristic_length(layout))


# ---------------------------------------------------------------- minima & reports

@dataclass
class Minimum:
    position: np.ndarray
    value: float
    converged: bool


def minima_on_grid(grid: PotentialGrid, potential: Potential | None, length: float,
                   max_count: int = 64) -> list[Minimum]:
    """Grid minima polished by Armijo descent; duplicates within half a cell merged."""
    out: list[Minimum] = []
    lower = np.array([a[0] for a in grid.axes])
    upper = np.array([a[-1] for a in grid.axes])
    for idx in grid.local_minima()[:max_count]:
        p = grid.point(idx)
        cell = grid.cell_size(idx)
        if potential is not None:
            h = min(hessian_step(length), 0.1 * float(cell.min()))
            r = refine_minimum(potential, p, h, length, lower=lower, upper=upper)
            m = Minimum(r.position, r.value, r.converged)
        else:
            m = Minimum(p, float(grid.values[idx]), True)
        if any(np.all(np.abs(m.position - o.position) <= 0.5 * cell) for o in out):
            continue
        out.append(m)
    return out


def find_minima(layout, drive, species, search_region: SamplingRegion | None = None,
                grid_resolution: float | None = None, n_images=DEFAULT_IMAGES,
                grid: PotentialGrid | None = None) -> list[Minimum]:
    """All pseudopotential minima inside ``search_region``.

    ``grid_resolution`` is in points per characteristic length (pitch).
    """
    length = characteristic_length(layout)
    if grid_resolution is not None and grid_resolution < 8:
        raise InvalidParameterError("grid_resolution must be at least 8 points per pitch")
    pot = PseudoPotential(layout, drive, species, n_images)
    if grid is None:
        region = search_region or default_region(
            layout, None if grid_resolution is None else length / grid_resolution)
        grid = PotentialGrid.sample(pot, region.axes())
    return minima_on_grid(grid, pot, length)


@dataclass
class TrapSiteReport:
    position: np.ndarray
    secular_frequencies: np.ndarray
    principal_axes: np.ndarray
    stability_ratios: np.ndarray
    classification: str
    depth: float
    depth_uncertainty: float
    escape_point: np.ndarray
    kappa_d: float
    hessian: np.ndarray
    potential: float
    converged: bool = True

    def to_dict(self) -> dict:
        d = {}
        for k, v in asdict(self).items():
            d[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def site_report(pot: PseudoPotential, grid: PotentialGrid, minimum: Minimum) -> TrapSiteReport:
    layout, drive, species = pot.layout, pot.drive, pot.species
    length = characteristic_length(layout)
    pos = minimum.position
    h = min(hessian_step(length), 0.25 * float(pos[2]))
    try:
        sec = secular_from_potential(pot, pos, species.mass, h)
        omegas, axes, hess, ok = sec.omegas, sec.axes, sec.hessian, minimum.converged
    except SaddleNotMinimumError:
        omegas, axes, ok = np.full(3, np.nan), np.eye(3), False
        hess = hessian_fd(pot, pos, h) * E_CHARGE
    dres = depth_on_grid(grid, pos, minimum.value, pot, length=length)
    ratios = omegas / drive.omega
    worst = classify_stability(float(np.nanmax(ratios))) if ok else "unstable-risk"
    kappa = (depth_efficiency(dres.depth, species, drive, float(pos[2]))
             if drive.v_nom > 0 and math.isfinite(dres.depth) else 0.0)
    return TrapSiteReport(pos, omegas, axes, ratios, worst, dres.depth, dres.uncertainty,
                          dres.escape_point, kappa, hess, minimum.value, ok)


def analyze_sites(layout, drive, species, region: SamplingRegion | None = None,
                  n_images=DEFAULT_IMAGES, grid: PotentialGrid | None = None):
    """Find every minimum in the region and build its full report.

    Returns (reports, grid); the grid can be reused for maps and depths.
    """
    pot = PseudoPotential(layout, drive, species, n_images)
    if grid is None:
        grid = PotentialGrid.sample(pot, (region or default_region(layout)).axes())
    mins = minima_on_grid(grid, pot, characteristic_length(layout))
    reports = [site_report(pot, grid, m) for m in mins]
    reports.sort(key=lambda r: (round(r.position[0], 12), round(r.position[1], 12)))
    return reports, grid
