"""Addressing-electrode sweeps and interaction figures of merit.

Attenuating the RF on the bar between two point traps pulls the two sites
together, opens a shallow third trap over the bar and finally merges the
pair into one linear trap.  ``sweep_addressing`` maps that morph; the
remaining functions are closed-form gate-time and scaling estimates.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import constants as const
from scipy import optimize
from shapely.geometry import Point
from shapely.ops import unary_union

from .errors import (InsufficientDataError, InvalidParameterError, SaddleNotMinimumError)
from .field import DEFAULT_IMAGES, DriveConfig, solver_for
from .geometry import ElectrodeLayout
from .metrics import (Minimum, PotentialGrid, PseudoPotential, Species, characteristic_length,
                      hessian_step, refine_minimum, secular_from_potential)

MERGE_TOL = 1e-4


def default_fractions() -> list[float]:
    """1.0 down to 0.0 in steps of 0.05, with 0.01 steps from 0.46 to 0.40."""
    coarse = {round(1.0 - 0.05 * k, 2) for k in range(21)}
    fine = {round(0.46 - 0.01 * k, 2) for k in range(7)}
    return sorted(coarse | fine, reverse=True)


# ---------------------------------------------------------------- reports

@dataclass
class MorphPoint:
    fraction: float
    site_positions: np.ndarray
    inter_site_distance: float
    barrier_height: float
    third_trap_present: bool
    saddle_height: float
    third_trap_position: np.ndarray | None
    merged: bool
    min_secular_frequency: float

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
            elif isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d


CSV_COLUMNS = ("fraction", "a_m", "barrier_eV", "saddle_eV", "third_trap", "merged", "omega_min")


@dataclass
class MorphReport:
    group: str
    sweep: list[MorphPoint]
    grid_spacing: float
    merge_tol: float = MERGE_TOL

    @property
    def fractions(self) -> np.ndarray:
        return np.array([p.fraction for p in self.sweep])

    @property
    def distances(self) -> np.ndarray:
        return np.array([p.inter_site_distance for p in self.sweep])

    def point(self, fraction: float) -> MorphPoint:
        k = int(np.argmin(np.abs(self.fractions - fraction)))
        return self.sweep[k]

    def merge_fraction(self) -> float | None:
        """Largest fraction at which the pair counts as merged."""
        merged = [p.fraction for p in self.sweep if p.merged]
        return max(merged) if merged else None

    def third_trap_onset(self) -> float | None:
        """Largest fraction with a third trap over the addressing electrode."""
        hits = [p.fraction for p in self.sweep if p.third_trap_present]
        return max(hits) if hits else None

    def distance_reduction(self, fraction: float | None = None) -> float:
        """Fractional reduction of the inter-site distance from the first sweep point.

        At ``fraction`` if given, otherwise the largest pre-merge reduction.
        """
        ref = self.sweep[0].inter_site_distance
        if fraction is not None:
            return 1.0 - self.point(fraction).inter_site_distance / ref
        pre = [p.inter_site_distance for p in self.sweep if not p.merged]
        return 1.0 - min(pre) / ref

    def to_dict(self) -> dict:
        return {"group": self.group, "grid_spacing": self.grid_spacing,
                "merge_tol": self.merge_tol, "sweep": [p.to_dict() for p in self.sweep]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p in self.sweep:
            w.writerow([repr(p.fraction), repr(p.inter_site_distance), repr(p.barrier_height),
                        repr(p.saddle_height), int(p.third_trap_present), int(p.merged),
                        repr(p.min_secular_frequency)])
        return buf.getvalue()


# ---------------------------------------------------------------- sweep

def bordering_sites(layout: ElectrodeLayout, group: str) -> np.ndarray:
    """The two trap sites closest to the centroid of an addressing group."""
    if group not in layout.addressable_groups:
        raise InvalidParameterError(
            f"unknown addressable group {group!r}; available: {layout.addressable_groups}")
    c = unary_union([e.polygon for e in layout.group(group)]).centroid
    d = np.linalg.norm(layout.sites - np.array([c.x, c.y]), axis=1)
    order = np.argsort(d, kind="stable")[:2]
    return layout.sites[np.sort(order)]


@dataclass(frozen=True)
class MorphFrame:
    """Local frame of a site pair: t along the pair axis, s across it, z up."""
    mid: np.ndarray
    u: np.ndarray
    v: np.ndarray
    half: float

    def to_world(self, local) -> np.ndarray:
        q = np.atleast_2d(np.asarray(local, dtype=float))
        xy = self.mid + np.outer(q[:, 0], self.u) + np.outer(q[:, 1], self.v)
        return np.column_stack([xy, q[:, 2]])

    def to_local(self, point) -> np.ndarray:
        q = np.atleast_2d(np.asarray(point, dtype=float))
        d = q[:, :2] - self.mid
        return np.column_stack([d @ self.u, d @ self.v, q[:, 2]])


def morph_frame(layout: ElectrodeLayout, group: str) -> MorphFrame:
    s = bordering_sites(layout, group)
    d = s[1] - s[0]
    half = 0.5 * float(np.linalg.norm(d))
    u = d / (2 * half)
    return MorphFrame(s.mean(axis=0), u, np.array([-u[1], u[0]]), half)


def morph_axes(layout: ElectrodeLayout, group: str, spacing: float | None = None):
    """Local (t, s, z) grid axes around a site pair.

    Both sites sit on t nodes and s = 0 is a node, so the valley joining
    them is sampled along its centre line.
    """
    length = characteristic_length(layout)
    frame = morph_frame(layout, group)
    h = spacing or length / 60.0
    h = frame.half / max(1, round(frame.half / h))
    margin = 0.25 * length
    nt = int(math.ceil((frame.half + margin) / h))
    ns = int(math.ceil(margin / h))
    height = layout.ground_plane_height
    top = 0.5 * length if height is None else min(0.5 * length, height * (1 - 1e-3))
    eps = 0.005 * length
    return (h * np.arange(-nt, nt + 1), h * np.arange(-ns, ns + 1),
            np.linspace(eps, top, int(math.ceil((top - eps) / h)) + 1))


_STENCIL = np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]],
                    dtype=float)


class _MorphContext:
    """Group basis sampled once on the sweep grid; each fraction is a recombination.

    Barriers between neighbouring minima are read off the valley floor: for
    each position t along the pair axis the potential is minimised over the
    transverse (s, z) plane, and the resulting profile is scanned for
    minima and the maxima between them.  The transverse curvature is far
    larger than the barriers of interest, so this is much more accurate
    than reading levels off the grid nodes.
    """

    def __init__(self, layout, drive, species, group, axes, n_images, merge_tol):
        self.layout, self.drive, self.species, self.group = layout, drive, species, group
        self.n_images = n_images
        self.merge_tol = merge_tol
        self.length = characteristic_length(layout)
        self.frame = morph_frame(layout, group)
        self.axes = axes
        self.spacing = float(axes[0][1] - axes[0][0])
        solver = solver_for(layout, n_images)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = self.frame.to_world(np.stack([m.ravel() for m in mesh], axis=1))
        ws, gs = [], []
        for k in range(0, len(pts), 4096):
            w, g = solver.basis(pts[k:k + 4096])
            ws.append(w)
            gs.append(g)
        self.w = np.concatenate(ws)
        self.g = np.concatenate(gs)
        self.shape = mesh[0].shape
        self.footprint = unary_union([e.polygon for e in layout.group(group)]).buffer(
            layout.gap / 2)
        h = self.spacing
        self.lo = np.array([axes[1][0], axes[2][0]]) + 2 * h
        self.hi = np.array([axes[1][-1], axes[2][-1]]) - 2 * h

    # -- valley floor
    def _local_pot(self, pot, local):
        return pot(self.frame.to_world(local))

    def floor(self, pot, t, start, iters: int = 40):
        """Minimise over (s, z) at each t; returns (values, sz) arrays."""
        t = np.asarray(t, dtype=float)
        sz = np.array(start, dtype=float).reshape(len(t), 2)
        h = self.spacing
        hs = 0.02 * h
        lo, hi = self.lo, self.hi
        sz = np.clip(sz, lo, hi)
        active = np.ones(len(t), dtype=bool)
        f0 = self._local_pot(pot, np.column_stack([t, sz]))
        for _ in range(iters):
            idx = np.flatnonzero(active)
            if not len(idx):
                break
            q = sz[idx, None, :] + hs * _STENCIL[None]
            loc = np.column_stack([np.repeat(t[idx], 9), q.reshape(-1, 2)])
            f = self._local_pot(pot, loc).reshape(-1, 9)
            gs_ = (f[:, 1] - f[:, 2]) / (2 * hs)
            gz = (f[:, 3] - f[:, 4]) / (2 * hs)
            hss = (f[:, 1] - 2 * f[:, 0] + f[:, 2]) / hs ** 2
            hzz = (f[:, 3] - 2 * f[:, 0] + f[:, 4]) / hs ** 2
            hsz = (f[:, 5] - f[:, 6] - f[:, 7] + f[:, 8]) / (4 * hs ** 2)
            det = hss * hzz - hsz ** 2
            grad = np.column_stack([gs_, gz])
            newton = np.column_stack([-(hzz * gs_ - hsz * gz), -(hss * gz - hsz * gs_)])
            newton /= np.where(det != 0, det, 1.0)[:, None]
            gnorm = np.maximum(np.linalg.norm(grad, axis=1), 1e-300)
            descent = -grad * (h / gnorm)[:, None]
            pd = (det > 0) & (hss > 0)
            step = np.where(pd[:, None], newton, descent)
            size = np.linalg.norm(step, axis=1)
            step *= np.minimum(1.0, h / np.maximum(size, 1e-300))[:, None]
            base = f[:, 0]
            done = np.zeros(len(idx), dtype=bool)
            alpha = np.ones(len(idx))
            for _ in range(12):
                trial = np.clip(sz[idx] + alpha[:, None] * step, lo, hi)
                ft = self._local_pot(pot, np.column_stack([t[idx], trial]))
                ok = (ft <= base) & ~done
                sz[idx[ok]] = trial[ok]
                f0[idx[ok]] = ft[ok]
                done |= ok
                if done.all():
                    break
                alpha = np.where(done, alpha, 0.5 * alpha)
            moved = np.linalg.norm(alpha[:, None] * step, axis=1)
            active[idx[~done | (moved < 1e-6 * h)]] = False
        return f0, sz

    def _floor_at(self, pot, t: float, guess) -> tuple[float, np.ndarray]:
        v, sz = self.floor(pot, [t], [guess])
        return float(v[0]), sz[0]

    def _peak(self, pot, ts, vals, sz, i, j):
        """Refined maximum of the floor profile strictly between nodes i and j."""
        k = i + 1 + int(np.argmax(vals[i + 1:j]))
        a, b = ts[max(k - 1, i)], ts[min(k + 1, j)]
        res = optimize.minimize_scalar(lambda x: -self._floor_at(pot, x, sz[k])[0],
                                       bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-4 * self.spacing})
        top = max(-float(res.fun), float(vals[k]))
        return top, (float(res.x) if -float(res.fun) >= vals[k] else float(ts[k]))

    def profile(self, pot, grid: PotentialGrid):
        ts = self.axes[0]
        v = grid.values.reshape(len(ts), -1)
        k = np.argmin(v, axis=1)
        ks, kz = np.unravel_index(k, grid.shape[1:])
        start = np.column_stack([self.axes[1][ks], self.axes[2][kz]])
        vals, sz = self.floor(pot, ts, start)
        return ts, vals, sz

    def basins(self, vals) -> list[int]:
        """Profile minima separated from their neighbours by at least merge_tol."""
        n = len(vals)
        mins = [i for i in range(1, n - 1) if vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]
                and (vals[i] < vals[i - 1] or vals[i] < vals[i + 1])]
        changed = True
        while changed and len(mins) > 1:
            changed = False
            for a in range(len(mins) - 1):
                i, j = mins[a], mins[a + 1]
                if vals[i:j + 1].max() - max(vals[i], vals[j]) < self.merge_tol:
                    mins.pop(a + 1 if vals[j] >= vals[i] else a)
                    changed = True
                    break
        return mins

    def run(self, fraction: float) -> MorphPoint:
        drive = self.drive.with_fraction(self.group, fraction)
        pot = PseudoPotential(self.layout, drive, self.species, self.n_images)
        grid = PotentialGrid(self.axes, pot.from_basis(self.w, self.g).reshape(self.shape))
        ts, vals, sz = self.profile(pot, grid)
        mins = self.basins(vals)
        if not mins:
            raise SaddleNotMinimumError(f"no pseudopotential minimum at fraction {fraction}")
        h = self.spacing
        half = self.frame.half
        sides = []
        for sgn in (-1, 1):
            cand = [i for i in mins if sgn * ts[i] > 1.5 * h]
            if cand:
                sides.append(min(cand, key=lambda i: abs(ts[i] - sgn * half)))
        coalesced = len(sides) < 2
        if coalesced:
            lone = min(mins, key=lambda i: (abs(ts[i]), vals[i]))
            sides = [lone, lone]
        ia, ib = sides
        site_pts = [self._polish(pot, ts[i], sz[i]) for i in (ia, ib)]
        dist = float(np.linalg.norm(site_pts[0].position - site_pts[1].position))
        coalesced = coalesced or dist <= h
        if coalesced:
            barrier = 0.0
        else:
            top, _ = self._peak(pot, ts, vals, sz, ia, ib)
            barrier = max(0.0, top - max(site_pts[0].value, site_pts[1].value))
        merged = coalesced or barrier < self.merge_tol
        third, saddle = None, math.nan
        if not merged:
            inner = [i for i in mins if ia < i < ib and self.footprint.contains(
                Point(*self.frame.to_world([[ts[i], sz[i][0], sz[i][1]]])[0, :2]))]
            if inner:
                m = min(inner, key=lambda i: abs(ts[i]))
                left, _ = self._peak(pot, ts, vals, sz, ia, m)
                right, _ = self._peak(pot, ts, vals, sz, m, ib)
                depth = min(left, right) - float(vals[m])
                if depth >= self.merge_tol:
                    third = self.frame.to_world([[ts[m], sz[m][0], sz[m][1]]])[0]
                    saddle = depth
        omega = self._slowest(pot, site_pts[:1] if coalesced else site_pts)
        return MorphPoint(float(fraction), np.array([p.position for p in site_pts]), dist,
                          barrier, third is not None, saddle, third, merged, omega)

    def _polish(self, pot, t, sz) -> Minimum:
        p0 = self.frame.to_world([[t, sz[0], sz[1]]])[0]
        h = min(hessian_step(self.length), 0.02 * self.spacing)
        r = refine_minimum(pot, p0, h, self.length, lower=p0 - self.spacing,
                           upper=p0 + self.spacing)
        return Minimum(r.position, r.value, r.converged)

    def _slowest(self, pot, sites: list[Minimum]) -> float:
        out = math.inf
        for s in sites:
            h = min(hessian_step(self.length), 0.25 * float(s.position[2]))
            try:
                om = secular_from_potential(pot, s.position, self.species.mass, h).omegas
            except SaddleNotMinimumError:
                return math.nan
            out = min(out, float(om.min()))
        return out


def sweep_addressing(layout: ElectrodeLayout, drive: DriveConfig, species: Species,
                     addressable_group: str, fractions=None, spacing: float | None = None,
                     merge_tol: float = MERGE_TOL, workers: int = 1,
                     n_images: int = DEFAULT_IMAGES) -> MorphReport:
    """Track the two bordering sites while the group's RF is attenuated.

    ``fractions`` must be descending within [0, 1].  Sweep points are
    independent and run on ``workers`` threads; the result keeps the input
    order.
    """
    bordering_sites(layout, addressable_group)
    fr = default_fractions() if fractions is None else [float(f) for f in fractions]
    if not fr:
        raise InvalidParameterError("fractions must not be empty")
    if any(not 0.0 <= f <= 1.0 for f in fr):
        raise InvalidParameterError("fractions must lie in [0, 1]")
    if any(b >= a for a, b in zip(fr, fr[1:])):
        raise InvalidParameterError("fractions must be strictly decreasing")
    if workers < 1:
        raise InvalidParameterError("workers must be at least 1")
    ctx = _MorphContext(layout, drive, species, addressable_group,
                        morph_axes(layout, addressable_group, spacing), n_images, merge_tol)
    if workers == 1:
        points = [ctx.run(f) for f in fr]
    else:
        with ThreadPoolExecutor(workers) as pool:
            points = list(pool.map(ctx.run, fr))
    return MorphReport(addressable_group, points, ctx.spacing, merge_tol)


# ---------------------------------------------------------------- fits and figures of merit

@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    prefactor: float
    residual: float
    n_points: int


def fit_power_law(x, y) -> ScalingFit:
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 4:
        raise InsufficientDataError(f"need at least 4 points for a power-law fit, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidParameterError("power-law fit needs positive data")
    A = np.vstack([np.log(x), np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - np.log(y)) ** 2)))
    return ScalingFit(float(coef[0]), float(math.exp(coef[1])), resid, len(x))


def saddle_scaling_fit(report: MorphReport) -> ScalingFit:
    """Exponent of saddle height against fraction over the third-trap points."""
    pts = [p for p in report.sweep if p.third_trap_present and p.saddle_height > 0
           and p.fraction > 0]
    return fit_power_law([p.fraction for p in pts], [p.saddle_height for p in pts])


def gate_time(a: float, omega_sec: float, species: Species) -> float:
    """Controlled-phase gate time 4 pi^2 eps0 m a^3 omega / q^2 (seconds)."""
    if not a > 0:
        raise InvalidParameterError("ion spacing a must be positive")
    if not omega_sec >= 0:
        raise InvalidParameterError("secular frequency must be non-negative")
    return 4.0 * math.pi ** 2 * const.epsilon_0 * species.mass * a ** 3 * omega_sec \
        / species.charge ** 2


def adiabatic_ramp_time(min_omega_sec: float) -> float:
    """Ten periods of the slowest secular frequency of interest."""
    if not min_omega_sec > 0:
        raise InvalidParameterError("secular frequency must be positive")
    return 10.0 * 2.0 * math.pi / min_omega_sec


@dataclass(frozen=True)
class ScalingRow:
    d: float
    gate_time: float
    heating: float
    heating_per_gate: float


def scaling_report(d_values, reference: float) -> list[ScalingRow]:
    """Relative gate time (d^2) and heating (d^-4) anchored at ``reference``.

    Fixed depth, trap efficiency and stability ratio force omega ~ 1/d, which
    turns the a^3 omega gate-time law into a^2.
    """
    if not reference > 0:
        raise InvalidParameterError("reference distance must be positive")
    rows = []
    for d in d_values:
        d = float(d)
        if not d > 0:
            raise InvalidParameterError("distances must be positive")
        r = d / reference
        t, heat = r ** 2, r ** -4
        rows.append(ScalingRow(d, t, heat, heat * t))
    return rows


# ion spacing (m) and secular frequency of the reference gate-time rows
TABLE1_ROWS = ((1500e-6, 0.5), (375e-6, 2.0), (100e-6, 7.5), (50e-6, 15.0), (25e-6, 30.0))
TABLE1_PRINTED_MS = ((2200.0, 220.0), (140.0, 14.0), (9.6, 0.96), (2.1, 0.21), (1.3, 0.13))
# the omega column is read as angular frequency in 1e6 rad/s
OMEGA_UNIT = 1e6


@dataclass(frozen=True)
class GateRow:
    a: float
    omega: float
    t_gate: float
    t_gate_reduced: float


def table1(species: Species, rows=TABLE1_ROWS, omega_unit: float = OMEGA_UNIT,
           reduction: float = 10.0) -> list[GateRow]:
    """Gate times at full and reduced (omega / ``reduction``) trap frequency."""
    out = []
    for a, w in rows:
        omega = w * omega_unit
        out.append(GateRow(a, omega, gate_time(a, omega, species),
                           gate_time(a, omega / reduction, species)))
    return out


def table1_csv(rows: list[GateRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("a_um", "omega_1e6_rad_s", "t_gate_ms", "t_gate_reduced_ms"))
    for r in rows:
        w.writerow((f"{r.a * 1e6:.6g}", f"{r.omega / 1e6:.6g}", f"{r.t_gate * 1e3:.6g}",
                    f"{r.t_gate_reduced * 1e3:.6g}"))
    return buf.getvalue()
