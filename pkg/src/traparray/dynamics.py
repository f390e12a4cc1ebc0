"""Time-domain motion of a charged particle in the full RF + DC field.

The instantaneous field is the drive superposition
``E(r, t) = -sum_g (V_g cos(Omega t + phase) + U_g) grad w_g(r)`` plus an
optional uniform field, gravity and linear drag.  Integration is velocity
Verlet with a fixed step that resolves the RF period.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as const

from .errors import (DomainError, InsufficientDataError, IntegrationError,
                     InvalidParameterError)
from .field import DEFAULT_IMAGES, DriveConfig, solver_for
from .geometry import ElectrodeLayout
from .metrics import Species

STEPS_PER_PERIOD = 100
MIN_STEPS_PER_PERIOD = 50
GRAVITY = np.array([0.0, 0.0, -const.g])


@dataclass
class SimState:
    position: np.ndarray
    velocity: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise InvalidParameterError("state components must be finite")


@dataclass
class Scenario:
    """Everything needed to integrate one trajectory.

    ``timestep`` defaults to a hundredth of the RF period; ``drag`` is a
    linear damping rate (1/s).  ``sample_every`` thins the stored
    trajectory without changing the integration.
    """
    layout: ElectrodeLayout
    drive: DriveConfig
    species: Species
    duration: float
    external_field: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: bool = False
    timestep: float | None = None
    drag: float = 0.0
    sample_every: int = 1
    n_images: int = DEFAULT_IMAGES

    def __post_init__(self):
        self.external_field = np.asarray(self.external_field, dtype=float).reshape(3)
        period = 2 * math.pi / self.drive.omega
        if self.timestep is None:
            self.timestep = period / STEPS_PER_PERIOD
        if not self.duration > 0:
            raise InvalidParameterError("duration must be positive")
        if not 0 < self.timestep <= period / MIN_STEPS_PER_PERIOD * (1 + 1e-12):
            raise InvalidParameterError(
                f"timestep must be positive and at most 1/{MIN_STEPS_PER_PERIOD} of the RF period")
        if self.drag < 0:
            raise InvalidParameterError("drag must be non-negative")
        if self.sample_every < 1:
            raise InvalidParameterError("sample_every must be at least 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.timestep))

    def metadata(self) -> dict:
        return {"drive": self.drive.to_dict(), "species": self.species.to_dict(),
                "duration": self.duration, "timestep": self.timestep,
                "external_field": self.external_field.tolist(), "gravity": self.gravity,
                "drag": self.drag, "sample_every": self.sample_every,
                "n_images": self.n_images, "drive_convention": "cos(Omega t + phase), t=0 at peak"}

    def to_dict(self, layout_ref: str | None = None) -> dict:
        d = self.metadata()
        d["layout"] = layout_ref if layout_ref is not None else self.layout.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict, layout: ElectrodeLayout | None = None) -> "Scenario":
        if layout is None:
            ref = d["layout"]
            layout = ElectrodeLayout.load(ref) if isinstance(ref, str) else \
                ElectrodeLayout.from_dict(ref)
        return cls(layout, DriveConfig.from_dict(d["drive"]), Species.from_dict(d["species"]),
                   float(d["duration"]), np.array(d.get("external_field", [0, 0, 0]), float),
                   bool(d.get("gravity", False)), d.get("timestep"), float(d.get("drag", 0.0)),
                   int(d.get("sample_every", 1)), int(d.get("n_images", DEFAULT_IMAGES)))


@dataclass
class Trajectory:
    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    escaped: bool
    omega_drive: float
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def final(self) -> SimState:
        return SimState(self.position[-1], self.velocity[-1], float(self.t[-1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t", "x", "y", "z", "vx", "vy", "vz"))
        for k in range(len(self.t)):
            w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.position[k]]
                       + [repr(float(v)) for v in self.velocity[k]])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"samples": len(self.t), "duration": float(self.t[-1] - self.t[0]),
                "escaped": self.escaped, "final_position": self.position[-1].tolist(),
                **self.metadata}


class _Force:
    """Acceleration from fields, gravity and drag for one scenario."""

    def __init__(self, sc: Scenario):
        self.solver = solver_for(sc.layout, sc.n_images)
        groups = self.solver.groups
        self.rf = sc.drive.rf_amplitudes(sc.layout, groups)
        self.dc = sc.drive.dc_voltages(groups)
        self.omega = sc.drive.omega
        self.phase = sc.drive.phase
        self.qm = sc.species.q_over_m
        self.const_acc = self.qm * sc.external_field + (GRAVITY if sc.gravity else 0.0)
        self.drag = sc.drag
        self.active = bool(np.any(self.rf) or np.any(self.dc)) and self.qm != 0
        layout = sc.layout
        x0, y0, x1, y1 = layout.bounding_region
        top = layout.ground_plane_height
        if top is None:
            top = 4.0 * max(x1 - x0, y1 - y0)
        self.lo = np.array([x0, y0, 0.0])
        self.hi = np.array([x1, y1, top])

    def inside(self, p) -> bool:
        return bool(np.all(p > self.lo) and np.all(p < self.hi))

    def field_acc(self, p, t: float) -> np.ndarray:
        if not self.active:
            return self.const_acc.copy()
        _, g = self.solver.basis(p[None])
        volts = self.rf * math.cos(self.omega * t + self.phase) + self.dc
        return self.const_acc - self.qm * (g[0].T @ volts)


def integrate(scenario: Scenario, initial: SimState) -> Trajectory:
    """Velocity-Verlet trajectory; truncated and flagged if the particle leaves the domain."""
    f = _Force(scenario)
    if not f.inside(initial.position):
        raise DomainError("initial position outside the simulation domain")
    dt = scenario.timestep
    n = scenario.n_steps
    every = scenario.sample_every
    m = n // every + 1
    ts = np.empty(m)
    xs = np.empty((m, 3))
    vs = np.empty((m, 3))
    x = initial.position.copy()
    v = initial.velocity.copy()
    t0 = initial.time
    a = f.field_acc(x, t0) - f.drag * v
    ts[0], xs[0], vs[0] = t0, x, v
    k = 1
    escaped = False
    damp = 1.0 / (1.0 + 0.5 * f.drag * dt)
    for i in range(1, n + 1):
        vh = v + 0.5 * dt * a
        x = x + dt * vh
        t = t0 + i * dt
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite position at t = {t:.6g} s")
        if not f.inside(x):
            escaped = True
            break
        af = f.field_acc(x, t)
        v = (vh + 0.5 * dt * af) * damp
        a = af - f.drag * v
        if not np.all(np.isfinite(v)):
            raise IntegrationError(f"non-finite velocity at t = {t:.6g} s")
        if i % every == 0:
            ts[k], xs[k], vs[k] = t, x, v
            k += 1
    meta = scenario.metadata()
    return Trajectory(ts[:k].copy(), xs[:k].copy(), vs[:k].copy(), escaped,
                      scenario.drive.omega, meta)


def integrate_many(jobs, workers: int = 1) -> list[Trajectory]:
    """Run independent (scenario, initial) pairs; results keep the input order."""
    jobs = list(jobs)
    if workers < 1:
        raise InvalidParameterError("workers must be at least 1")
    if workers == 1:
        return [integrate(s, i) for s, i in jobs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda j: integrate(*j), jobs))


# ---------------------------------------------------------------- analysis

def _spectrum(x: np.ndarray):
    n = len(x)
    win = np.hanning(n)
    return np.abs(np.fft.rfft((x - x.mean()) * win))


def _interp_peak(mag: np.ndarray, k: int) -> float:
    """Sub-bin peak location from a parabola through the log magnitudes."""
    if k <= 0 or k >= len(mag) - 1:
        return float(k)
    a, b, c = np.log(mag[k - 1:k + 2] + 1e-300)
    den = a - 2 * b + c
    return k + (0.5 * (a - c) / den if den != 0 else 0.0)


def measured_secular_frequencies(traj: Trajectory, min_periods: float = 20.0,
                                 rel_threshold: float = 1e-2) -> np.ndarray:
    """Dominant spectral peaks (rad/s) below Omega/2, at most one per coordinate.

    Each coordinate contributes its strongest peak; peaks within two bins
    of each other are merged and weak ones (below ``rel_threshold`` of the
    strongest) dropped.
    """
    n = len(traj.t)
    if n < 16:
        raise InsufficientDataError("trajectory too short for a spectrum")
    dt = float(np.mean(np.diff(traj.t)))
    span = n * dt
    freqs = np.fft.rfftfreq(n, dt) * 2 * math.pi
    limit = traj.omega_drive / 2
    found = []
    for c in range(3):
        mag = _spectrum(traj.position[:, c])
        band = (freqs > 0) & (freqs < limit)
        if not band.any():
            continue
        idx = np.flatnonzero(band)
        k = int(idx[np.argmax(mag[idx])])
        if mag[k] <= 0:
            continue
        found.append((mag[k], _interp_peak(mag, k) * 2 * math.pi / span))
    if not found:
        raise InsufficientDataError("no spectral peak below Omega/2")
    top = max(p for p, _ in found)
    bin_w = 2 * math.pi / span
    out: list[float] = []
    for p, w in sorted(found, key=lambda z: -z[0]):
        if p < rel_threshold * top or any(abs(w - o) < 2 * bin_w for o in out):
            continue
        out.append(w)
    if min(out) * span / (2 * math.pi) < min_periods:
        raise InsufficientDataError(
            f"trajectory covers fewer than {min_periods:g} periods of the slowest peak")
    return np.array(sorted(out))


def component_peaks(traj: Trajectory) -> np.ndarray:
    """Strongest peak (rad/s) below Omega/2 for each of x, y and z separately."""
    n = len(traj.t)
    if n < 16:
        raise InsufficientDataError("trajectory too short for a spectrum")
    dt = float(np.mean(np.diff(traj.t)))
    freqs = np.fft.rfftfreq(n, dt) * 2 * math.pi
    idx = np.flatnonzero((freqs > 0) & (freqs < traj.omega_drive / 2))
    if len(idx) == 0:
        raise InsufficientDataError("no frequency bins below Omega/2")
    out = np.empty(3)
    for c in range(3):
        mag = _spectrum(traj.position[:, c])
        k = int(idx[np.argmax(mag[idx])])
        out[c] = _interp_peak(mag, k) * 2 * math.pi / (n * dt)
    return out


def spectrum(traj: Trajectory, component: int = 0):
    """(angular frequency, magnitude) of one position component."""
    dt = float(np.mean(np.diff(traj.t)))
    mag = _spectrum(traj.position[:, component])
    return np.fft.rfftfreq(len(traj.t), dt) * 2 * math.pi, mag


def micromotion_amplitude(traj: Trajectory, omega_drive: float | None = None) -> float:
    """Amplitude (m) of the component at the drive frequency over the final half.

    Demodulated over a whole number of RF periods, so slow secular motion
    averages out.
    """
    omega = traj.omega_drive if omega_drive is None else omega_drive
    dt = float(np.mean(np.diff(traj.t)))
    per = 2 * math.pi / omega
    if per / dt < 20:
        raise InsufficientDataError("trajectory must resolve the drive (>= 20 samples per period)")
    half = len(traj.t) // 2
    t = traj.t[half:]
    n_per = int((t[-1] - t[0]) / per)
    if n_per < 1:
        raise InsufficientDataError("final half shorter than one drive period")
    keep = t <= t[0] + n_per * per
    t = t[keep]
    x = traj.position[half:][keep]
    c = np.cos(omega * t)
    s = np.sin(omega * t)
    xc = x - x.mean(axis=0)
    ac = 2 * (c @ xc) / len(t)
    as_ = 2 * (s @ xc) / len(t)
    return float(np.sqrt(np.sum(ac ** 2 + as_ ** 2)))


def calibrate_dust_qm(mesh_voltage: float, mesh_distance: float) -> float:
    """Charge-to-mass ratio (C/kg) whose weight a uniform mesh field V/d cancels."""
    if not mesh_voltage > 0 or not mesh_distance > 0:
        raise InvalidParameterError("mesh voltage and distance must be positive")
    return const.g * mesh_distance / mesh_voltage


def mesh_field(mesh_voltage: float, mesh_distance: float) -> np.ndarray:
    """Uniform upward field of a plate at ``mesh_voltage`` (electrodes near 0 V)."""
    return np.array([0.0, 0.0, mesh_voltage / mesh_distance])


def rf_averaged(traj: Trajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positions and velocities averaged over consecutive whole RF periods."""
    dt = float(np.mean(np.diff(traj.t)))
    per = int(round(2 * math.pi / traj.omega_drive / dt))
    n = (len(traj.t) // per) * per
    if per < 2 or n == 0:
        raise InsufficientDataError("trajectory shorter than one drive period")
    t = traj.t[:n].reshape(-1, per).mean(axis=1)
    x = traj.position[:n].reshape(-1, per, 3).mean(axis=1)
    v = traj.velocity[:n].reshape(-1, per, 3).mean(axis=1)
    return t, x, v


def secular_energy(traj: Trajectory, potential, species: Species) -> np.ndarray:
    """RF-averaged kinetic energy plus pseudopotential energy (J) per RF period."""
    _, x, v = rf_averaged(traj)
    kin = 0.5 * species.mass * np.sum(v * v, axis=1)
    return kin + potential(x) * const.e


def secular_energy_drift(traj: Trajectory, potential, species: Species) -> float:
    """Relative change of the mean secular energy between the first and last quarter."""
    e = secular_energy(traj, potential, species)
    q = max(1, len(e) // 4)
    return float(abs(e[-q:].mean() - e[:q].mean()) / abs(e.mean()))


def save_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(traj.to_csv())


def save_scenario(sc: Scenario, path, layout_ref: str | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(sc.to_dict(layout_ref), fh, indent=1, sort_keys=True)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def _site_minimum(layout, drive, species, xy, z0, n_images=DEFAULT_IMAGES) -> np.ndarray:
    from .metrics import PseudoPotential, characteristic_length, hessian_step, refine_minimum
    pot = PseudoPotential(layout, drive, species, n_images)
    length = characteristic_length(layout)
    p0 = np.array([xy[0], xy[1], z0])
    return refine_minimum(pot, p0, hessian_step(length), length).position


def _offset(rng, size: float) -> np.ndarray:
    if rng is None:
        return np.array([1.0, 0.5, 0.75]) * size
    return rng.uniform(-size, size, 3)


def dust_scenario(v_nom: float = 230.0, frequency: float = 50.0, mesh_voltage: float = 150.0,
                  mesh_distance: float = 0.03, duration: float = 3.0,
                  q_over_m: float | None = None, offset: float = 20e-6, site: int = 0,
                  rng: np.random.Generator | None = None):
    """Charged grain over one site of the 2x2 board, gravity held by the mesh field.

    Returns (scenario, initial state).  The board has no ground plane; the
    mesh is far enough away to be modelled as a uniform field only.
    """
    from .geometry import array2x2_params, make_addressable_array
    from .metrics import dust_species
    layout = make_addressable_array(array2x2_params(ground_plane_height=None))
    qm = calibrate_dust_qm(mesh_voltage, mesh_distance) if q_over_m is None else q_over_m
    species = dust_species(qm)
    drive = DriveConfig(v_nom, 2 * math.pi * frequency)
    sc = Scenario(layout, drive, species, duration, mesh_field(mesh_voltage, mesh_distance),
                  gravity=True)
    xy = layout.sites[site]
    p = _site_minimum(layout, drive, species, xy, 0.12 * layout.pitch)
    return sc, SimState(p + _offset(rng, offset), np.zeros(3))


def ion_point_scenario(v_nom: float = 100.0, frequency: float = 10e6, periods: float = 25.0,
                       offset: float = 2e-6, rng: np.random.Generator | None = None):
    """Ca-40 in a 1x1 point trap (0.5 mm disc, 1 mm ring) with a small kick-free offset.

    The run covers ``periods`` periods of the slowest secular mode.
    Returns (scenario, initial state, Hessian secular frequencies).
    """
    from .geometry import make_point_trap
    from .metrics import CA40, PseudoPotential, hessian_step, secular_from_potential
    layout = make_point_trap(0.5e-3, 1.0e-3, 50e-6)
    drive = DriveConfig(v_nom, 2 * math.pi * frequency)
    p = _site_minimum(layout, drive, CA40, (0.0, 0.0), 0.6e-3)
    pot = PseudoPotential(layout, drive, CA40)
    omegas = secular_from_potential(pot, p, CA40.mass, min(hessian_step(1.5e-3), 0.25 * p[2])).omegas
    sc = Scenario(layout, drive, CA40, periods * 2 * math.pi / omegas.min())
    return sc, SimState(p + _offset(rng, offset), np.zeros(3)), omegas
