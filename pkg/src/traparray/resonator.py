"""Lumped-element model of the trap drive: tank resonator, coupled pairs, phase lock.

As-built topology (``topology="series_ca"``)::

    EMF --R_s--+--C_A--+--L(R_L)--+-- out
               S       J          |
                      C_B       C_load (trap + divider + varactor branch)
                       |          |
                      gnd        gnd

Variants giving the junction J a DC path: ``"choke"`` adds an inductor from
J to ground, ``"no_ca"`` removes C_A so the source drives J directly.

Gains are quoted against the voltage a matched load would see, EMF/2, so a
lossless matched network has ``|G| = sqrt(R_parallel / R_s)``.  Phases are
reported as lag behind the drive: ``phase = -arg(G)``, which is pi/2 on
resonance.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import InvalidParameterError, NoSolutionError

TOPOLOGIES = ("series_ca", "choke", "no_ca")
SETPOINT = math.pi / 2


@dataclass(frozen=True)
class TankResonator:
    L: float
    unloaded_Q: float
    C_A: float
    C_B: float
    C_trap: float
    R_source: float = 50.0
    drive_frequency: float = 10.5e6
    topology: str = "series_ca"
    # capacitive pick-off (C4 in series with C5), treated as lossless
    C_div_top: float = 0.0
    C_div_bottom: float = 0.0
    L_choke: float = 10e-6
    choke_Q: float = 50.0

    def __post_init__(self):
        for name in ("L", "C_B", "C_trap", "R_source", "drive_frequency"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        if self.topology != "no_ca" and not self.C_A > 0:
            raise InvalidParameterError("C_A must be positive")
        if not self.unloaded_Q > 1:
            raise InvalidParameterError("unloaded_Q must exceed 1")
        if self.topology not in TOPOLOGIES:
            raise InvalidParameterError(f"unknown topology {self.topology!r}")
        if self.C_div_top < 0 or self.C_div_bottom < 0:
            raise InvalidParameterError("divider capacitances must be non-negative")

    @property
    def divider_capacitance(self) -> float:
        a, b = self.C_div_top, self.C_div_bottom
        return a * b / (a + b) if a > 0 and b > 0 else 0.0

    @property
    def load_capacitance(self) -> float:
        return self.C_trap + self.divider_capacitance

    def with_load(self, delta_c: float) -> "TankResonator":
        return replace(self, C_trap=self.C_trap + delta_c)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TankResonator":
        return cls(**d)


def as_built_resonator() -> TankResonator:
    """The as-built 10.5 MHz resonator with its 1 pF / 100 pF pick-off."""
    return TankResonator(L=4.7e-6, unloaded_Q=84.0, C_A=220e-12, C_B=820e-12, C_trap=47e-12,
                         R_source=50.0, drive_frequency=10.5e6,
                         C_div_top=1e-12, C_div_bottom=100e-12)


def _solve(res: TankResonator, f, extra_load=0.0):
    """Node voltages (V_S, V_out) per unit EMF at frequencies ``f``."""
    f = np.atleast_1d(np.asarray(f, dtype=float))
    if np.any(f <= 0):
        raise InvalidParameterError("frequency must be positive")
    w = 2 * np.pi * f
    g_s = 1.0 / res.R_source
    y_l = 1.0 / (1j * w * res.L + w * res.L / res.unloaded_Q)
    y_b = 1j * w * res.C_B
    if res.topology == "choke":
        y_b = y_b + 1.0 / (1j * w * res.L_choke + w * res.L_choke / res.choke_Q)
    y_o = 1j * w * (res.load_capacitance + extra_load)
    n = len(f)
    if res.topology == "no_ca":
        # nodes: J(=S), O
        Y = np.zeros((n, 2, 2), dtype=complex)
        Y[:, 0, 0] = g_s + y_b + y_l
        Y[:, 0, 1] = Y[:, 1, 0] = -y_l
        Y[:, 1, 1] = y_l + y_o
        I = np.zeros((n, 2), dtype=complex)
        I[:, 0] = g_s
        V = np.linalg.solve(Y, I[..., None])[..., 0]
        return V[:, 0], V[:, 1]
    y_a = 1j * w * res.C_A
    # nodes: S, J, O
    Y = np.zeros((n, 3, 3), dtype=complex)
    Y[:, 0, 0] = g_s + y_a
    Y[:, 0, 1] = Y[:, 1, 0] = -y_a
    Y[:, 1, 1] = y_a + y_b + y_l
    Y[:, 1, 2] = Y[:, 2, 1] = -y_l
    Y[:, 2, 2] = y_l + y_o
    I = np.zeros((n, 3), dtype=complex)
    I[:, 0] = g_s
    V = np.linalg.solve(Y, I[..., None])[..., 0]
    return V[:, 0], V[:, 2]


def tank_response(res: TankResonator, frequency, extra_load: float = 0.0):
    """Complex gain V_out / (EMF/2); scalar in, scalar out."""
    _, vo = _solve(res, frequency, extra_load)
    g = 2.0 * vo
    return g[0] if np.ndim(frequency) == 0 else g


def input_impedance(res: TankResonator, frequency, extra_load: float = 0.0):
    """Impedance seen by the source looking into the network."""
    vs, _ = _solve(res, frequency, extra_load)
    i_in = (1.0 - vs) / res.R_source
    z = vs / i_in
    return z[0] if np.ndim(frequency) == 0 else z


def phase_lag(res: TankResonator, frequency, extra_load: float = 0.0):
    """Output phase lag behind the drive, unwrapped to (-pi/2, 3pi/2]."""
    lag = -np.angle(tank_response(res, frequency, extra_load))
    return np.where(lag <= -np.pi / 2, lag + 2 * np.pi, lag) if np.ndim(lag) else (
        lag + 2 * np.pi if lag <= -np.pi / 2 else float(lag))


def gain_formula(eta: float, Q: float, R: float) -> float:
    """G = eta * sqrt(Q / R)."""
    if not (eta > 0 and Q > 0 and R > 0):
        raise InvalidParameterError("eta, Q and R must be positive")
    return eta * math.sqrt(Q / R)


def required_power(v_out: float, gain: float, r_source: float = 50.0) -> float:
    """Source power (W) for a peak output ``v_out`` through a matched gain ``gain``."""
    if not (gain > 0 and r_source > 0):
        raise InvalidParameterError("gain and source resistance must be positive")
    return v_out ** 2 / (2.0 * gain ** 2 * r_source)


def _bracket(res: TankResonator, extra_load=0.0):
    """Search band around the bare L-C_load resonance."""
    f_lc = 1.0 / (2 * math.pi * math.sqrt(res.L * (res.load_capacitance + extra_load)))
    return 0.3 * f_lc, 3.0 * f_lc


def resonant_frequency(res: TankResonator, extra_load: float = 0.0, method: str = "phase") -> float:
    """Resonance as the 90-degree lag point (``phase``) or gain maximum (``peak``)."""
    lo, hi = _bracket(res, extra_load)
    f = np.geomspace(lo, hi, 4001)
    if method == "peak":
        g = np.abs(tank_response(res, f, extra_load))
        k = int(np.argmax(g))
        r = optimize.minimize_scalar(lambda x: -abs(tank_response(res, x, extra_load)),
                                     bracket=(f[max(k - 1, 0)], f[k], f[min(k + 1, len(f) - 1)]),
                                     tol=1e-12)
        return float(r.x)
    if method != "phase":
        raise InvalidParameterError(f"unknown resonance method {method!r}")
    d = phase_lag(res, f, extra_load) - SETPOINT
    # the crossing nearest the gain peak is the tank resonance
    g = np.abs(tank_response(res, f, extra_load))
    idx = np.where(np.sign(d[:-1]) != np.sign(d[1:]))[0]
    if len(idx) == 0:
        raise NoSolutionError("no 90-degree phase crossing in the search band")
    k = idx[np.argmax(g[idx])]
    return float(optimize.brentq(lambda x: phase_lag(res, x, extra_load) - SETPOINT,
                                 f[k], f[k + 1], xtol=1e-9, rtol=1e-15))


def loaded_q(res: TankResonator, extra_load: float = 0.0) -> float:
    """Peak frequency over the full width at half maximum of |G|^2."""
    fp = resonant_frequency(res, extra_load, "peak")
    gp = abs(tank_response(res, fp, extra_load))
    target = gp / math.sqrt(2.0)
    h = lambda x: abs(tank_response(res, x, extra_load)) - target
    lo, hi = _bracket(res, extra_load)
    f_lo = optimize.brentq(h, lo, fp, xtol=1e-6)
    f_hi = optimize.brentq(h, fp, hi, xtol=1e-6)
    return fp / (f_hi - f_lo)


def phase_slope(res: TankResonator, f0: float | None = None, rel_step: float = 1e-6) -> float:
    """d(phase lag)/df at the phase resonance (rad/Hz)."""
    f0 = resonant_frequency(res) if f0 is None else f0
    h = rel_step * f0
    return float((phase_lag(res, f0 + h) - phase_lag(res, f0 - h)) / (2 * h))


@dataclass(frozen=True)
class ResponseSummary:
    f_peak: float
    gain_peak: float
    f_phase: float
    loaded_q: float
    z_in_peak: complex

    def to_dict(self):
        d = asdict(self)
        d["z_in_peak"] = [self.z_in_peak.real, self.z_in_peak.imag]
        return d


def summarize(res: TankResonator) -> ResponseSummary:
    fp = resonant_frequency(res, method="peak")
    return ResponseSummary(fp, float(abs(tank_response(res, fp))), resonant_frequency(res),
                           loaded_q(res), complex(input_impedance(res, fp)))


def frequency_response(res: TankResonator, f):
    """Columns f_hz, gain_abs, gain_phase_rad, z_in_real, z_in_imag."""
    f = np.asarray(f, dtype=float)
    g = tank_response(res, f)
    z = input_impedance(res, f)
    return np.column_stack([f, np.abs(g), np.angle(g), z.real, z.imag])


def design_match(L: float, unloaded_Q: float, C_trap: float, R_source: float, f_target: float,
                 topology: str = "series_ca", tol: float = 1e-10):
    """Matching capacitors (C_A, C_B) so Z_in(f_target) = R_source.

    Solved as a 2D root find in log-capacitance.  Raises NoSolutionError
    with the best achievable input resistance when no match exists.
    """
    for name, v in (("L", L), ("unloaded_Q", unloaded_Q), ("C_trap", C_trap),
                    ("R_source", R_source), ("f_target", f_target)):
        if not v > 0:
            raise InvalidParameterError(f"{name} must be positive")
    if topology == "no_ca":
        raise InvalidParameterError("design_match needs the series C_A of the matching network")
    w = 2 * math.pi * f_target
    z_load = w * L / unloaded_Q + 1j * (w * L - 1.0 / (w * C_trap))
    # shunting C_B across an inductive load is what raises its resistance
    if z_load.imag <= 0:
        raise NoSolutionError(
            f"load L + C_trap is capacitive at {f_target:.6g} Hz (X = {z_load.imag:.3g} ohm); "
            f"best achievable input resistance is {z_load.real:.3g} ohm < {R_source} ohm")
    y_load = 1.0 / z_load
    # with C_B alone: Re(1/(y_load + j w C_B)) = R_source has a closed form
    g, b = y_load.real, y_load.imag
    disc = g / R_source - g * g
    if disc < 0:
        raise NoSolutionError(
            f"maximum transformed resistance {1.0 / g:.3g} ohm is below R_source {R_source} ohm")
    b_tot = -math.sqrt(disc)  # need net inductive residue to be cancelled by series C_A
    c_b0 = (b_tot - b) / w
    if c_b0 <= 0:
        raise NoSolutionError("required shunt capacitance is not positive")
    x_left = (1.0 / (g + 1j * b_tot)).imag
    c_a0 = 1.0 / (w * x_left)
    probe = TankResonator(L, unloaded_Q, c_a0, c_b0, C_trap, R_source, f_target, topology)

    def resid(logc):
        r = replace(probe, C_A=math.exp(logc[0]), C_B=math.exp(logc[1]))
        z = input_impedance(r, f_target)
        return [(z.real - R_source) / R_source, z.imag / R_source]

    sol = optimize.root(resid, [math.log(c_a0), math.log(c_b0)], tol=tol)
    if not sol.success or max(abs(x) for x in resid(sol.x)) > 1e-6:
        raise NoSolutionError(f"matching root find failed: {sol.message}")
    return float(math.exp(sol.x[0])), float(math.exp(sol.x[1]))


@dataclass(frozen=True)
class CoupledPair:
    first: TankResonator
    second: TankResonator
    C_coupling: float

    def __post_init__(self):
        if self.C_coupling < 0:
            raise InvalidParameterError("C_coupling must be non-negative")


@dataclass(frozen=True)
class NodeShift:
    delta_f0: float
    delta_phase: float


def node_shift(res: TankResonator, delta_c: float, f_drive: float | None = None) -> NodeShift:
    """Resonance shift and phase change at the old resonance when the load grows by delta_c."""
    f0 = resonant_frequency(res)
    fd = f0 if f_drive is None else f_drive
    if delta_c == 0:
        return NodeShift(0.0, 0.0)
    f1 = resonant_frequency(res, delta_c)
    dphi = float(phase_lag(res, fd, delta_c) - phase_lag(res, fd))
    return NodeShift(f1 - f0, dphi)


def coupled_shift(pair: CoupledPair) -> tuple[NodeShift, NodeShift]:
    """Per-node effect of grounding the other node through C_coupling."""
    return node_shift(pair.first, pair.C_coupling), node_shift(pair.second, pair.C_coupling)


def small_signal_shift(c_total: float, delta_c: float) -> float:
    """First-order relative resonance shift -dC / (2 C)."""
    return -delta_c / (2.0 * c_total)


# Loaded Q and total capacitance behind the coupled-resonator phase data.
COUPLED_LOADED_Q = 51.0
COUPLED_C_TOTAL = 14.7e-12


def coupled_reference(c_total: float = COUPLED_C_TOTAL, loaded: float = COUPLED_LOADED_Q,
                      f0: float = 10.5e6, r_source: float = 50.0,
                      margin: float = 1.05) -> TankResonator:
    """Matched resonator with the given load and loaded Q at f0.

    A matched network halves the unloaded Q, so the coil gets Q = 2 Q_L.
    The coil is made 5% larger than the bare resonance value so the coil
    plus load looks inductive enough for the divider to transform it up
    to the source resistance.
    """
    w0 = 2 * math.pi * f0
    L = margin / (w0 * w0 * c_total)
    q_u = 2.0 * loaded
    f_match = f0
    # matching fixes the gain peak; shift it so the 90 deg lag lands on f0
    for _ in range(30):
        c_a, c_b = design_match(L, q_u, c_total, r_source, f_match)
        res = TankResonator(L, q_u, c_a, c_b, c_total, r_source, f0)
        fr = resonant_frequency(res)
        if abs(fr / f0 - 1) < 1e-10:
            break
        f_match *= f0 / fr
    return res


@dataclass(frozen=True)
class PhaseLockLoop:
    resonator: TankResonator
    varactor_range: tuple = (5e-12, 50e-12)
    C_D: float = 2e-12
    loop_gain: float = 0.2
    lowpass_corner: float = 1e3
    setpoint_phase: float = SETPOINT
    varactor_initial: float | None = None
    steps_per_corner: float = 20.0

    def __post_init__(self):
        lo, hi = self.varactor_range
        if not 0 < lo < hi:
            raise InvalidParameterError("varactor_range must satisfy 0 < C_min < C_max")
        if not self.loop_gain > 0:
            raise InvalidParameterError("loop_gain must be positive")
        if not (self.C_D > 0 and self.lowpass_corner > 0):
            raise InvalidParameterError("C_D and lowpass_corner must be positive")

    @property
    def c_initial(self) -> float:
        lo, hi = self.varactor_range
        return self.varactor_initial if self.varactor_initial is not None else math.sqrt(lo * hi)

    def branch(self, c_var: float) -> float:
        """Capacitance of the C_D + varactor string seen at the output."""
        return self.C_D * c_var / (self.C_D + c_var)

    @property
    def dt(self) -> float:
        return 1.0 / (self.lowpass_corner * self.steps_per_corner)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["varactor_range"] = list(self.varactor_range)
        return d

    @classmethod
    def from_dict(cls, d) -> "PhaseLockLoop":
        d = dict(d)
        d["resonator"] = TankResonator.from_dict(d["resonator"])
        d["varactor_range"] = tuple(d.get("varactor_range", (5e-12, 50e-12)))
        return cls(**d)


def lock_resonator(res: TankResonator, f_lock: float, c_branch: float) -> TankResonator:
    """Trim C_trap so that, with the varactor branch attached, the lag is 90 deg at f_lock."""
    def err(c):
        return phase_lag(replace(res, C_trap=c), f_lock, c_branch) - SETPOINT

    c0 = res.C_trap
    cs = c0 * np.geomspace(0.2, 5.0, 400)
    vals = np.array([err(c) for c in cs])
    idx = np.where(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if len(idx) == 0:
        raise NoSolutionError(f"cannot tune the load to resonate at {f_lock:.6g} Hz")
    k = idx[np.argmin(np.abs(np.log(cs[idx] / c0)))]
    c = optimize.brentq(err, cs[k], cs[k + 1], xtol=1e-20, rtol=1e-14)
    return replace(res, C_trap=float(c), drive_frequency=f_lock)


def as_built_lock_loop(f_lock: float = 9.7e6, **kw) -> PhaseLockLoop:
    """Phase lock around the as-built resonator retuned to ``f_lock``."""
    base = PhaseLockLoop(as_built_resonator(), **kw)
    res = lock_resonator(base.resonator, f_lock, base.branch(base.c_initial))
    return replace(base, resonator=res)


def loop_matrix(loop_gain: float, a: float) -> np.ndarray:
    """Linearised per-step map of (filtered error, phase error)."""
    return np.array([[1 - a, a], [-loop_gain * a * (1 - a), 1 - loop_gain * a * a]])


def monotone_gain_bound(a: float) -> float:
    """Largest loop gain whose linearised loop has real eigenvalues in (0, 1)."""
    def ok(g):
        lam = np.linalg.eigvals(loop_matrix(g, a))
        return bool(np.all(np.abs(lam.imag) < 1e-14) and np.all((lam.real > 0) & (lam.real < 1)))

    lo, hi = 1e-9, 1.0
    while ok(hi) and hi < 1e6:
        lo, hi = hi, hi * 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


@dataclass
class LockResult:
    residual_phase: float
    varactor_C: float
    locked: bool
    clamped: bool
    history: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 3)))
    diagnostic: str = ""


def phase_lock_sim(loop: PhaseLockLoop, disturbance_deltaC: float, settle_time: float = 0.05,
                   tolerance: float = math.radians(1.0)) -> LockResult:
    """Discrete-time lock: phase detector, single-pole filter, integrator, varactor.

    The drive sits at the undisturbed 90-degree point.  The integrator rate
    is normalised by the plant sensitivity d(phase)/dC_var, so ``loop_gain``
    is the dimensionless loop gain per corner period.
    """
    res = loop.resonator
    lo, hi = loop.varactor_range
    c_var = loop.c_initial
    f_drive = res.drive_frequency

    def measure(c):
        return float(phase_lag(res, f_drive, disturbance_deltaC + loop.branch(c)))

    dc = 1e-4 * c_var
    # sensitivity of the undisturbed plant, as a designer would calibrate it
    sens = float((phase_lag(res, f_drive, loop.branch(c_var + dc))
                  - phase_lag(res, f_drive, loop.branch(c_var - dc))) / (2 * dc))
    a = 2 * math.pi * loop.lowpass_corner * loop.dt
    n_steps = max(1, int(round(settle_time / loop.dt)))
    y = 0.0
    clamped = False
    hist = np.empty((n_steps + 1, 3))
    err = measure(c_var) - loop.setpoint_phase
    hist[0] = (0.0, err, c_var)
    for k in range(1, n_steps + 1):
        y += a * (err - y)
        c_new = c_var - loop.loop_gain * a * y / sens
        clamped = c_new < lo or c_new > hi
        c_var = min(max(c_new, lo), hi)
        err = measure(c_var) - loop.setpoint_phase
        hist[k] = (k * loop.dt, err, c_var)
    locked = abs(err) < tolerance and not clamped
    diag = "" if not clamped else (
        f"varactor clamped at {c_var:.4g} F; range {lo:.3g}-{hi:.3g} F exhausted")
    return LockResult(float(err), float(c_var), bool(locked), bool(clamped), hist, diag)


def save_circuit(path, obj) -> None:
    Path(path).write_text(json.dumps(obj.to_dict(), indent=1))


def load_circuit(path):
    """Load a TankResonator or PhaseLockLoop from JSON."""
    d = json.loads(Path(path).read_text())
    if "resonator" in d:
        return PhaseLockLoop.from_dict(d)
    return TankResonator.from_dict(d)
