"""Event-driven time-domain simulation of the closed-loop microgrid.

A scenario is one spec plus a time-ordered list of events (constant-power
load steps, inverter connection/disconnection, secondary-control switching).
Between events the dynamics are autonomous; the simulator integrates each
segment with a fixed-step RK4 kernel (or an adaptive fallback), applies the
event as a parameter/topology change with state continuity for every
surviving state, and records on a fixed decimation grid.

Channel widths never change mid-run: trajectories always carry every
declared inverter, with NaN entries while a unit is offline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import NDArray

from ._kernels import kernel_args, rk4_run
from .network import constant_power_current
from .system import Configuration, MicrogridSpec, StateLayout, closed_loop_rhs
from .linearize import solve_equilibrium

__all__ = [
    "Event",
    "Scenario",
    "Trajectory",
    "SteadyStateReport",
    "SimulationDiverged",
    "simulate",
    "steady_state_report",
]

EVENT_KINDS = (
    "load-step",
    "inverter-connect",
    "inverter-disconnect",
    "secondary-enable",
    "secondary-disable",
)

# per-inverter state blocks and their DQ widths, in layout order
_INV_BLOCKS = (
    ("delta", 1), ("zeta", 1), ("v_dc", 1), ("i_dq", 2), ("v_o", 2),
    ("i_o", 2), ("beta", 2), ("xi", 2), ("chi", 1),
)
_NET_BLOCKS = ("v_b", "i_line", "i_load", "i_cpl")


class SimulationDiverged(RuntimeError):
    """State went non-finite; carries the last valid time and trajectory."""

    def __init__(self, message: str, time: float, channel: str,
                 trajectory: "Trajectory") -> None:
        super().__init__(message)
        self.time = time
        self.channel = channel
        self.trajectory = trajectory


@dataclass
class Event:
    """One timed change.  ``P``/``Q`` are *added* constant power (W/var) for
    load steps — negative values remove load; ``inverter`` indexes the
    declared units for connect/disconnect."""

    time: float
    kind: str
    bus: int | None = None
    P: float = 0.0
    Q: float = 0.0
    inverter: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")
        if self.kind == "load-step" and self.bus is None:
            raise ValueError("load-step event needs a bus index")
        if self.kind in ("inverter-connect", "inverter-disconnect") and self.inverter is None:
            raise ValueError(f"{self.kind} event needs an inverter index")


@dataclass
class Scenario:
    """Spec + events + integrator settings for one simulation run."""

    spec: MicrogridSpec
    horizon: float
    events: list[Event] = field(default_factory=list)
    dt: float = 5e-6
    record_dt: float = 5e-4
    method: str = "rk4"
    start: str = "equilibrium"
    secondary_on: bool = True
    online0: NDArray[np.bool_] | None = None
    chi0: NDArray[np.float64] | None = None
    name: str = "scenario"

    def __post_init__(self) -> None:
        n = self.spec.n_inverters
        nb = self.spec.network.graph.bus_count
        if self.online0 is None:
            self.online0 = np.ones(n, dtype=bool)
        self.online0 = np.asarray(self.online0, dtype=bool)
        if self.online0.shape != (n,):
            raise ValueError(f"online0 must have {n} entries")
        if not self.online0.any():
            raise ValueError("at least one inverter must start online")
        if self.chi0 is not None:
            self.chi0 = np.asarray(self.chi0, dtype=float)
            if self.chi0.shape != (n,):
                raise ValueError(f"chi0 must have {n} entries")
        if self.method not in ("rk4", "rk45"):
            raise ValueError("method must be 'rk4' or 'rk45'")
        if self.start not in ("equilibrium", "flat"):
            raise ValueError("start must be 'equilibrium' or 'flat'")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.dt <= 0.0 or self.record_dt <= 0.0:
            raise ValueError("dt and record_dt must be positive")
        self._check_grid()
        self.events = sorted(self.events, key=lambda e: e.time)
        online = self.online0.copy()
        for ev in self.events:
            if not (0.0 < ev.time < self.horizon):
                raise ValueError(f"event time {ev.time} outside (0, horizon)")
            if ev.kind == "load-step" and not (0 <= ev.bus < nb):
                raise ValueError(f"load-step bus {ev.bus} out of range")
            if ev.kind in ("inverter-connect", "inverter-disconnect"):
                if not (0 <= ev.inverter < n):
                    raise ValueError(f"event references undeclared inverter {ev.inverter}")
                if ev.kind == "inverter-connect":
                    if online[ev.inverter]:
                        raise ValueError(f"inverter {ev.inverter} already online at t={ev.time}")
                    online[ev.inverter] = True
                else:
                    if not online[ev.inverter]:
                        raise ValueError(f"inverter {ev.inverter} already offline at t={ev.time}")
                    online[ev.inverter] = False
                    if not online.any():
                        raise ValueError("disconnecting the last online inverter is not supported")

    def _check_grid(self) -> None:
        """Events and horizon must sit on the recording grid, and the grid on
        the step grid, so fixed-step segments land exactly on boundaries."""
        ratio = self.record_dt / self.dt
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ValueError("record_dt must be a whole multiple of dt")
        for t in [self.horizon] + [e.time for e in self.events]:
            k = t / self.record_dt
            if abs(k - round(k)) > 1e-6:
                raise ValueError(
                    f"time {t} is not a multiple of record_dt={self.record_dt}; "
                    "events and horizon must sit on the recording grid"
                )


@dataclass
class Trajectory:
    """Decimated full-width recording of one run.

    ``states`` rows are in the full-spec layout (every declared inverter);
    entries of offline units are NaN.  Derived channels follow the recorded
    convention: P = v_oD i_oD + v_oQ i_oQ per unit, frequencies from the
    droop law.
    """

    spec: MicrogridSpec
    layout: StateLayout
    t: NDArray[np.float64]
    states: NDArray[np.float64]
    online: NDArray[np.bool_]
    events: list[Event]
    name: str = "scenario"

    def block(self, name: str) -> NDArray[np.float64]:
        """All samples of one state block (rows = time)."""
        return self.states[:, getattr(self.layout, name)]

    @cached_property
    def omega(self) -> NDArray[np.float64]:
        g = self.spec.gains
        delta = self.block("delta")
        i_oD = self.block("i_o")[:, 0::2]
        chi = self.block("chi")
        return self.spec.omega0 - g.k_p * i_oD - g.k_I * delta + chi

    @property
    def frequency(self) -> NDArray[np.float64]:
        """Per-unit instantaneous frequency in Hz."""
        return self.omega / (2.0 * np.pi)

    @cached_property
    def active_power(self) -> NDArray[np.float64]:
        v_o, i_o = self.block("v_o"), self.block("i_o")
        return v_o[:, 0::2] * i_o[:, 0::2] + v_o[:, 1::2] * i_o[:, 1::2]

    @cached_property
    def reactive_power(self) -> NDArray[np.float64]:
        v_o, i_o = self.block("v_o"), self.block("i_o")
        return v_o[:, 1::2] * i_o[:, 0::2] - v_o[:, 0::2] * i_o[:, 1::2]

    @cached_property
    def voltage_magnitude(self) -> NDArray[np.float64]:
        v_o = self.block("v_o")
        return np.hypot(v_o[:, 0::2], v_o[:, 1::2])

    @property
    def delta_within_bounds(self) -> bool:
        """Monitored scenario invariant: all recorded angles in (-pi/2, pi/2)."""
        d = self.block("delta")
        return bool(np.nanmax(np.abs(d), initial=0.0) < 0.5 * np.pi)

    def window(self, t_start: float, t_end: float | None = None) -> NDArray[np.bool_]:
        """Boolean sample mask for the closed time window."""
        if t_end is None:
            t_end = self.t[-1]
        return (self.t >= t_start - 1e-12) & (self.t <= t_end + 1e-12)

    def column_names(self) -> list[str]:
        n, nb, ne = self.layout.n_inv, self.layout.n_bus, self.layout.n_edge
        names = ["t"]
        per_inv = ["delta", "zeta", "v_dc", "i_D", "i_Q", "v_oD", "v_oQ",
                   "i_oD", "i_oQ", "beta_D", "beta_Q", "xi_D", "xi_Q", "chi"]
        for base in per_inv:
            names += [f"{base}_{j + 1}" for j in range(n)]
        for base in ("f", "P", "Q", "v_o_mag"):
            names += [f"{base}_{j + 1}" for j in range(n)]
        for base in ("v_bD", "v_bQ"):
            names += [f"{base}_{b + 1}" for b in range(nb)]
        for base in ("i_lineD", "i_lineQ"):
            names += [f"{base}_{e + 1}" for e in range(ne)]
        for base in ("i_loadD", "i_loadQ", "i_cplD", "i_cplQ"):
            names += [f"{base}_{b + 1}" for b in range(nb)]
        return names

    def to_table(self) -> NDArray[np.float64]:
        """Assemble the CSV column matrix in :meth:`column_names` order."""
        cols = [self.t[:, None]]
        for blk, width in _INV_BLOCKS:
            data = self.block(blk)
            if width == 1:
                cols.append(data)
            else:
                cols.append(data[:, 0::2])
                cols.append(data[:, 1::2])
        cols += [self.frequency, self.active_power, self.reactive_power,
                 self.voltage_magnitude]
        for blk in ("v_b", "i_line", "i_load", "i_cpl"):
            data = self.block(blk)
            cols.append(data[:, 0::2])
            cols.append(data[:, 1::2])
        return np.hstack(cols)

    def to_csv(self, path) -> None:
        """Deterministic CSV: header row + '%.10e' samples."""
        table = self.to_table()
        np.savetxt(path, table, fmt="%.10e", delimiter=",",
                   header=",".join(self.column_names()), comments="")

    def state_name(self, index: int) -> str:
        """Human-readable name of one entry of the packed state vector."""
        for blk, se in self.layout._starts().items():
            if se[0] <= index < se[1]:
                off = index - se[0]
                axis = ""
                width = dict(_INV_BLOCKS).get(blk)
                if blk in _NET_BLOCKS or (width == 2):
                    axis = "DQ"[off % 2]
                    off //= 2
                return f"{blk}{axis}[{off}]"
        raise IndexError(index)


@dataclass
class SteadyStateReport:
    """Final-window statistics per derived channel."""

    window: float
    means: dict[str, NDArray[np.float64]]
    max_dev: dict[str, NDArray[np.float64]]
    settled: dict[str, NDArray[np.bool_]]

    def channel_settled(self, name: str) -> bool:
        return bool(np.all(self.settled[name]))


def steady_state_report(
    traj: Trajectory,
    window: float,
    t_end: float | None = None,
    settle_rtol: float = 1e-3,
    settle_atol: float = 1e-3,
) -> SteadyStateReport:
    """Mean and worst deviation of each derived channel over a final window.

    ``t_end`` defaults to the last sample; a channel is settled when its
    largest deviation from the window mean is below
    ``settle_atol + settle_rtol * |mean|``.  NaN entries (offline units) are
    ignored in the statistics but reported as NaN means.
    """
    if t_end is None:
        t_end = float(traj.t[-1])
    if window > t_end - traj.t[0] + 1e-12:
        raise ValueError("window longer than the available trajectory")
    mask = traj.window(t_end - window, t_end)
    channels = {
        "frequency": traj.frequency,
        "active_power": traj.active_power,
        "reactive_power": traj.reactive_power,
        "voltage_magnitude": traj.voltage_magnitude,
        "v_dc": traj.block("v_dc"),
        "chi": traj.block("chi"),
    }
    means, devs, settled = {}, {}, {}
    for name, data in channels.items():
        win = data[mask]
        all_nan = np.all(np.isnan(win), axis=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mu = np.nanmean(win, axis=0)
            dev = np.nanmax(np.abs(win - mu), axis=0, initial=0.0)
        means[name] = mu
        devs[name] = dev
        # units offline for the whole window carry NaN means; they do not
        # block the settled verdict
        settled[name] = (dev <= settle_atol + settle_rtol * np.abs(mu)) | all_nan
    return SteadyStateReport(window=window, means=means, max_dev=devs, settled=settled)


def _entry_maps(layout_full: StateLayout, layout_act: StateLayout,
                idx: NDArray[np.int_]) -> tuple[NDArray[np.int_], NDArray[np.int_]]:
    """Paired (full, active) flat indices for every state the two layouts share."""
    full_ix, act_ix = [], []
    for blk, width in _INV_BLOCKS:
        fs = getattr(layout_full, blk).start
        As = getattr(layout_act, blk).start
        for a, jf in enumerate(idx):
            for w in range(width):
                full_ix.append(fs + width * jf + w)
                act_ix.append(As + width * a + w)
    for blk in _NET_BLOCKS:
        fsl = getattr(layout_full, blk)
        asl = getattr(layout_act, blk)
        full_ix.extend(range(fsl.start, fsl.stop))
        act_ix.extend(range(asl.start, asl.stop))
    return np.asarray(full_ix), np.asarray(act_ix)


def _embed(rows: NDArray[np.float64], layout_full: StateLayout,
           layout_act: StateLayout, online: NDArray[np.bool_]) -> NDArray[np.float64]:
    """Active-layout rows -> full-layout rows with NaN for offline units."""
    rows = np.atleast_2d(rows)
    full = np.full((rows.shape[0], layout_full.size), np.nan)
    fi, ai = _entry_maps(layout_full, layout_act, np.where(online)[0])
    full[:, fi] = rows[:, ai]
    return full


def _extract(x_full: NDArray[np.float64], layout_full: StateLayout,
             layout_act: StateLayout, online: NDArray[np.bool_]) -> NDArray[np.float64]:
    """Full-layout vector -> active-layout vector for the online units."""
    fi, ai = _entry_maps(layout_full, layout_act, np.where(online)[0])
    x = np.zeros(layout_act.size)
    x[ai] = x_full[fi]
    return x


def _initial_active_state(scenario: Scenario, config: Configuration) -> NDArray[np.float64]:
    spec = scenario.spec
    chi0_full = scenario.chi0 if scenario.chi0 is not None else np.zeros(spec.n_inverters)
    chi0 = chi0_full[np.where(config.online)[0]]
    if scenario.start == "equilibrium":
        eq = solve_equilibrium(spec, config=config, chi0=chi0)
        if not eq.converged:
            raise RuntimeError(
                f"initial equilibrium did not converge (residual {eq.residual:.3e})"
            )
        return eq.x
    sub, layout, _ = closed_loop_rhs(spec, config)
    m, nb = layout.n_inv, layout.n_bus
    Vn = spec.gains.V_n
    v_b = np.zeros(2 * nb)
    v_b[0::2] = Vn
    v_o = np.zeros(2 * m)
    v_o[0::2] = Vn
    x = layout.pack(v_dc=np.full(m, spec.gains.v_dc_ref), v_o=v_o, v_b=v_b, chi=chi0)
    x[layout.i_cpl] = constant_power_current(
        v_b, config.cpl_P, config.cpl_Q, sub.cpl_floor_frac * Vn
    )
    return x


def _connect_inverter(x_full: NDArray[np.float64], layout_full: StateLayout,
                      spec: MicrogridSpec, j: int) -> None:
    """Initialize a connecting unit in place: local frame aligned to the bus
    voltage phase, capacitor at the bus voltage, currents and integrators
    zero, DC link at its reference."""
    b = spec.inverter_bus[j]
    v_b = x_full[layout_full.v_b]
    vbD, vbQ = v_b[2 * b], v_b[2 * b + 1]
    x_full[layout_full.delta.start + j] = np.arctan2(vbQ, vbD)
    x_full[layout_full.zeta.start + j] = 0.0
    x_full[layout_full.v_dc.start + j] = spec.gains.v_dc_ref
    for blk, val in (("i_dq", 0.0), ("i_o", 0.0), ("beta", 0.0), ("xi", 0.0)):
        s = getattr(layout_full, blk).start
        x_full[s + 2 * j : s + 2 * j + 2] = val
    x_full[layout_full.v_o.start + 2 * j : layout_full.v_o.start + 2 * j + 2] = (vbD, vbQ)
    x_full[layout_full.chi.start + j] = 0.0


def _integrate_segment(scenario: Scenario, config: Configuration,
                       x_act: NDArray[np.float64], t_a: float, t_b: float):
    """One autonomous segment; returns (x_final, records, n_valid_records)."""
    n_steps = int(round((t_b - t_a) / scenario.dt))
    rec_stride = int(round(scenario.record_dt / scenario.dt))
    n_rec = n_steps // rec_stride
    if scenario.method == "rk4":
        sub, layout, args = kernel_args(scenario.spec, config)
        return rk4_run(x_act, scenario.dt, n_steps, rec_stride, args)
    from scipy.integrate import solve_ivp

    sub, layout, f = closed_loop_rhs(scenario.spec, config)
    t_eval = t_a + scenario.record_dt * np.arange(1, n_rec + 1)
    sol = solve_ivp(lambda t, y: f(y), (t_a, t_b), x_act, method="RK45",
                    t_eval=t_eval, rtol=1e-4, atol=1e-6)
    rec = sol.y.T
    wrote = rec.shape[0]
    finite = np.isfinite(rec).all(axis=1)
    if not finite.all():
        wrote = int(np.argmin(finite)) + 1
    x_end = rec[wrote - 1] if wrote else x_act
    if sol.success and wrote == n_rec:
        x_end = sol.y[:, -1]
    return np.asarray(x_end, dtype=float), rec[:n_rec], min(wrote, n_rec)


def simulate(scenario: Scenario, x0: NDArray[np.float64] | None = None) -> Trajectory:
    """Run one scenario; returns the decimated trajectory.

    ``x0`` optionally overrides the initial state (in the layout of the
    initial online configuration).  Raises :class:`SimulationDiverged` if any
    recorded state goes non-finite; the exception carries the partial
    trajectory for post-mortem.
    """
    spec = scenario.spec
    n_all = spec.n_inverters
    g = spec.network.graph
    layout_full = StateLayout(n_all, g.bus_count, g.edge_count)

    config = Configuration.initial(spec, secondary_on=scenario.secondary_on,
                                   online=scenario.online0)
    _, layout_act, _ = closed_loop_rhs(spec, config)
    x_act = np.asarray(x0, dtype=float).copy() if x0 is not None \
        else _initial_active_state(scenario, config)
    if x_act.size != layout_act.size:
        raise ValueError(
            f"x0 has {x_act.size} entries; initial configuration needs {layout_act.size}"
        )

    # segment boundaries and the events at each boundary
    times = sorted({e.time for e in scenario.events})
    bounds = [0.0] + times + [scenario.horizon]

    t_rows = [0.0]
    s_rows = [_embed(x_act, layout_full, layout_act, config.online)[0]]
    online_rows = [config.online.copy()]

    for seg in range(len(bounds) - 1):
        t_a, t_b = bounds[seg], bounds[seg + 1]
        x_act, rec, wrote = _integrate_segment(scenario, config, x_act, t_a, t_b)
        n_rec = rec.shape[0]
        rec_full = _embed(rec[:wrote], layout_full, layout_act, config.online)
        seg_t = t_a + scenario.record_dt * np.arange(1, wrote + 1)
        t_rows.extend(seg_t.tolist())
        s_rows.extend(rec_full)
        online_rows.extend([config.online.copy()] * wrote)
        if wrote < n_rec:
            traj = _assemble(scenario, layout_full, t_rows, s_rows, online_rows)
            if wrote:
                bad_act = int(np.argmax(~np.isfinite(rec[wrote - 1])))
                fi, ai = _entry_maps(layout_full, layout_act, np.where(config.online)[0])
                to_full = np.empty(layout_act.size, dtype=int)
                to_full[ai] = fi
                name = traj.state_name(int(to_full[bad_act]))
                t_bad = float(seg_t[-1])
            else:
                name, t_bad = "(integrator failure)", t_a
            raise SimulationDiverged(
                f"state {name} went non-finite at t={t_bad:.6g} s", t_bad, name, traj
            )

        if t_b >= scenario.horizon:
            break
        # apply the events scheduled at t_b with state continuity
        x_full = _embed(x_act, layout_full, layout_act, config.online)[0]
        new_online = config.online.copy()
        for ev in (e for e in scenario.events if e.time == t_b):
            if ev.kind == "load-step":
                config.cpl_P[ev.bus] += ev.P
                config.cpl_Q[ev.bus] += ev.Q
            elif ev.kind == "secondary-enable":
                config.secondary_on = True
            elif ev.kind == "secondary-disable":
                config.secondary_on = False
            elif ev.kind == "inverter-connect":
                new_online[ev.inverter] = True
                _connect_inverter(x_full, layout_full, spec, ev.inverter)
            elif ev.kind == "inverter-disconnect":
                new_online[ev.inverter] = False
        config.online = new_online
        _, layout_act, _ = closed_loop_rhs(spec, config)
        x_act = _extract(x_full, layout_full, layout_act, config.online)

    return _assemble(scenario, layout_full, t_rows, s_rows, online_rows)


def _assemble(scenario: Scenario, layout_full: StateLayout, t_rows, s_rows,
              online_rows) -> Trajectory:
    return Trajectory(
        spec=scenario.spec,
        layout=layout_full,
        t=np.asarray(t_rows, dtype=float),
        states=np.asarray(s_rows, dtype=float),
        online=np.asarray(online_rows, dtype=bool),
        events=list(scenario.events),
        name=scenario.name,
    )
