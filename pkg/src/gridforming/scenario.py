"""Scenario files: schema-validated YAML for a microgrid plus one run.

A scenario file carries the complete physical description (graph, lines,
loads, inverters), the control gains, the secondary-layer settings, a list of
timed events and the integrator configuration.  All numbers are plain SI
units (ohm, henry, farad, siemens, watt, var, second) except ``frequency``,
which is in hertz; no suffix parsing.  Validation happens before any
numerics: the schema rejects unknown keys and reports the JSON path of the
offending field, and a few plausibility rules emit warnings for values that
look like unit slips (for example a bus shunt capacitance above 1 mF).

Defaults applied when a section is omitted: per-bus shunts ``C = 0.1e-6 F,
G = 1e-3 S``; secondary control enabled with ``alpha = 667`` and neighbours
inferred from the electrical graph; no events; integrator ``rk4`` with
``dt = 5e-6``, ``record_dt = 5e-4``, ``horizon = 1.0``, started from a solved
equilibrium.
"""

from __future__ import annotations

import math
import warnings
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .controllers import ControlGains
from .inverter import InverterBank, InverterParams
from .network import MicrogridGraph, NetworkParams
from .sim import Event, Scenario
from .system import MicrogridSpec

__all__ = [
    "SCHEMA",
    "ScenarioError",
    "parse_scenario",
    "parse_scenario_text",
    "emit_scenario",
    "bundled_scenario_path",
    "bundled_scenario_names",
    "random_benchmark_spec",
    "specs_match",
]


class ScenarioError(ValueError):
    """A scenario file failed validation.  ``path`` locates the bad field."""

    def __init__(self, message: str, path: str = "$"):
        self.path = path
        super().__init__(f"{path}: {message}")


_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_NUM = {"type": "number"}
_EDGE = {
    "type": "array",
    "items": {"type": "integer", "minimum": 0},
    "minItems": 2,
    "maxItems": 2,
}


def _scalar_or_list(base: dict) -> dict:
    return {"oneOf": [base, {"type": "array", "items": base, "minItems": 1}]}


_GAIN_KEYS = (
    "k_p", "k_I", "n_q", "c_p", "c_I",
    "lambda_P", "lambda_I", "Lambda_P", "Lambda_I", "i_max",
)

_INVERTER_KEYS = ("R_f", "L_f", "C_f", "G_s", "R_c", "L_c", "C_dc", "G_dc")

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "graph", "lines", "loads", "inverters", "gains"],
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string"},
        "frequency": _POS,
        "graph": {
            "type": "object",
            "additionalProperties": False,
            "required": ["buses", "edges"],
            "properties": {
                "buses": {"type": "integer", "minimum": 1},
                "edges": {"type": "array", "items": _EDGE},
            },
        },
        "lines": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["R", "L"],
                "properties": {"R": _POS, "L": _POS},
            },
        },
        "loads": {
            "type": "object",
            "additionalProperties": False,
            "required": ["series"],
            "properties": {
                "series": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["R", "L"],
                        "properties": {"R": _POS, "L": _POS},
                    },
                },
                "shunt": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["C", "G"],
                        "properties": {"C": _POS, "G": _POS},
                    },
                },
                "constant_power": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["bus", "P"],
                        "properties": {
                            "bus": {"type": "integer", "minimum": 0},
                            "P": _NUM,
                            "Q": _NUM,
                        },
                    },
                },
                "constant_power_lag": _POS,
                "constant_power_floor": {
                    "type": "number", "exclusiveMinimum": 0, "maximum": 1,
                },
            },
        },
        "inverters": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["bus"],
                "properties": {
                    "bus": {"type": "integer", "minimum": 0},
                    "online": {"type": "boolean"},
                    **{k: _POS for k in _INVERTER_KEYS},
                },
            },
        },
        "gains": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "v_dc_ref": _POS,
                "V_n": _POS,
                **{k: _scalar_or_list(_NONNEG) for k in _GAIN_KEYS},
            },
        },
        "secondary": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "alpha": _POS,
                "comm_edges": {"type": "array", "items": _EDGE},
                "chi0": {"type": "array", "items": _NUM},
            },
        },
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["time", "kind"],
                "properties": {
                    "time": _POS,
                    "kind": {
                        "enum": [
                            "load-step",
                            "inverter-connect",
                            "inverter-disconnect",
                            "secondary-enable",
                            "secondary-disable",
                        ]
                    },
                    "bus": {"type": "integer", "minimum": 0},
                    "P": _NUM,
                    "Q": _NUM,
                    "inverter": {"type": "integer", "minimum": 0},
                },
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": _POS,
                "dt": _POS,
                "record_dt": _POS,
                "method": {"enum": ["rk4", "rk45"]},
                "start": {"enum": ["equilibrium", "flat"]},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"prefix": {"type": "string"}},
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _validate_schema(doc: object) -> None:
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ScenarioError(err.message, err.json_path)


def _require(cond: bool, message: str, path: str) -> None:
    if not cond:
        raise ScenarioError(message, path)


def _plausibility_warnings(doc: dict) -> None:
    for i, sh in enumerate(doc.get("loads", {}).get("shunt", [])):
        c = sh["C"]
        if not (1e-12 <= c <= 1e-3):
            warnings.warn(
                f"bus {i} shunt capacitance {c} F is outside [1 pF, 1 mF]; "
                "check the units",
                stacklevel=3,
            )
    for i, inv in enumerate(doc.get("inverters", [])):
        for key in ("C_f", "C_dc"):
            if inv.get(key, 0.0) > 1.0:
                warnings.warn(
                    f"inverter {i} {key} = {inv[key]} F is larger than 1 F; "
                    "check the units",
                    stacklevel=3,
                )
        for key in ("L_f", "L_c"):
            if inv.get(key, 0.0) > 100.0:
                warnings.warn(
                    f"inverter {i} {key} = {inv[key]} H is larger than 100 H; "
                    "check the units",
                    stacklevel=3,
                )


def _gain_array(gains_doc: dict, key: str, n: int, default: float) -> np.ndarray:
    value = gains_doc.get(key, default)
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(n, arr[0])
    _require(
        arr.size == n,
        f"expected 1 or {n} values, got {arr.size}",
        f"$.gains.{key}",
    )
    return arr


def _spec_from_doc(doc: dict) -> MicrogridSpec:
    graph_doc = doc["graph"]
    nb = graph_doc["buses"]
    edges = [tuple(e) for e in graph_doc["edges"]]
    for i, (a, b) in enumerate(edges):
        _require(a < nb and b < nb, f"edge ({a}, {b}) references a bus >= {nb}",
                 f"$.graph.edges[{i}]")
        _require(a != b, f"edge ({a}, {b}) is a self-loop", f"$.graph.edges[{i}]")
    graph = MicrogridGraph(nb, edges)

    lines = doc["lines"]
    _require(len(lines) == len(edges),
             f"expected {len(edges)} line entries (one per edge), got {len(lines)}",
             "$.lines")

    loads = doc["loads"]
    series = loads["series"]
    _require(len(series) == nb,
             f"expected {nb} series-load entries (one per bus), got {len(series)}",
             "$.loads.series")
    shunt = loads.get("shunt")
    if shunt is None:
        shunt = [{"C": 0.1e-6, "G": 1e-3}] * nb
    _require(len(shunt) == nb,
             f"expected {nb} shunt entries (one per bus), got {len(shunt)}",
             "$.loads.shunt")

    cpl_P, cpl_Q = np.zeros(nb), np.zeros(nb)
    for i, entry in enumerate(loads.get("constant_power", [])):
        _require(entry["bus"] < nb, f"bus {entry['bus']} out of range",
                 f"$.loads.constant_power[{i}].bus")
        cpl_P[entry["bus"]] += entry["P"]
        cpl_Q[entry["bus"]] += entry.get("Q", 0.0)

    net = NetworkParams(
        graph=graph,
        line_R=np.array([ln["R"] for ln in lines]),
        line_L=np.array([ln["L"] for ln in lines]),
        shunt_C=np.array([sh["C"] for sh in shunt]),
        shunt_G=np.array([sh["G"] for sh in shunt]),
        load_R=np.array([ld["R"] for ld in series]),
        load_L=np.array([ld["L"] for ld in series]),
    )

    inv_docs = doc["inverters"]
    n = len(inv_docs)
    for i, inv in enumerate(inv_docs):
        _require(inv["bus"] < nb, f"bus {inv['bus']} out of range",
                 f"$.inverters[{i}].bus")
    bank = InverterBank.from_units([
        InverterParams(**{k: inv[k] for k in _INVERTER_KEYS if k in inv})
        for inv in inv_docs
    ])

    gains_doc = doc.get("gains", {})
    defaults = ControlGains.uniform(1)
    gains = ControlGains(
        **{
            key: _gain_array(gains_doc, key, n, float(getattr(defaults, key)[0]))
            for key in _GAIN_KEYS
        },
        v_dc_ref=float(gains_doc.get("v_dc_ref", defaults.v_dc_ref)),
        V_n=float(gains_doc.get("V_n", defaults.V_n)),
    )

    secondary = doc.get("secondary", {})
    comm_edges = secondary.get("comm_edges")
    if comm_edges is not None:
        comm_edges = [tuple(e) for e in comm_edges]
        for i, (a, b) in enumerate(comm_edges):
            _require(a < n and b < n,
                     f"edge ({a}, {b}) references an inverter >= {n}",
                     f"$.secondary.comm_edges[{i}]")

    omega0 = 2.0 * math.pi * doc.get("frequency", 50.0)
    return MicrogridSpec(
        network=net,
        inverters=bank,
        gains=gains,
        inverter_bus=np.array([inv["bus"] for inv in inv_docs]),
        omega0=omega0,
        cpl_P=cpl_P,
        cpl_Q=cpl_Q,
        secondary_alpha=float(secondary.get("alpha", 667.0)),
        comm_edges=comm_edges,
        cpl_floor_frac=float(doc["loads"].get("constant_power_floor", 0.4)),
        cpl_tau=float(doc["loads"].get("constant_power_lag", 1e-3)),
    )


def _scenario_from_doc(doc: dict, spec: MicrogridSpec, fallback_name: str) -> Scenario:
    n = spec.n_inverters
    secondary = doc.get("secondary", {})
    chi0 = secondary.get("chi0")
    if chi0 is not None:
        _require(len(chi0) == n, f"expected {n} values, got {len(chi0)}",
                 "$.secondary.chi0")
        chi0 = np.asarray(chi0, dtype=float)

    events = []
    for i, ev in enumerate(doc.get("events", [])):
        kind = ev["kind"]
        if kind == "load-step":
            _require("bus" in ev, "load-step event needs a 'bus'",
                     f"$.events[{i}]")
        if kind in ("inverter-connect", "inverter-disconnect"):
            _require("inverter" in ev, f"{kind} event needs an 'inverter'",
                     f"$.events[{i}]")
        events.append(Event(
            time=ev["time"], kind=kind, bus=ev.get("bus"),
            P=ev.get("P", 0.0), Q=ev.get("Q", 0.0),
            inverter=ev.get("inverter"),
        ))

    integ = doc.get("integrator", {})
    online0 = np.array([inv.get("online", True) for inv in doc["inverters"]])
    name = doc.get("outputs", {}).get("prefix") or doc.get("name") or fallback_name
    try:
        return Scenario(
            spec=spec,
            horizon=float(integ.get("horizon", 1.0)),
            events=events,
            dt=float(integ.get("dt", 5e-6)),
            record_dt=float(integ.get("record_dt", 5e-4)),
            method=integ.get("method", "rk4"),
            start=integ.get("start", "equilibrium"),
            secondary_on=bool(secondary.get("enabled", True)),
            online0=online0,
            chi0=chi0,
            name=name,
        )
    except ValueError as err:
        raise ScenarioError(str(err), "$") from err


def parse_scenario_text(text: str, name: str = "scenario") -> tuple[MicrogridSpec, Scenario]:
    """Parse scenario YAML from a string; see :func:`parse_scenario`."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ScenarioError(f"not valid YAML: {err}") from err
    _validate_schema(doc)
    _plausibility_warnings(doc)
    spec = _spec_from_doc(doc)
    return spec, _scenario_from_doc(doc, spec, name)


def parse_scenario(path: str | Path) -> tuple[MicrogridSpec, Scenario]:
    """Load and validate a scenario file.

    Returns the microgrid description and the run configuration.  Parsing is
    deterministic: the same file always yields an identical spec.  Raises
    :class:`ScenarioError` (with the JSON path of the offending field) on any
    schema or consistency violation, and warns on unit-implausible values.
    """
    path = Path(path)
    return parse_scenario_text(path.read_text(), name=path.stem)


def _round(x: float) -> float:
    """Shortest float representation that round-trips exactly."""
    return float(repr(float(x)))


def emit_scenario(spec: MicrogridSpec, scenario: Scenario) -> str:
    """Render a spec + run configuration back to canonical scenario YAML.

    ``parse(emit(parse(f)))`` yields a spec identical to ``parse(f)``; all
    defaults are written out explicitly.
    """
    bank, gains, net = spec.inverters, spec.gains, spec.network
    n = spec.n_inverters
    doc: dict = {
        "schema": 1,
        "name": scenario.name,
        "frequency": _round(spec.omega0 / (2.0 * math.pi)),
        "graph": {
            "buses": net.graph.bus_count,
            "edges": [list(e) for e in net.graph.edges],
        },
        "lines": [
            {"R": _round(r), "L": _round(l)}
            for r, l in zip(net.line_R, net.line_L)
        ],
        "loads": {
            "series": [
                {"R": _round(r), "L": _round(l)}
                for r, l in zip(net.load_R, net.load_L)
            ],
            "shunt": [
                {"C": _round(c), "G": _round(g)}
                for c, g in zip(net.shunt_C, net.shunt_G)
            ],
            "constant_power": [
                {"bus": int(b), "P": _round(spec.cpl_P[b]), "Q": _round(spec.cpl_Q[b])}
                for b in np.flatnonzero((spec.cpl_P != 0) | (spec.cpl_Q != 0))
            ],
            "constant_power_lag": _round(spec.cpl_tau),
            "constant_power_floor": _round(spec.cpl_floor_frac),
        },
        "inverters": [
            {
                "bus": int(spec.inverter_bus[j]),
                "online": bool(scenario.online0[j]),
                **{k: _round(getattr(bank, k)[j]) for k in _INVERTER_KEYS},
            }
            for j in range(n)
        ],
        "gains": {
            **{
                k: _round(getattr(gains, k)[0])
                if np.ptp(getattr(gains, k)) == 0
                else [_round(v) for v in getattr(gains, k)]
                for k in _GAIN_KEYS
                if np.all(np.isfinite(getattr(gains, k)))
            },
            "v_dc_ref": _round(gains.v_dc_ref),
            "V_n": _round(gains.V_n),
        },
        "secondary": {
            "enabled": scenario.secondary_on,
            "alpha": _round(spec.secondary_alpha),
            "comm_edges": [list(e) for e in spec.comm_edges],
            **(
                {"chi0": [_round(v) for v in scenario.chi0]}
                if scenario.chi0 is not None
                else {}
            ),
        },
        "events": [
            {
                "time": _round(ev.time),
                "kind": ev.kind,
                **({"bus": int(ev.bus)} if ev.bus is not None else {}),
                **({"P": _round(ev.P), "Q": _round(ev.Q)}
                   if ev.kind == "load-step" else {}),
                **({"inverter": int(ev.inverter)} if ev.inverter is not None else {}),
            }
            for ev in scenario.events
        ],
        "integrator": {
            "horizon": _round(scenario.horizon),
            "dt": _round(scenario.dt),
            "record_dt": _round(scenario.record_dt),
            "method": scenario.method,
            "start": scenario.start,
        },
        "outputs": {"prefix": scenario.name},
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def bundled_scenario_names() -> list[str]:
    """Names of the scenario files shipped with the package."""
    root = resources.files("gridforming").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_scenario_path(name: str) -> Path:
    """Filesystem path of a bundled scenario (for use with parse_scenario)."""
    path = resources.files("gridforming").joinpath("scenarios", f"{name}.yaml")
    if not path.is_file():
        raise FileNotFoundError(
            f"no bundled scenario {name!r}; available: {bundled_scenario_names()}"
        )
    return Path(str(path))


# Parameter ranges of the benchmark family used for randomized testing:
# inverter electricals and control gains each drawn log-uniformly (linearly
# where the lower bound is zero) within published benchmark bounds.
_BENCH_RANGES = {
    "R_f": (0.05, 1.5),
    "L_f": (0.08e-3, 8e-3),
    "C_f": (20e-6, 150e-6),
    "L_c": (0.1e-3, 30e-3),
    "R_c": (0.03, 2.0),
}
_GAIN_RANGES = {
    "k_p": (0.006, 0.06),
    "n_q": (0.0, 0.078),
    "c_p": (1.0, 5.0),
    "c_I": (10.0, 50.0),
    "lambda_P": (1e-3, 0.1),
    "lambda_I": (2.5e-3, 2.5),
}


def _log_uniform(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    return np.exp(rng.uniform(np.log(lo), np.log(hi), n))


def random_benchmark_spec(
    seed: int | np.random.Generator,
    n_inverters: int | None = None,
    uniform_tau: bool = True,
) -> MicrogridSpec:
    """Draw a random microgrid within the benchmark parameter ranges.

    Produces a connected ring-with-chords topology with one inverter per
    bus, R/L lines and loads near the reference design, and per-unit
    electrical parameters and gains inside the benchmark bounds.  With
    ``uniform_tau`` (default) a single ratio ``k_I/k_p`` is drawn and each
    unit's ``k_I`` follows its ``k_p``, keeping the secondary certificate's
    hypothesis satisfied; otherwise ``k_I`` is drawn independently per unit.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = int(n_inverters if n_inverters is not None else rng.integers(2, 6))

    edges = [(j, (j + 1) % n) for j in range(n)] if n > 2 else [(0, 1)]
    if n >= 4 and rng.random() < 0.5:
        a = int(rng.integers(0, n))
        b = int((a + 2) % n)
        if (a, b) not in edges and (b, a) not in edges:
            edges.append((a, b))
    ne = len(edges)

    net = NetworkParams(
        graph=MicrogridGraph(n, edges),
        line_R=rng.uniform(0.05, 0.3, ne),
        line_L=rng.uniform(1e-3, 5e-3, ne),
        shunt_C=np.full(n, 0.1e-6),
        shunt_G=np.full(n, 1e-3),
        load_R=rng.uniform(15.0, 40.0, n),
        load_L=rng.uniform(10e-3, 50e-3, n),
    )
    bank = InverterBank(
        R_f=_log_uniform(rng, *_BENCH_RANGES["R_f"], n),
        L_f=_log_uniform(rng, *_BENCH_RANGES["L_f"], n),
        C_f=_log_uniform(rng, *_BENCH_RANGES["C_f"], n),
        G_s=np.full(n, 3e-3),
        R_c=_log_uniform(rng, *_BENCH_RANGES["R_c"], n),
        L_c=_log_uniform(rng, *_BENCH_RANGES["L_c"], n),
        C_dc=np.full(n, 10e-3),
        G_dc=np.full(n, 10e-3),
    )
    k_p = _log_uniform(rng, *_GAIN_RANGES["k_p"], n)
    if uniform_tau:
        k_I = k_p * rng.uniform(100.0, 800.0)
    else:
        k_I = rng.uniform(1.0, 50.0, n)
    gains = ControlGains(
        k_p=k_p,
        k_I=k_I,
        n_q=rng.uniform(*_GAIN_RANGES["n_q"], n),
        c_p=rng.uniform(*_GAIN_RANGES["c_p"], n),
        c_I=rng.uniform(*_GAIN_RANGES["c_I"], n),
        lambda_P=_log_uniform(rng, *_GAIN_RANGES["lambda_P"], n),
        lambda_I=_log_uniform(rng, *_GAIN_RANGES["lambda_I"], n),
        Lambda_P=np.full(n, 1.0),
        Lambda_I=np.full(n, 10.0),
        v_dc_ref=1000.0,
        V_n=311.0,
        i_max=np.full(n, np.inf),
    )
    return MicrogridSpec(
        network=net, inverters=bank, gains=gains, inverter_bus=np.arange(n),
    )


def specs_match(a: MicrogridSpec, b: MicrogridSpec) -> bool:
    """Field-by-field equality of two microgrid descriptions."""
    if a.network.graph.bus_count != b.network.graph.bus_count:
        return False
    if list(map(tuple, a.network.graph.edges)) != list(map(tuple, b.network.graph.edges)):
        return False
    for obj_a, obj_b, keys in (
        (a.network, b.network,
         ("line_R", "line_L", "shunt_C", "shunt_G", "load_R", "load_L")),
        (a.inverters, b.inverters, _INVERTER_KEYS),
        (a.gains, b.gains, _GAIN_KEYS + ("v_dc_ref", "V_n")),
        (a, b, ("inverter_bus", "omega0", "cpl_P", "cpl_Q", "secondary_alpha",
                "cpl_floor_frac", "cpl_tau")),
    ):
        for key in keys:
            if not np.array_equal(getattr(obj_a, key), getattr(obj_b, key)):
                return False
    return list(map(tuple, a.comm_edges)) == list(map(tuple, b.comm_edges))
