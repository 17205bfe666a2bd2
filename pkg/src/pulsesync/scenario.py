"""Scenario configuration and the runners behind ``pulsesync run``.

A scenario is a YAML mapping validated against :data:`SCHEMA`. Rational
parameters are written as strings ("1.004", "11/10") or integers. Each system
under test has a runner that builds a :class:`~pulsesync.sim.World`, installs
correct nodes and the adversary, runs to a horizon and evaluates its checks.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import jsonschema
import yaml

from .byzantine import Adversary, FaultPlan
from .consensus import get_routine, run_lockstep
from .main_pulser import (MainPulserSpec, attach_main_pulser, randomize_main_pulser, solve_main_timeouts)
from .metrics import (Metrics, bit_rates, count_kind, detect_stabilisation, good_resyncs, pulse_times,
                      verdicts)
from .resync import (PulseForwarder, ResyncSpec, attach_resync, partition_blocks, randomize_resync,
                     solve_resync_timeouts)
from .runtime import Node
from .sim import DELIVER, ClockFn, DelaySchedule, Trace, World
from .st_pulser import attach_st, measure_st, solve_st_timeouts, st_machine
from .timebase import Q, ceil_to_grid, dec, fmt, q

SYSTEMS = ("st-pulser", "main-pulser", "resync", "full-recursion", "consensus-only")

_RAT = {"anyOf": [{"type": "integer"}, {"type": "string", "pattern": r"^\s*-?[0-9./]+\s*$"}]}

SCHEMA = {
    "type": "object",
    "required": ["system", "n", "f"],
    "additionalProperties": False,
    "properties": {
        "label": {"type": "string"},
        "system": {"enum": list(SYSTEMS)},
        "n": {"type": "integer", "minimum": 1},
        "f": {"type": "integer", "minimum": 0},
        "theta": _RAT,
        "d": _RAT,
        "sigma": _RAT,
        "phi": _RAT,
        "tau": _RAT,
        "rho": _RAT,
        "seed": {"type": "integer"},
        "duration": _RAT,
        "routine": {"type": "string"},
        "faulty": {
            "type": "object",
            "patternProperties": {r"^[0-9]+$": {"anyOf": [{"type": "string"}, {"type": "object"}]}},
            "additionalProperties": False,
        },
        "delays": {
            "type": "object",
            "properties": {
                "strategy": {"enum": ["constant", "random", "extreme"]},
                "delay": _RAT,
            },
            "additionalProperties": False,
        },
        "init": {
            "type": "object",
            "properties": {
                "spread": _RAT,
                "inflight": {"type": "integer", "minimum": 0},
                "arbitrary": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "options": {"type": "object"},
        "asserts": {"type": "array", "items": {"type": "string"}},
    },
}


class ScenarioError(ValueError):
    """Malformed or infeasible configuration (CLI exit code 2)."""


@dataclass
class Scenario:
    system: str
    n: int
    f: int
    theta: Q = field(default_factory=lambda: q("1.004"))
    d: Q = field(default_factory=lambda: q(1))
    sigma: Optional[Q] = None
    phi: Q = field(default_factory=lambda: q("1.03"))
    tau: Q = field(default_factory=lambda: q(10))
    rho: Optional[Q] = None
    seed: int = 0
    duration: Optional[Q] = None
    routine: str = "phase-king-silent"
    faulty: Dict[int, object] = field(default_factory=dict)
    delays: Dict[str, object] = field(default_factory=lambda: {"strategy": "random"})
    init: Dict[str, object] = field(default_factory=dict)
    options: Dict[str, object] = field(default_factory=dict)
    asserts: List[str] = field(default_factory=lambda: ["all"])
    label: str = ""

    def __post_init__(self):
        if self.sigma is None:
            self.sigma = 2 * self.d

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        if isinstance(data.get("faulty"), dict):
            # YAML reads bare node ids as integers
            data = dict(data, faulty={str(k): v for k, v in data["faulty"].items()})
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ScenarioError(f"invalid scenario at {where}: {exc.message}") from None
        kw = dict(data)
        for key in ("theta", "d", "sigma", "phi", "tau", "rho", "duration"):
            if key in kw:
                try:
                    kw[key] = q(kw[key]) if isinstance(kw[key], (int, str)) else kw[key]
                except (ValueError, TypeError) as exc:
                    raise ScenarioError(f"invalid scenario at {key}: {exc}") from None
        if "faulty" in kw:
            kw["faulty"] = {int(k): v for k, v in kw["faulty"].items()}
        if kw.get("delays", {}).get("delay") is not None:
            kw["delays"] = dict(kw["delays"], delay=q(kw["delays"]["delay"]))
        scn = cls(**kw)
        if scn.system != "consensus-only" and not scn.theta > 1:
            raise ScenarioError("theta must exceed 1")
        return scn

    def with_seed(self, seed: int) -> "Scenario":
        data = dict(self.__dict__)
        data["seed"] = seed
        return Scenario(**data)

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, type(Q(0))):
                out[k] = fmt(v)
            elif k == "faulty":
                out[k] = {str(a): b for a, b in v.items()}
            elif k == "delays":
                out[k] = {a: fmt(b) if isinstance(b, type(Q(0))) else b for a, b in v.items()}
            else:
                out[k] = v
        return out


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown location"
        raise ScenarioError(f"cannot parse {path} ({where}): {getattr(exc, 'problem', exc)}") from None
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    return Scenario.from_dict(data)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""
    t: Optional[Q] = None

    def line(self) -> str:
        at = f" at t={dec(self.t)}" if self.t is not None else ""
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}{at}" + (f": {self.detail}" if self.detail else "")


@dataclass
class RunResult:
    scenario: Scenario
    trace: Trace
    metrics: Dict[str, object]
    checks: List[Check]
    params: Dict[str, object] = field(default_factory=dict)
    machines: str = ""
    correct: List[int] = field(default_factory=list)
    events: int = 0

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def first_failure(self) -> Optional[Check]:
        for c in self.checks:
            if not c.ok:
                return c
        return None


def _filter_checks(checks: List[Check], asserts: Sequence[str]) -> List[Check]:
    if not asserts or "all" in asserts:
        return checks
    if "none" in asserts:
        return []
    return [c for c in checks if any(c.name.startswith(a) for a in asserts)]


# ---------------------------------------------------------------------------
# world construction
# ---------------------------------------------------------------------------

class Env:
    """A world plus the adversary and the seeded RNG streams of one run."""

    def __init__(self, scn: Scenario, horizon, n: Optional[int] = None, run_id: str = ""):
        n = scn.n if n is None else n
        self.scn = scn
        self.rng = random.Random(scn.seed)
        clock_rng = random.Random(self.rng.randrange(2 ** 32))
        horizon = q(horizon)
        step = max(scn.d, ceil_to_grid(horizon / 200, scn.d))
        clocks = [ClockFn.drifting(clock_rng, scn.theta, horizon, step,
                                   offset=clock_rng.randint(0, 1000) * scn.d) for _ in range(n)]
        dl = scn.delays or {}
        strategy = dl.get("strategy", "random")
        delays = DelaySchedule(scn.d, strategy, seed=self.rng.randrange(2 ** 32), delay=dl.get("delay"))
        self.world = World(n, scn.d, clocks, delays, Trace(run_id or f"{scn.system}-{scn.seed}"), theta=scn.theta)
        try:
            self.adv = Adversary(self.world, FaultPlan(dict(scn.faulty)), scn.f)
        except ValueError as exc:
            raise ScenarioError(f"invalid fault plan: {exc}") from None
        self.hosts = [v for v in range(n) if v not in self.world.faulty or self.world.faulty[v].hosts_protocol]
        self.correct = list(self.adv.correct)

    def add_catalog(self, tags, junk: Optional[Dict[str, Callable]] = None):
        self.adv.catalog |= set(tags)
        if junk:
            self.adv.junk_payloads.update(junk)

    def inflight(self, count: int):
        """Arbitrary messages already in transit at time 0 (delivered before d)."""
        tags = sorted(self.adv.catalog)
        if not tags or count <= 0:
            return
        w, rng = self.world, self.rng
        for v in self.hosts:
            for _ in range(count):
                tag = rng.choice(tags)
                at = w.d * Q(rng.randint(1, 63), 64)
                w.push(at, DELIVER, v, rng.randrange(w.n), tag, self.adv.junk(tag, rng))

    def spread_times(self, spread) -> Dict[int, Q]:
        spread = q(spread)
        return {v: spread * Q(self.rng.randint(0, 63), 64) for v in range(self.world.n)}


def _frame_junk(rounds):
    return lambda rng: (rng.randint(1, rounds), bytes([rng.randint(0, 2)]))


# ---------------------------------------------------------------------------
# st-pulser
# ---------------------------------------------------------------------------

def run_st(scn: Scenario) -> RunResult:
    to = solve_st_timeouts(scn.theta, scn.d, scn.tau)
    spec = st_machine(scn.n, scn.f, to)
    pulses = int(scn.options.get("pulses", 6))
    horizon = scn.duration or (to.first_window_bound + pulses * to.max_gap + 2 * scn.d)
    env = Env(scn, horizon)
    w = env.world
    env.add_catalog(["st.propose"])
    for v in env.hosts:
        inst = attach_st(Node(v, w), spec, "st")
        if scn.init.get("arbitrary", True):
            inst.randomize(env.rng, scn.n)
    spread = scn.init.get("spread", scn.tau)
    if q(spread) > scn.tau:
        raise ScenarioError("init spread must not exceed tau")
    starts = env.spread_times(spread)
    for v in env.hosts:
        w.signal_at(starts[v], v, "st.init")
    env.inflight(int(scn.init.get("inflight", 2)))
    env.adv.start()
    w.advance(horizon)
    rec = w.trace.records
    m = measure_st(rec, env.correct, "st", after=_init_times(rec, "st.init"))
    origin = min(starts[v] for v in env.correct)
    checks = []
    if not m.indexed:
        checks.append(Check("st.first-window", False, "no joint pulse"))
    else:
        t0 = m.window_starts[0]
        checks.append(Check("st.first-window", t0 - origin < to.first_window_bound,
                            f"t0 - first init = {dec(t0 - origin)} < {dec(to.first_window_bound)}", t0))
        worst = max(range(len(m.skews)), key=lambda i: m.skews[i])
        checks.append(Check("st.skew", m.max_skew < 2 * scn.d, f"max skew {dec(m.max_skew)} < 2d",
                            m.window_starts[worst]))
        bad = [g for g in m.gaps if not to.min_gap <= g < to.max_gap]
        checks.append(Check("st.gaps", not bad and len(m.gaps) >= 1,
                            f"{len(m.gaps)} gaps in [{dec(to.min_gap)}, {dec(to.max_gap)})"
                            + (f", {len(bad)} outside" if bad else "")))
    metrics = metrics_from_trace(scn, rec, env.correct)
    params = {k: fmt(getattr(to, k)) for k in ("theta", "d", "tau", "T0", "T1", "T2", "T3")}
    return RunResult(scn, w.trace, metrics, _filter_checks(checks, scn.asserts), params, spec.dump(),
                     env.correct, w.processed)


# ---------------------------------------------------------------------------
# main pulser with an oracle resynchronisation signal
# ---------------------------------------------------------------------------

def run_main(scn: Scenario) -> RunResult:
    n, f, d = scn.n, scn.f, scn.d
    routine = get_routine(scn.routine, n, f, seed=scn.seed)
    rho = scn.rho if scn.rho is not None else 4 * d
    mt = solve_main_timeouts(scn.theta, d, routine.rounds, rho)
    goods = _main_goods(scn, mt)
    t_r = goods[0]
    after = int(scn.options.get("pulses_after", 3))
    horizon = scn.duration or max(t_r + mt.stabilisation_after_resync + after * mt.phi_plus,
                                  goods[-1] + mt.T_active + after * mt.phi_plus)
    env = Env(scn, horizon)
    w, rng = env.world, env.rng
    spec = MainPulserSpec("mp", list(range(n)), f, mt, routine, "mp.resync")
    env.add_catalog(["mp.main.pulse", "mp.main.wait", "mp.st.propose", "mp.cons.frame"],
                    {"mp.cons.frame": _frame_junk(routine.rounds)})
    for v in env.hosts:
        pn = attach_main_pulser(Node(v, w), spec)
        randomize_main_pulser(pn, rng, n)
    env.inflight(int(scn.init.get("inflight", 2)))
    spurious = int(scn.options.get("spurious_resyncs", 3))
    for v in env.hosts:
        for _ in range(rng.randint(0, spurious)):
            w.signal_at(t_r * Q(rng.randint(0, 1023), 1024), v, "mp.resync")
        for g in goods:
            w.signal_at(g + rho * Q(rng.randint(0, 63), 64), v, "mp.resync")
    env.adv.start()
    w.advance(horizon)
    rec = w.trace.records
    pulses = pulse_times(rec, "mp.main", env.correct)
    st = detect_stabilisation(pulses, 2 * d, mt.phi_minus, mt.phi_plus)
    bound = t_r + mt.stabilisation_after_resync
    checks = []
    if st is None:
        checks.append(Check("main.stabilisation", False, "no stable suffix detected"))
    else:
        checks.append(Check("main.stabilisation", st.time <= bound,
                            f"stabilised {dec(st.time - t_r)} after the good resync, bound {dec(bound - t_r)}",
                            st.time))
        checks.append(Check("main.skew", st.max_skew <= 2 * d, f"max skew {dec(st.max_skew)}"))
        ok = st.gaps and mt.phi_minus <= st.min_gap and st.max_gap < mt.phi_plus
        checks.append(Check("main.gaps", bool(ok),
                            f"gaps in [{dec(st.min_gap)}, {dec(st.max_gap)}] within "
                            f"[{dec(mt.phi_minus)}, {dec(mt.phi_plus)})" if st.gaps else "no gaps"))
    from .lemmas import main_lemmas
    checks += main_lemmas(rec, env.correct, mt, "mp", goods, f)
    metrics = metrics_from_trace(scn, rec, env.correct)
    machines = "\n\n".join(m.dump() for m in spec.machines())
    return RunResult(scn, w.trace, metrics, _filter_checks(checks, scn.asserts), mt.report(), machines,
                     env.correct, w.processed)


# ---------------------------------------------------------------------------
# resynchronisation with oracle block pulsers
# ---------------------------------------------------------------------------

def _oracle_block(w: World, rng: random.Random, nodes, key, lo, hi, sigma, until, first_by):
    """Stabilised block pulser: group starts spaced in [lo, hi - sigma], member
    offsets in [0, sigma)."""
    t = first_by * Q(rng.randint(0, 63), 64)
    while t < until:
        for v in nodes:
            w.signal_at(t + sigma * Q(rng.randint(0, 63), 64), v, key)
        t += lo + (hi - sigma - lo) * Q(rng.randint(0, 64), 64)


def _spoiler_block(w: World, rng: random.Random, nodes, key, period, until):
    """Pulse events of a block with too many faults: random subsets at a
    jittered period."""
    t = period * Q(rng.randint(0, 63), 64)
    nodes = list(nodes)
    while t < until and nodes:
        k = rng.randint(1, len(nodes))
        for v in rng.sample(nodes, k):
            w.signal_at(t + w.d * Q(rng.randint(0, 63), 64), v, key)
        t += period * Q(rng.randint(32, 96), 64)


def _mimic_block(env: Env, nodes, liars, key, tag, lo, hi, until):
    """A faulty block that pulses coherently, at spacings drawn from [lo, hi];
    its faulty members back each pulse with block pulse messages to everyone."""
    w, rng = env.world, env.rng
    t = hi * Q(rng.randint(0, 63), 64)
    while t < until:
        for v in nodes:
            w.signal_at(t + w.d * Q(rng.randint(0, 63), 64), v, key)
        for u in liars:
            b = env.adv.behaviours[u]
            w.call_at(t, lambda now, b=b: [b.send(w, v, tag) for v in env.correct])
        t += lo + (hi - lo) * Q(rng.randint(0, 64), 64)


def run_resync(scn: Scenario) -> RunResult:
    n, f, d, sigma = scn.n, scn.f, scn.d, scn.sigma
    part = partition_blocks(n, f)
    psi = scn.options.get("psi")
    rt = solve_resync_timeouts(scn.theta, scn.phi, sigma, d, q(psi) if psi is not None else None)
    k = int(scn.options.get("correct_block", scn.seed % 2))
    if k not in (0, 1):
        raise ScenarioError("correct_block must be 0 or 1")
    faulty_block = 1 - k
    bound = rt.good_pulse_bound(k)
    horizon = scn.duration or (bound + rt.Psi + 2 * rt.rho + rt.phi_plus[1])
    if not scn.faulty:
        # default placement: f faults inside the faulty block
        members = part.blocks[faulty_block]
        scn = scn.with_seed(scn.seed)
        kinds = ["vote-spoiler", "burst", "equivocator"]
        scn.faulty = {}
        for i, v in enumerate(members[:f]):
            kind = kinds[(scn.seed + i) % len(kinds)]
            if kind == "burst":
                spec = {"kind": "burst", "seed": scn.seed * 7 + i,
                        "tags": [f"rs.bp{faulty_block}", f"rs.voter{faulty_block}.vote"],
                        "period": fmt(rt.beta / 2)}
            elif kind == "equivocator":
                spec = {"kind": "equivocator", "seed": scn.seed * 7 + i,
                        "react": {"vote": 0.5, f"bp{faulty_block}": 0.5}}
            else:
                spec = {"kind": "vote-spoiler", "seed": scn.seed * 7 + i}
            scn.faulty[v] = spec
    env = Env(scn, horizon)
    w, rng = env.world, env.rng
    sources = ("blk0.pulse", "blk1.pulse")
    spec = ResyncSpec("rs", list(range(n)), f, part, rt, sources)
    env.add_catalog(["rs.bp0", "rs.bp1", "rs.voter0.vote", "rs.voter1.vote"])
    nodes = {}
    for v in env.hosts:
        nodes[v] = attach_resync(Node(v, w), spec)
        randomize_resync(nodes[v], rng, n)
    env.inflight(int(scn.init.get("inflight", 2)))
    correct_members = [v for v in part.blocks[k] if v in env.hosts]
    _oracle_block(w, rng, correct_members, sources[k], rt.phi_minus[k], rt.phi_plus[k], sigma, horizon,
                  rt.phi_plus[k])
    spoil = [v for v in part.blocks[faulty_block] if v in env.hosts]
    mode = scn.options.get("faulty_block", ("spoil", "mimic", "both")[scn.seed % 3])
    if mode in ("spoil", "both"):
        period = q(scn.options.get("spoiler_period", rt.beta / 2))
        _spoiler_block(w, rng, spoil, sources[faulty_block], period, horizon)
    if mode in ("mimic", "both"):
        liars = [u for u in part.blocks[faulty_block] if u in env.adv.behaviours]
        # "mimic" keeps a plausible period so its pulses pass the filter;
        # "both" also produces early and late pulses
        lo, hi = rt.phi_minus[faulty_block], rt.phi_plus[faulty_block]
        if mode == "both":
            lo, hi = lo / 2, 2 * hi
        _mimic_block(env, spoil, liars, sources[faulty_block], spec.bp_tag(faulty_block), lo, hi, horizon)
    env.adv.start()
    w.advance(horizon)
    rec = w.trace.records
    good = good_resyncs(rec, "rs", env.correct, rt.rho, rt.Psi)
    checks = []
    first = good[0].t if good else None
    checks.append(Check("resync.good-pulse", first is not None and first <= bound,
                        (f"first good pulse at {dec(first)}, bound {dec(bound)}" if first is not None
                         else "no good resynchronisation pulse"), first))
    from .lemmas import resync_lemmas
    checks += resync_lemmas(rec, env.correct, rt, "rs", correct_block=k)
    metrics = metrics_from_trace(scn, rec, env.correct)
    machines = "\n\n".join(m.dump() for m in spec.machines())
    return RunResult(scn, w.trace, metrics, _filter_checks(checks, scn.asserts), rt.report(), machines,
                     env.correct, w.processed)


# ---------------------------------------------------------------------------
# consensus only (ideal lockstep rounds)
# ---------------------------------------------------------------------------

def run_consensus(scn: Scenario) -> RunResult:
    routine = get_routine(scn.routine, scn.n, scn.f, seed=scn.seed)
    rng = random.Random(scn.seed)
    faulty = sorted(scn.faulty) or sorted(rng.sample(range(scn.n), scn.f))
    correct = [v for v in range(scn.n) if v not in faulty]
    runs = int(scn.options.get("runs", 200))
    trace = Trace(f"consensus-{scn.seed}")
    agree = valid = silent = 0
    zero_runs = 0
    for i in range(runs):
        mode = i % 3
        if mode == 0:
            inputs = {v: 0 for v in correct}
        elif mode == 1:
            inputs = {v: 1 for v in correct}
        else:
            inputs = {v: rng.randint(0, 1) for v in correct}
        script = random.Random(rng.randrange(2 ** 32))

        def adversary(r, u, v, sent, script=script):
            x = script.random()
            if x < 0.3:
                return None
            return bytes([script.randint(0, 2)])
        res = run_lockstep(routine, inputs, faulty, adversary)
        for v in correct:
            trace.add(Q(i), v, "decide", "cons", f"{inputs[v]}>{res.outputs[v]}")
        agree += res.agreement
        xs = set(inputs.values())
        if len(xs) == 1:
            valid += all(y == next(iter(xs)) for y in res.outputs.values())
        else:
            valid += 1
        if xs == {0}:
            zero_runs += 1
            silent += res.correct_messages == 0
    checks = [
        Check("consensus.agreement", agree == runs or "mock" in scn.routine, f"{agree}/{runs} runs agreed"),
        Check("consensus.validity", valid == runs, f"{valid}/{runs} runs valid"),
    ]
    if "silent" in scn.routine:
        checks.append(Check("consensus.silence", silent == zero_runs, f"{silent}/{zero_runs} all-0 runs silent"))
    metrics = metrics_from_trace(scn, trace.records, correct)
    return RunResult(scn, trace, metrics, _filter_checks(checks, scn.asserts), {"rounds": routine.rounds},
                     routine.describe(), correct, runs)


# ---------------------------------------------------------------------------
# metrics, computed from the trace (and the scenario) only
# ---------------------------------------------------------------------------

def _init_times(records, key) -> Dict[int, Q]:
    out: Dict[int, Q] = {}
    for t, node, kind, sc, _ in records:
        if kind == "ext" and sc == key and node not in out:
            out[node] = t
    return out


def _main_goods(scn: Scenario, mt) -> List[Q]:
    """Start times of the oracle's good resynchronisation pulses."""
    rng0 = random.Random(scn.seed ^ 0x5EED)
    t_r = mt.cleanup + rng0.randint(0, 64) * mt.T2 / 16
    goods = [t_r]
    if scn.options.get("second_resync", True):
        # a later good resynchronisation pulse that hits the stabilised system
        goods.append(t_r + mt.stabilisation_after_resync + rng0.randint(0, 64) * mt.T2 / 64)
    return goods


def _bits(records, d, correct):
    return {str(v): b for v, b in sorted(bit_rates(records, d, correct).items())}


def metrics_from_trace(scn: Scenario, records, correct: Sequence[int]) -> Dict[str, object]:
    """The run's metrics; a trace read back from CSV gives the same result."""
    d = scn.d
    if scn.system == "st-pulser":
        m = measure_st(records, correct, "st", after=_init_times(records, "st.init"))
        return Metrics(
            stabilisation={"time": fmt(m.window_starts[0]) if m.indexed else None,
                           "groups": len(m.indexed),
                           "max_skew": fmt(m.max_skew) if m.indexed else None,
                           "min_gap": fmt(min(m.gaps)) if m.gaps else None,
                           "max_gap": fmt(max(m.gaps)) if m.gaps else None},
            max_bits=_bits(records, d, correct)).as_dict()
    if scn.system == "main-pulser":
        routine = get_routine(scn.routine, scn.n, scn.f, seed=scn.seed)
        rho = scn.rho if scn.rho is not None else 4 * d
        mt = solve_main_timeouts(scn.theta, d, routine.rounds, rho)
        st = detect_stabilisation(pulse_times(records, "mp.main", correct), 2 * d, mt.phi_minus, mt.phi_plus)
        return Metrics(
            stabilisation=st.summary() if st else None, max_bits=_bits(records, d, correct),
            verdicts=verdicts(records, "mp"), late_drops=count_kind(records, "late"),
            aborts=count_kind(records, "abort"), good_resyncs=[fmt(g) for g in _main_goods(scn, mt)]).as_dict()
    if scn.system == "resync":
        psi = scn.options.get("psi")
        rt = solve_resync_timeouts(scn.theta, scn.phi, scn.sigma, d, q(psi) if psi is not None else None)
        k = int(scn.options.get("correct_block", scn.seed % 2))
        good = good_resyncs(records, "rs", correct, rt.rho, rt.Psi)
        return Metrics(
            max_bits=_bits(records, d, correct), good_resyncs=[fmt(g.t) for g in good],
            extra={"correct_block": k, "T_star": fmt(rt.T_star), "good_pulse_bound": fmt(rt.good_pulse_bound(k))},
        ).as_dict()
    if scn.system == "consensus-only":
        routine = get_routine(scn.routine, scn.n, scn.f, seed=scn.seed)
        runs: Dict[Q, set] = {}
        for t, node, kind, sc, detail in records:
            if kind == "decide":
                runs.setdefault(t, set()).add(detail.partition(">")[2])
        agree = sum(1 for outs in runs.values() if len(outs) == 1)
        return Metrics(verdicts=verdicts(records), extra={"rounds": routine.rounds, "runs": len(runs),
                                                          "agreement_runs": agree}).as_dict()
    if scn.system == "full-recursion":
        from .recursion import recursion_metrics
        return recursion_metrics(scn, records, correct)
    raise ScenarioError(f"unknown system {scn.system!r}")


def run(scn: Scenario) -> RunResult:
    if scn.system == "st-pulser":
        return run_st(scn)
    if scn.system == "main-pulser":
        return run_main(scn)
    if scn.system == "resync":
        return run_resync(scn)
    if scn.system == "consensus-only":
        return run_consensus(scn)
    if scn.system == "full-recursion":
        from .recursion import run_recursion
        return run_recursion(scn)
    raise ScenarioError(f"unknown system {scn.system!r}")
