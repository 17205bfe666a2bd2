"""Self-stabilising pulse synchroniser driven by resynchronisation signals.

Each node runs a *main* machine (PULSE / WAIT / RECOVER) and an *auxiliary*
machine (LISTEN / READ / INPUT0 / INPUT1 / RUN0 / RUN1 / OUTPUT0 / OUTPUT1).
The auxiliary machine decides, via a silent consensus instance simulated on
top of the start-signalled pulser, whether everybody should pulse next.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .consensus import ConsensusRoutine, RoundSimulation, get_routine
from .runtime import (AtLeast, Always, InState, MachineInstance, MachineSpec, Node, OnReceipt,
                      Signal, Timeout, TimeoutFires)
from .st_pulser import InfeasibleTimeouts, StTimeouts, solve_st_timeouts, st_machine
from .timebase import Q, ceil_to_grid, fmt, q

THETA_BOUND = "theta < (2+sqrt(32))/7"


def theta_in_range(theta) -> bool:
    """Exact test of 1 < theta < (2 + sqrt 32) / 7."""
    th = q(theta)
    x = 7 * th - 2
    return th > 1 and (x < 0 or x * x < 32)


@dataclass(frozen=True)
class MainTimeouts:
    theta: Q
    d: Q
    rounds: int
    rho: Q
    eps: Q
    T1: Q
    T_listen: Q
    T2: Q
    T_consensus: Q
    T_wait: Q
    T_active: Q
    tau: Q
    X: Q
    Y: Q
    round_cost: Q          # tau-independent part of the simulation time
    sim_slope: Q           # simulation time = sim_slope * tau + round_cost
    st: StTimeouts

    # accuracy and derived quantities
    @property
    def phi_minus(self) -> Q:
        return self.T2 / self.theta

    @property
    def phi_plus(self) -> Q:
        return (self.T2 + self.T_consensus) / self.theta

    @property
    def alpha(self) -> Q:
        return self.T_listen + self.d

    @property
    def delta(self) -> Q:
        return self.T1 + self.d + 2 * self.T_listen + self.T2 + self.T_consensus

    @property
    def gamma(self) -> Q:
        return self.T2 / self.theta - self.T_listen - 5 * self.T1 - 3 * self.d

    @property
    def beta(self) -> Q:
        return self.alpha + self.T_wait + self.gamma + 4 * self.T1 + 3 * self.d + 2 * self.delta

    @property
    def beta_prime(self) -> Q:
        return (self.T_active - self.T2 - self.T_consensus) / self.theta

    @property
    def cleanup(self) -> Q:
        """Time after which sliding windows hold only genuine messages."""
        return max(2 * self.T1, self.T_listen) + self.d

    @property
    def stabilisation_after_resync(self) -> Q:
        """Bound on the joint pulse after a good resync pulse at time 0."""
        return self.T_active + self.rho + self.T_consensus / self.theta

    @property
    def psi_required(self) -> Q:
        """Silence needed after a good resync pulse for the stabilisation argument."""
        return self.T_active + self.T_consensus / self.theta + 2 * self.d

    def constraints(self):
        th, d = self.theta, self.d
        T1, Tl, T2, Tc, Tw, Ta, tau, rho = (self.T1, self.T_listen, self.T2, self.T_consensus,
                                            self.T_wait, self.T_active, self.tau, self.rho)
        tau_rhs = max((1 - 1 / th) * T2 + Tl + d + max(Tl + d, 3 * T1 + 2 * d), (1 - 1 / th) * Ta + rho)
        sim = self.sim_slope * tau + self.round_cost
        c9 = 4 * T2 + Tl + th * (Tl + Tw - 5 * T1 - 4 * d + rho)
        c10 = 2 * T2 + Tc + th * (2 * Tl + T1 + Tw + 3 * d + 2 * T2 + 2 * Tc)
        rows = [
            ("theta < (2+sqrt(32))/7", None, None, theta_in_range(th)),
            ("T1 = 3 theta d", T1, 3 * th * d, T1 == 3 * th * d),
            ("T_listen = (theta-1) T1 + 3 theta d", Tl, (th - 1) * T1 + 3 * th * d,
             Tl == (th - 1) * T1 + 3 * th * d),
            ("T2 > theta (T_listen + 3 T1 + 3d)", T2, th * (Tl + 3 * T1 + 3 * d), T2 > th * (Tl + 3 * T1 + 3 * d)),
            ("(2/theta - 1) T2 > 2 T_listen + T_consensus + 5 T1 + 4d", (2 / th - 1) * T2,
             2 * Tl + Tc + 5 * T1 + 4 * d, (2 / th - 1) * T2 > 2 * Tl + Tc + 5 * T1 + 4 * d),
            ("tau = max{(1-1/theta) T2 + T_listen + d + max{T_listen+d, 3T1+2d}, (1-1/theta) T_active + rho}",
             tau, tau_rhs, tau == tau_rhs),
            ("T_consensus = theta * (simulation time of R rounds started within tau)", Tc, th * sim, Tc == th * sim),
            ("T_consensus >= theta (tau + T(R))", Tc, th * (tau + self.round_cost),
             Tc >= th * (tau + self.round_cost)),
            ("T_wait = T2 + T_consensus", Tw, T2 + Tc, Tw == T2 + Tc),
            ("T_active >= 4 T2 + T_listen + theta (T_listen + T_wait - 5 T1 - 4d + rho)", Ta, c9, Ta >= c9),
            ("T_active >= 2 T2 + T_consensus + theta (2 T_listen + T1 + T_wait + 3d + 2 T2 + 2 T_consensus)",
             Ta, c10, Ta >= c10),
            ("T(R) <= eps T2", self.round_cost, self.eps * T2, self.round_cost <= self.eps * T2),
            ("beta <= beta'", self.beta, self.beta_prime, self.beta <= self.beta_prime),
            ("tau >= start spread needed by the simulation", self.st.tau, tau, self.st.tau == tau),
        ]
        return rows

    def verify(self):
        for name, lhs, rhs, ok in self.constraints():
            if not ok:
                raise InfeasibleTimeouts(name, f"{fmt(lhs)} vs {fmt(rhs)}" if lhs is not None else "")
        return True

    def report(self) -> Dict[str, str]:
        keys = ["theta", "d", "rho", "eps", "T1", "T_listen", "T2", "T_consensus", "T_wait", "T_active",
                "tau", "X", "Y", "round_cost"]
        out = {k: fmt(getattr(self, k)) for k in keys}
        out["rounds"] = str(self.rounds)
        for k in ["phi_minus", "phi_plus", "alpha", "beta", "beta_prime", "gamma", "delta",
                  "stabilisation_after_resync", "psi_required"]:
            out[k] = fmt(getattr(self, k))
        return out


def _sim_linear(theta, d, rounds):
    """Simulation time bound as ``slope * tau + cost``."""
    a = solve_st_timeouts(theta, d, 1).round_time(rounds)
    b = solve_st_timeouts(theta, d, 2).round_time(rounds)
    slope = b - a
    return slope, a - slope


def _assemble(theta, d, rounds, rho, eps, X):
    th, d = q(theta), q(d)
    T1 = 3 * th * d
    Tl = (th - 1) * T1 + 3 * th * d
    slope, cost = _sim_linear(th, d, rounds)
    A_X = (1 - 1 / th) * X + Tl + d + max(Tl + d, 3 * T1 + 2 * d)
    c1 = th * (slope * A_X + cost)             # T_consensus when tau = A_X
    c2 = th * (slope * rho + cost)             # T_consensus = c2 + s * Y otherwise
    s = th * slope * (1 - 1 / th)
    # constraint rows on T_active: Y >= a_i + b_i * T_consensus(Y)
    rows = [
        (4 * X + Tl + th * (Tl + X - 5 * T1 - 4 * d + rho), th),
        (2 * X + th * (2 * Tl + T1 + 3 * d + 3 * X), 1 + 3 * th),
        # beta <= beta', slightly stronger than the previous row
        ((2 + 3 * th) * X + th * (T1 + 3 * d + 4 * Tl), 1 + 3 * th),
    ]
    Y = Q(0)
    for a, b in rows:
        if b * s >= 1:
            raise InfeasibleTimeouts("T_active fixed point (slope of the T_active bound below 1)")
        Y = max(Y, a + b * c1, (a + b * c2) / (1 - b * s))
    Y = ceil_to_grid(Y, d / 100)
    tau = max(A_X, (1 - 1 / th) * Y + rho)
    Tc = th * (slope * tau + cost)
    st = solve_st_timeouts(th, d, tau)
    return MainTimeouts(theta=th, d=d, rounds=rounds, rho=q(rho), eps=q(eps), T1=T1, T_listen=Tl, T2=X,
                        T_consensus=Tc, T_wait=X + Tc, T_active=Y, tau=tau, X=X, Y=Y,
                        round_cost=cost, sim_slope=slope, st=st)


def _feasible(mt: MainTimeouts) -> Optional[str]:
    for name, lhs, rhs, ok in mt.constraints():
        if not ok:
            return name
    return None


def solve_main_timeouts(theta, d, rounds: int, rho, T2=None, eps="1/100") -> MainTimeouts:
    """Solve the timeout system of the main/auxiliary machines.

    Without ``T2`` the least multiple of d/100 satisfying every row is chosen;
    with ``T2`` (a child pulser with prescribed accuracy) that value is checked.
    """
    th, d, rho, eps = q(theta), q(d), q(rho), q(eps)
    if not theta_in_range(th):
        raise InfeasibleTimeouts(THETA_BOUND, f"theta = {fmt(th)}")
    if rounds < 1:
        raise InfeasibleTimeouts("R >= 1")
    if T2 is not None:
        mt = _assemble(th, d, rounds, rho, eps, q(T2))
        bad = _feasible(mt)
        if bad:
            raise InfeasibleTimeouts(bad, f"with prescribed T2 = {fmt(T2)}")
        return mt
    step = d / 100
    T1 = 3 * th * d
    Tl = (th - 1) * T1 + 3 * th * d
    _, cost = _sim_linear(th, d, rounds)
    lo = max(th * (Tl + 3 * T1 + 3 * d), cost / eps)
    k_lo = int(ceil_to_grid(lo, step) / step)
    # grow until feasible; the feasible set is an upward-closed ray
    k_hi = max(k_lo, 1)
    bad = None
    for _ in range(60):
        bad = _feasible(_assemble(th, d, rounds, rho, eps, k_hi * step))
        if bad is None:
            break
        k_hi *= 2
    else:
        raise InfeasibleTimeouts(bad or "no feasible T2", f"theta = {fmt(th)}")
    while k_lo < k_hi:
        mid = (k_lo + k_hi) // 2
        if _feasible(_assemble(th, d, rounds, rho, eps, mid * step)) is None:
            k_hi = mid
        else:
            k_lo = mid + 1
    mt = _assemble(th, d, rounds, rho, eps, k_hi * step)
    mt.verify()
    return mt


def phi0(theta) -> Q:
    th = q(theta)
    return 1 + 5 * (th - 1) / (2 + 2 * th - 3 * th * th)


# ---------------------------------------------------------------------------
# machines
# ---------------------------------------------------------------------------

def main_machine(n: int, f: int, mt: MainTimeouts) -> MachineSpec:
    if n <= 3 * f:
        raise ValueError(f"main pulser needs n > 3f (got n={n}, f={f})")
    m = MachineSpec("main", ["PULSE", "WAIT", "RECOVER"], pulse_states=["PULSE"])
    m.timer("T1", mt.T1, ["PULSE"])
    m.timer("T_wait", mt.T_wait, ["WAIT"])
    m.window("pulse", 2 * mt.T1)
    m.broadcast("PULSE", "pulse")
    m.broadcast("WAIT", "wait")
    m.edge("PULSE", "WAIT", Timeout("T1") & AtLeast("pulse", n - f), "G1")
    m.edge("PULSE", "RECOVER", Timeout("T1"), "G1'")
    m.edge("WAIT", "PULSE", Signal("out1"), "G2")
    m.edge("RECOVER", "PULSE", Signal("out1"), "G2")
    m.edge("WAIT", "RECOVER", Timeout("T_wait") | Signal("out0"), "G2'")
    m.note("the pulse window spans 2*T1 so that pulses received shortly before a node's own pulse count")
    return m.validate()


def aux_machine(n: int, f: int, mt: MainTimeouts) -> MachineSpec:
    if n <= 3 * f:
        raise ValueError(f"auxiliary machine needs n > 3f (got n={n}, f={f})")
    m = MachineSpec("aux", ["LISTEN", "READ", "INPUT0", "INPUT1", "RUN0", "RUN1", "OUTPUT0", "OUTPUT1"])
    m.timer("T_listen", mt.T_listen, ["READ"])
    m.timer("T2", mt.T2, ["INPUT0", "INPUT1"])
    m.timer("T_consensus", mt.T_consensus, ["RUN0", "RUN1"])
    m.timer("T_active", mt.T_active, [])
    m.reset_on_signal("resync", "T_active")
    m.window("wait", mt.T_listen)
    m.emit("OUTPUT0", "out0")
    m.emit("OUTPUT1", "out1")
    main_recover = InState("main", "RECOVER")
    m.edge("LISTEN", "RUN1", TimeoutFires("T_active") & main_recover, "G3")
    m.edge("LISTEN", "READ", AtLeast("wait", f + 1), "G4")
    m.edge("READ", "INPUT1", AtLeast("wait", n - f), "G5")
    m.edge("READ", "INPUT0", Timeout("T_listen"), "G5'")
    m.edge("INPUT1", "INPUT1", OnReceipt("wait", f + 1), "G4")
    m.edge("INPUT1", "RUN0", Timeout("T2") & main_recover, "G7")
    m.edge("INPUT1", "RUN1", Timeout("T2"), "G6")
    m.edge("INPUT0", "INPUT0", OnReceipt("wait", f + 1), "G4")
    m.edge("INPUT0", "RUN0", Timeout("T2"), "G6'")
    for run in ("RUN0", "RUN1"):
        m.edge(run, "OUTPUT1", Signal("cons1"), "G8")
        m.edge(run, "OUTPUT0", Signal("cons0"), "G9")
        m.edge(run, "OUTPUT0", Timeout("T_consensus"), "abort")
    m.edge("OUTPUT0", "LISTEN", Always(), "")
    m.edge("OUTPUT1", "LISTEN", Always(), "")
    m.note("G3 fires on the expiry of T_active only (edge), T_active is reset by every resync signal")
    m.note("the G4 self-loops fire on each wait receipt while at least f+1 wait senders are buffered")
    m.note("RUN0/RUN1 start the simulated consensus with input 0/1; leaving RUN halts it")
    return m.validate()


@dataclass
class MainPulserSpec:
    """Everything needed to host one main pulser instance on a node set."""

    scope: str
    members: List[int]
    f: int
    timeouts: MainTimeouts
    routine: ConsensusRoutine
    resync_key: str
    main: MachineSpec = field(init=False)
    aux: MachineSpec = field(init=False)
    st: MachineSpec = field(init=False)

    def __post_init__(self):
        n = len(self.members)
        self.main = main_machine(n, self.f, self.timeouts)
        self.aux = aux_machine(n, self.f, self.timeouts)
        self.st = st_machine(n, self.f, self.timeouts.st)

    @property
    def pulse_key(self) -> str:
        return f"{self.scope}.main.pulse"

    @property
    def pulse_scope(self) -> str:
        return f"{self.scope}.main"

    def machines(self) -> List[MachineSpec]:
        return [self.main, self.aux, self.st]


@dataclass
class MainPulserNode:
    main: MachineInstance
    aux: MachineInstance
    st: MachineInstance
    sim: RoundSimulation


def attach_main_pulser(node: Node, spec: MainPulserSpec) -> MainPulserNode:
    sc = spec.scope
    members = spec.members
    main = MachineInstance(spec.main, node, f"{sc}.main", members=members,
                           signals={"out1": f"{sc}.aux.out1", "out0": f"{sc}.aux.out0"})
    aux = MachineInstance(spec.aux, node, f"{sc}.aux", members=members,
                          wires={"wait": f"{sc}.main.wait"},
                          signals={"resync": spec.resync_key, "cons1": f"{sc}.cons.out1",
                                   "cons0": f"{sc}.cons.out0"})
    st = MachineInstance(spec.st, node, f"{sc}.st", members=members, active=False)
    sim = RoundSimulation(node, spec.routine, st, f"{sc}.cons", members=members)
    aux.link("main", main)

    def start(x):
        return lambda inst, ctx: sim.start(x, ctx)

    def stop(inst, ctx):
        if not sim.decided:
            node.world.trace.records.append((ctx.t, node.id, "abort", f"{sc}.cons", ""))
        sim.stop()

    aux.on_enter("RUN1", start(1))
    aux.on_enter("RUN0", start(0))
    aux.on_exit("RUN1", stop)
    aux.on_exit("RUN0", stop)
    return MainPulserNode(main, aux, st, sim)


def randomize_main_pulser(pn: MainPulserNode, rng, n_global: int):
    """Arbitrary initial configuration for one node's main pulser stack."""
    pn.main.randomize(rng, n_global)
    aux_state = rng.choice(pn.aux.spec.names[:6])
    pn.aux.randomize(rng, n_global, states=[aux_state])
    if aux_state in ("RUN0", "RUN1"):
        # mid-simulation: a running pulser and a consensus instance in some round
        ctx_world = pn.sim.node.world
        node = pn.sim.node

        def boot(ctx):
            x = rng.randint(0, 1)
            pn.sim.start(x, ctx)
            pn.st.randomize(rng, n_global)
            pn.sim.k = rng.randint(0, pn.sim.routine.rounds)
        node.run_in_cascade(ctx_world.now, boot)
