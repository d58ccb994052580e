"""Lockstep simulation of agents coordinated through a cloud node.

Agents never talk to each other.  Every three timesteps they complete one
communication cycle:

* ``UPDATE``     every agent takes a gradient step on its own state using the
                 last states and multipliers it received; the cloud takes a
                 projected ascent step on the multipliers.
* ``AGENT_SEND`` every agent sends its state to the cloud.
* ``CLOUD_SEND`` the cloud stores the received states and sends each agent
                 the other agents' states plus its current multipliers.

Messages take one timestep to arrive.  The initial handshake (state report,
symbolic differentiation, first broadcast) happens before timestep 0.
"""

from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analysis import DEFAULT_CONVENTION, ball_level, lyapunov
from .expr import Expression
from .problem import DimensionError, PrimalDualPoint, Problem
from .uzawa import DivergenceError

__all__ = [
    "Phase",
    "ProtocolError",
    "AgentToCloud",
    "CloudToAgent",
    "AgentNode",
    "CloudNode",
    "NetworkState",
    "TraceRecord",
    "init_network",
    "tick",
    "run",
    "relabel_for_privacy",
    "synchronized_points",
]


class Phase(enum.IntEnum):
    UPDATE = 0
    AGENT_SEND = 1
    CLOUD_SEND = 2


def phase_of(timestep: int) -> Phase:
    return Phase(timestep % 3)


class ProtocolError(RuntimeError):
    """Corrupted message state; indicates a simulator bug, not user error."""


@dataclass(frozen=True)
class AgentToCloud:
    sender: int
    state: float
    send_time: int
    deliver_time: int


@dataclass(frozen=True)
class CloudToAgent:
    recipient: int
    y: tuple
    mu: tuple
    # timestep at which the cloud computed ``mu`` (-1: initial value)
    mu_computed_at: int
    send_time: int
    deliver_time: int


@dataclass
class AgentNode:
    """One agent.  ``index`` is zero-based; agent ``i`` in the usual
    one-based numbering has ``index == i - 1``.

    ``last_y`` holds the other agents' states in the order given by
    ``var_labels`` (true names, or pseudonyms under privacy mode).
    """

    index: int
    own_label: str
    own_state: float
    last_y: tuple
    last_mu: tuple
    mu_computed_at: int
    objective_grad: Expression
    constraint_partials: tuple
    var_labels: tuple
    rho: float
    _df: Callable = field(repr=False, compare=False, default=None)
    _dg: tuple = field(repr=False, compare=False, default=())

    def __post_init__(self):
        args = (self.own_label,) + tuple(self.var_labels)
        self._df = self.objective_grad.compile((self.own_label,))
        self._dg = tuple(d.compile(args) for d in self.constraint_partials)

    def local_view(self) -> dict:
        """``y_bar``: the agent's best knowledge of every state, keyed by the
        labels it knows them under."""
        view = dict(zip(self.var_labels, self.last_y))
        view[self.own_label] = self.own_state
        return view

    def gradient(self) -> float:
        """``f_i'(x_i) + sum_j mu_j dg_j/dx_i(y_bar)``."""
        own = self.own_state
        s = self._df(own)
        for mu_j, dg in zip(self.last_mu, self._dg):
            s = s + mu_j * dg(own, *self.last_y)
        return s


@dataclass
class CloudNode:
    x_c: list
    mu_c: list
    mu_computed_at: int
    rho: float
    constraints: tuple
    # send_order[i][k]: index of the state sent to agent i in slot k
    send_order: tuple
    _g: tuple = field(repr=False, compare=False, default=())

    def multiplier_step(self) -> list:
        rho = self.rho
        x = self.x_c
        out = []
        for mu_j, g in zip(self.mu_c, self._g):
            t = mu_j + rho * g(*x)
            out.append(t if t > 0.0 else 0.0)
        return out


@dataclass
class NetworkState:
    agents: list
    cloud: CloudNode
    in_flight: list
    timestep: int
    problem: Problem
    privacy: bool = False
    seed: int = 0

    @property
    def phase(self) -> Phase:
        return phase_of(self.timestep)

    def snapshot(self) -> PrimalDualPoint:
        """The cloud's ``(x_c, mu_c)``."""
        return PrimalDualPoint(np.array(self.cloud.x_c, dtype=float),
                               np.array(self.cloud.mu_c, dtype=float))

    def own_states(self) -> tuple:
        return tuple(a.own_state for a in self.agents)

    def copy(self) -> "NetworkState":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class TraceRecord:
    """State at the end of ``timestep`` (after that timestep's actions)."""

    timestep: int
    phase: Phase
    x_c: tuple
    mu_c: tuple
    own_states: tuple
    V: float
    in_ball: bool


def relabel_for_privacy(p: Problem, i: int, seed: int):
    """Pseudonymize the other agents' variables for agent ``i`` (zero-based).

    Returns
    -------
    mapping : dict
        Seeded bijection ``{true name: pseudonym}`` over the other agents'
        variables; pseudonyms are ``eta1 .. eta{N-1}``.
    partials : tuple of Expression
        Agent ``i``'s constraint partials rewritten under ``mapping``.
    """
    if not 0 <= i < p.n_agents:
        raise IndexError(f"agent index {i} out of range")
    others = [v for j, v in enumerate(p.variables) if j != i]
    prefix = "_eta" if any(v.startswith("eta") for v in p.variables) else "eta"
    perm = np.random.default_rng([seed, i]).permutation(len(others))
    mapping = {v: f"{prefix}{int(k) + 1}" for v, k in zip(others, perm)}
    partials = tuple(d.rename(mapping) for d in p.partials_for_agent(i))
    return mapping, partials


def init_network(p: Problem, x0, mu0, rho: float, privacy: bool = False,
                 seed: int = 0) -> NetworkState:
    """Run the pre-loop handshake and return the network at timestep 0."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    if x0.size != p.n_agents:
        raise DimensionError(f"x0 has length {x0.size}, expected {p.n_agents}")
    if mu0.size != p.n_constraints:
        raise DimensionError(f"mu0 has length {mu0.size}, expected {p.n_constraints}")
    if np.any(mu0 < 0):
        raise ValueError("mu0 must be nonnegative")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    rho = float(rho)

    # agents report x0; the cloud differentiates g and distributes z^i
    x_c = x0.tolist()
    mu = tuple(mu0.tolist())
    agents, orders = [], []
    index = {v: j for j, v in enumerate(p.variables)}
    for i, own in enumerate(p.variables):
        if privacy:
            mapping, partials = relabel_for_privacy(p, i, seed)
            by_label = sorted(mapping.items(), key=lambda kv: int(kv[1].removeprefix("_").removeprefix("eta")))
            labels = tuple(lbl for _, lbl in by_label)
            order = tuple(index[v] for v, _ in by_label)
        else:
            partials = p.partials_for_agent(i)
            order = tuple(j for j in range(p.n_agents) if j != i)
            labels = tuple(p.variables[j] for j in order)
        orders.append(order)
        agents.append(AgentNode(
            index=i,
            own_label=own,
            own_state=x_c[i],
            last_y=tuple(x_c[j] for j in order),
            last_mu=mu,
            mu_computed_at=-1,
            objective_grad=p.objective_grads[i],
            constraint_partials=partials,
            var_labels=labels,
            rho=rho,
        ))
    cloud = CloudNode(
        x_c=list(x_c), mu_c=list(mu), mu_computed_at=-1, rho=rho,
        constraints=p.constraints, send_order=tuple(orders),
        _g=tuple(g.compile(p.variables) for g in p.constraints),
    )
    return NetworkState(agents, cloud, [], 0, p, privacy, seed)


def _deliver(net: NetworkState, k: int):
    due, pending = [], []
    for m in net.in_flight:
        if m.deliver_time == k:
            due.append(m)
        elif m.deliver_time > k:
            pending.append(m)
        else:
            raise ProtocolError(f"undelivered message {m} at timestep {k}")
    n = len(net.agents)
    phase = phase_of(k)
    to_cloud = [m for m in due if isinstance(m, AgentToCloud)]
    to_agents = [m for m in due if isinstance(m, CloudToAgent)]
    if len(to_cloud) + len(to_agents) != len(due):
        raise ProtocolError(f"unknown message kind at timestep {k}")
    expect_cloud = n if phase is Phase.CLOUD_SEND else 0
    expect_agents = n if (phase is Phase.UPDATE and k > 0) else 0
    if len(to_cloud) != expect_cloud or len(to_agents) != expect_agents:
        raise ProtocolError(
            f"timestep {k} ({phase.name}): {len(to_cloud)} agent->cloud and "
            f"{len(to_agents)} cloud->agent deliveries"
        )
    for m in to_cloud:
        net.cloud.x_c[m.sender] = m.state
    for m in to_agents:
        a = net.agents[m.recipient]
        a.last_y = m.y
        a.last_mu = m.mu
        a.mu_computed_at = m.mu_computed_at
    net.in_flight = pending


def tick(net: NetworkState) -> NetworkState:
    """Advance ``net`` by one timestep, in place, and return it.

    All reads of the network happen before any write, so the result does
    not depend on the order in which nodes are visited.
    """
    k = net.timestep
    _deliver(net, k)
    phase = phase_of(k)
    if phase is Phase.UPDATE:
        try:
            new_states = [a.own_state - a.rho * a.gradient() for a in net.agents]
            new_mu = net.cloud.multiplier_step()
        except OverflowError:
            raise DivergenceError("overflow in update", k) from None
        if not all(map(math.isfinite, new_states + new_mu)):
            raise DivergenceError("non-finite state", k)
        for a, s in zip(net.agents, new_states):
            a.own_state = s
        net.cloud.mu_c = new_mu
        net.cloud.mu_computed_at = k
    elif phase is Phase.AGENT_SEND:
        net.in_flight.extend(AgentToCloud(a.index, a.own_state, k, k + 1) for a in net.agents)
    else:
        cloud = net.cloud
        mu = tuple(cloud.mu_c)
        for a in net.agents:
            y = tuple(cloud.x_c[j] for j in cloud.send_order[a.index])
            net.in_flight.append(CloudToAgent(a.index, y, mu, cloud.mu_computed_at, k, k + 1))
    net.timestep = k + 1
    return net


def run(net: NetworkState, total_timesteps: int, trace_sink: Callable | None = None, *,
        saddle: PrimalDualPoint | None = None, epsilon: float | None = None,
        convention=DEFAULT_CONVENTION):
    """Apply :func:`tick` ``total_timesteps`` times.

    One :class:`TraceRecord` per timestep is collected and, if given, passed
    to ``trace_sink``.  ``V`` is measured against ``saddle`` (``nan`` without
    one) and ``in_ball`` tests ``B_epsilon`` under ``convention``.

    Returns
    -------
    (NetworkState, list of TraceRecord)
    """
    if total_timesteps < 0:
        raise ValueError("total_timesteps must be nonnegative")
    level = ball_level(epsilon, convention) if epsilon is not None else None
    trace = []
    for _ in range(total_timesteps):
        k = net.timestep
        tick(net)
        if saddle is not None:
            V = lyapunov(net.snapshot(), saddle)
        else:
            V = math.nan
        rec = TraceRecord(
            timestep=k,
            phase=phase_of(k),
            x_c=tuple(net.cloud.x_c),
            mu_c=tuple(net.cloud.mu_c),
            own_states=net.own_states(),
            V=V,
            in_ball=level is not None and V <= level,
        )
        trace.append(rec)
        if trace_sink is not None:
            trace_sink(rec)
    return net, trace


def synchronized_points(initial: PrimalDualPoint, trace: Sequence[TraceRecord]):
    """Cloud iterates at the start of each ``UPDATE`` phase.

    Returns ``(timesteps, points)`` with ``points[k]`` the state after ``k``
    gradient steps, synchronized at timestep ``3*k``.  ``trace`` must start at
    timestep 0.
    """
    timesteps, points = [0], [initial]
    for rec in trace:
        if rec.phase is Phase.CLOUD_SEND:
            timesteps.append(rec.timestep + 1)
            points.append(PrimalDualPoint(np.array(rec.x_c), np.array(rec.mu_c)))
    return timesteps, points
