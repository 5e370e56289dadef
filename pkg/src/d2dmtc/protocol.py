"""Discrete-event execution of D2D cluster formation and of the uplink report cycle.

Every node runs an explicit transition table keyed on ``(state, event)``; an
event with no entry aborts the run.  Episodes are booked on a per-node
``busy`` horizon so no device ever does two things at once: a transmission
starts only when both ends are free.  The BS is a node without energy
accounting and answers instantly.
"""
from __future__ import annotations

import enum
import heapq
import math
from array import array
from dataclasses import dataclass, field

import numpy as np

from .channel import BS_ID
from .energy import DAY_S, PowerModel
from .geometry import Mode
from .trace import Episode, EventTrace, MsgKind, TraceBuilder


class ProtocolError(RuntimeError):
    """Undefined transition or a broken upstream contract."""


class Origin(str, enum.Enum):
    MOBILE_ORIGINATED = "mo"
    MOBILE_TERMINATED = "mt"


class Role(str, enum.Enum):
    BS = "bs"
    RELAY = "relay"
    REMOTE = "remote"
    CELLULAR = "cellular"


class S(str, enum.Enum):
    """FSM states shared by the UE roles."""

    SLEEP = "sleep"
    AWAIT_DISCOVERY = "await_discovery"
    AWAIT_RESPONSES = "await_responses"
    AWAIT_SECURITY = "await_security"
    ASSOCIATED = "associated"
    AWAIT_ACK = "await_ack"
    AWAIT_BS_ACK = "await_bs_ack"
    READY = "ready"


class Ev(str, enum.Enum):
    WAKE = "wake"
    TIMEOUT = "timeout"
    SIB_DCI = "sib_dci"
    ANNOUNCE = "announce"
    RESPONSE = "response"
    SECURITY = "security"
    PAGE = "page"
    PAGING_OCCASION = "paging_occasion"   # BS-side: page a device now
    DATA = "data"
    D2D_ACK = "d2d_ack"
    BS_ACK = "bs_ack"


@dataclass(frozen=True)
class ProtocolParams:
    control_bits: int = 256
    aggregation: bool = True
    origin: Origin = Origin.MOBILE_ORIGINATED
    loss_prob: float = 0.0
    max_retx: int = 3
    ack_timeout_s: float = 0.02
    response_timeout_s: float = 0.5
    ue_tx_dbm: float = 23.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "origin", Origin(self.origin))
        if self.control_bits <= 0:
            raise ValueError("control_bits must be positive")
        if not 0 <= self.loss_prob < 1:
            raise ValueError("loss_prob must lie in [0, 1)")
        if self.max_retx < 0:
            raise ValueError("max_retx must be non-negative")


# --- trace buffer --------------------------------------------------------------

class _Columns:
    """Append-only episode/message store backed by typed arrays."""

    def __init__(self):
        self.node = array("q"); self.start = array("d"); self.dur = array("d")
        self.ep = array("b"); self.msg = array("q"); self.dbm = array("d")
        self.mk = array("b"); self.src = array("q"); self.dst = array("q")
        self.bits = array("q"); self.mt = array("d")

    def episode(self, node, start, dur, ep, msg=-1, dbm=0.0):
        self.node.append(node); self.start.append(start); self.dur.append(dur)
        self.ep.append(ep); self.msg.append(msg); self.dbm.append(dbm)

    def message(self, kind, src, dst, bits, t):
        if bits <= 0:
            raise ProtocolError("message payload must be positive")
        self.mk.append(kind); self.src.append(src); self.dst.append(dst)
        self.bits.append(bits); self.mt.append(t)
        return len(self.mk) - 1

    def build(self, ep_from=0, msg_from=0) -> EventTrace:
        f = lambda a, dt, k: np.frombuffer(a, dtype=dt)[k:].copy() if len(a) else np.zeros(0, dt)  # noqa: E731
        msg = f(self.msg, np.int64, ep_from)
        msg = np.where(msg >= 0, msg - msg_from, -1)
        return EventTrace(f(self.node, np.int64, ep_from), f(self.start, np.float64, ep_from),
                          f(self.dur, np.float64, ep_from), f(self.ep, np.int8, ep_from), msg,
                          f(self.dbm, np.float64, ep_from), f(self.mk, np.int8, msg_from),
                          f(self.src, np.int64, msg_from), f(self.dst, np.int64, msg_from),
                          f(self.bits, np.int64, msg_from), f(self.mt, np.float64, msg_from))


# --- nodes ---------------------------------------------------------------------

class Node:
    __slots__ = ("id", "role", "state", "config", "busy", "buffer", "targets", "pending",
                 "outcome", "attempt", "seq", "forward_queue", "ul_rate", "dl_rate", "inflight")

    def __init__(self, node_id: int, role: Role, ul_rate: float = 0.0, dl_rate: float = 0.0):
        self.id = node_id
        self.role = role
        self.state = S.SLEEP if role != Role.RELAY else S.READY
        self.config = None          # stored D2D link configuration (peer id)
        self.busy = -math.inf
        self.buffer = 0             # acknowledged remote packets awaiting forwarding
        self.targets: list[int] = []
        self.pending: set[int] = set()
        self.outcome: dict[int, bool] = {}
        self.attempt = 0
        self.seq = 0
        self.forward_queue = 0
        self.ul_rate = ul_rate
        self.dl_rate = dl_rate
        self.inflight = (0, 0)      # (forwarded remote packets, own packets) awaiting BS ack


# (role, state, event) -> handler name.  Anything else is a protocol violation.
TRANSITIONS: dict[tuple[Role, S, Ev], str] = {
    # formation, relay side
    (Role.RELAY, S.READY, Ev.SIB_DCI): "relay_configured",
    (Role.RELAY, S.AWAIT_RESPONSES, Ev.RESPONSE): "relay_response",
    (Role.RELAY, S.AWAIT_RESPONSES, Ev.SECURITY): "relay_security",
    (Role.RELAY, S.AWAIT_RESPONSES, Ev.TIMEOUT): "relay_timeout",
    (Role.RELAY, S.READY, Ev.TIMEOUT): "ignore",          # formation finished before the timer
    # formation, remote side
    (Role.REMOTE, S.SLEEP, Ev.SIB_DCI): "remote_configured",
    (Role.REMOTE, S.AWAIT_DISCOVERY, Ev.ANNOUNCE): "remote_announce",
    (Role.REMOTE, S.AWAIT_SECURITY, Ev.SECURITY): "remote_security",
    # report cycle
    (Role.BS, S.SLEEP, Ev.PAGING_OCCASION): "bs_page",
    (Role.CELLULAR, S.SLEEP, Ev.WAKE): "cellular_wake",
    (Role.CELLULAR, S.SLEEP, Ev.PAGE): "cellular_wake",
    (Role.CELLULAR, S.AWAIT_ACK, Ev.BS_ACK): "to_sleep",
    (Role.REMOTE, S.ASSOCIATED, Ev.WAKE): "remote_wake",
    (Role.REMOTE, S.ASSOCIATED, Ev.PAGE): "remote_wake",
    (Role.REMOTE, S.AWAIT_ACK, Ev.D2D_ACK): "remote_acked",
    (Role.REMOTE, S.AWAIT_ACK, Ev.TIMEOUT): "remote_timeout",
    (Role.RELAY, S.READY, Ev.WAKE): "relay_wake",
    (Role.RELAY, S.READY, Ev.PAGE): "relay_wake",
    (Role.RELAY, S.READY, Ev.DATA): "relay_data",
    (Role.RELAY, S.AWAIT_BS_ACK, Ev.DATA): "relay_data",
    (Role.RELAY, S.AWAIT_BS_ACK, Ev.BS_ACK): "relay_bs_ack",
    (Role.RELAY, S.AWAIT_BS_ACK, Ev.WAKE): "defer",         # still forwarding (no aggregation)
    (Role.RELAY, S.AWAIT_BS_ACK, Ev.PAGE): "defer",
}


@dataclass
class CycleStats:
    remote_sent: int = 0        # distinct remote packets originated
    remote_acked: int = 0
    forwarded: int = 0          # remote packets delivered to the BS through a relay
    direct: int = 0             # own packets delivered (cellular and relay)
    failed: int = 0             # remote packets given up after retransmissions
    retransmissions: int = 0
    carried_in: int = 0         # buffered at relays from the previous cycle (steady state)
    carried_out: int = 0        # still buffered at relays when the horizon ends
    cp_establishments: dict[int, int] = field(default_factory=dict)


class Simulator:
    """Event queue, node registry and the shared trace of one replication."""

    def __init__(self, start: float = 0.0, params: ProtocolParams | None = None):
        self.now = float(start)
        self.params = params or ProtocolParams()
        self._q: list = []
        self._seq = 0
        self.nodes: dict[int, Node] = {BS_ID: Node(BS_ID, Role.BS)}
        self.cols = _Columns()
        self.rng = np.random.default_rng(self.params.seed)
        self.d2d_rate: dict[tuple[int, int], float] = {}
        self.d2d_pathloss: dict[tuple[int, int], float] = {}
        self.pl_bound = math.inf
        self.stats = CycleStats()
        self.pair_outcome: dict[tuple[int, int], bool] = {}
        self.power = PowerModel()
        self.packet_bits = 2000

    # scheduling -----------------------------------------------------------
    def at(self, t: float, node_id: int, ev: Ev, data=None) -> None:
        heapq.heappush(self._q, (t, self._seq, node_id, ev, data))
        self._seq += 1

    def run(self) -> None:
        q = self._q
        while q:
            t, _, nid, ev, data = heapq.heappop(q)
            self.now = t
            self.dispatch(nid, ev, data)

    def dispatch(self, nid: int, ev: Ev, data=None) -> None:
        node = self.nodes.get(nid)
        if node is None:
            raise ProtocolError(f"event {ev.value} for unknown node {nid}")
        name = TRANSITIONS.get((node.role, node.state, ev))
        if name is None:
            raise ProtocolError(f"undefined transition: {node.role.value} node {nid} "
                                f"in state {node.state.value} got {ev.value}")
        getattr(self, "_" + name)(node, data)

    # booking --------------------------------------------------------------
    def _episode(self, node: Node, t: float, dur: float, ep: Episode) -> float:
        start = max(t, node.busy)
        self.cols.episode(node.id, start, dur, int(ep))
        node.busy = start + dur
        return node.busy

    def _send(self, src: Node, dst: Node | list, t: float, kind: MsgKind, bits: int,
              rate: float) -> float:
        """Book one transmission; returns its end time (delivery time)."""
        if not rate > 0:
            raise ProtocolError(f"{kind.name} from {src.id} over a zero-rate link")
        dsts = dst if isinstance(dst, list) else [dst]
        start = max(t, src.busy, *(d.busy for d in dsts))
        dur = bits / rate
        cols = self.cols
        m = cols.message(int(kind), src.id, dsts[0].id if len(dsts) == 1 else -2, bits, start)
        if src.role != Role.BS:
            cols.episode(src.id, start, dur, int(Episode.TRANSMIT), m, self.params.ue_tx_dbm)
            src.busy = start + dur
        for d in dsts:
            if d.role != Role.BS:
                ep = Episode.PAGING_LISTEN if kind == MsgKind.PAGE else Episode.RECEIVE
                cols.episode(d.id, start, dur, int(ep), m)
                d.busy = start + dur
        return start + dur

    def _rate(self, a: int, b: int) -> float:
        return self.d2d_rate.get((min(a, b), max(a, b)), 0.0)

    def _bs_uplink(self, node: Node, t: float, kind: MsgKind, bits: int, cp: bool = True,
                   sync: bool = True) -> None:
        """Wake-up chain of a cellular uplink, ending with the BS acknowledgement."""
        pm = self.power
        if sync:
            t = self._episode(node, t, pm.clock_s, Episode.CLOCK_SYNC)
        if cp:
            t = self._episode(node, t, pm.cp_s, Episode.CP_ESTABLISH)
            self.stats.cp_establishments[node.id] = self.stats.cp_establishments.get(node.id, 0) + 1
        bs = self.nodes[BS_ID]
        t = self._send(node, bs, t, kind, bits, node.ul_rate)
        # the BS answers as soon as the uplink is decoded
        t = self._send(bs, node, t, MsgKind.BS_ACK, self.params.control_bits, node.dl_rate)
        self.at(t, node.id, Ev.BS_ACK)

    # formation handlers ------------------------------------------------------
    def _relay_configured(self, node: Node, _):
        targets = [r for r in node.targets if self.nodes[r].state == S.AWAIT_DISCOVERY]
        for r in node.targets:
            if r not in targets:
                node.outcome[r] = False
        node.pending = set(targets)
        node.state = S.AWAIT_RESPONSES
        reach = [self.nodes[r] for r in targets if self._rate(node.id, r) > 0]
        t = self.now
        if reach:
            rate = min(self._rate(node.id, n.id) for n in reach)
            t = self._send(node, reach, t, MsgKind.DISCOVERY_ANNOUNCEMENT,
                           self.params.control_bits + 32 * (len(targets) + 1), rate)
            for n in reach:
                self.at(t, n.id, Ev.ANNOUNCE, node.id)
        if node.pending:
            self.at(t + self.params.response_timeout_s, node.id, Ev.TIMEOUT)
        else:
            self._finish_formation(node)

    def _remote_configured(self, node: Node, relay_id):
        node.config = relay_id
        node.state = S.AWAIT_DISCOVERY

    def _remote_announce(self, node: Node, relay_id):
        if relay_id != node.config:
            raise ProtocolError(f"remote {node.id} heard unexpected relay {relay_id}")
        pl = self.d2d_pathloss[(min(node.id, relay_id), max(node.id, relay_id))]
        accept = pl <= self.pl_bound
        relay = self.nodes[relay_id]
        t = self._send(node, relay, self.now, MsgKind.DISCOVERY_RESPONSE, self.params.control_bits,
                       self._rate(node.id, relay_id))
        self.at(t, relay_id, Ev.RESPONSE, (node.id, accept))
        if accept:
            node.state = S.AWAIT_SECURITY
        else:
            node.config = None
            node.state = S.SLEEP

    def _relay_response(self, node: Node, data):
        rid, accept = data
        if rid not in node.pending:
            raise ProtocolError(f"relay {node.id}: response from non-target {rid}")
        if not accept:
            node.pending.discard(rid)
            node.outcome[rid] = False
            if not node.pending:
                self._finish_formation(node)
            return
        remote = self.nodes[rid]
        t = self._send(node, remote, self.now, MsgKind.SECURITY_EXCHANGE, self.params.control_bits,
                       self._rate(node.id, rid))
        self.at(t, rid, Ev.SECURITY, node.id)

    def _remote_security(self, node: Node, relay_id):
        relay = self.nodes[relay_id]
        t = self._send(node, relay, self.now, MsgKind.SECURITY_EXCHANGE, self.params.control_bits,
                       self._rate(node.id, relay_id))
        node.state = S.ASSOCIATED
        self.at(t, relay_id, Ev.SECURITY, node.id)

    def _relay_security(self, node: Node, rid):
        if rid not in node.pending:
            raise ProtocolError(f"relay {node.id}: security from non-target {rid}")
        node.pending.discard(rid)
        node.outcome[rid] = True
        if not node.pending:
            self._finish_formation(node)

    def _relay_timeout(self, node: Node, _):
        for rid in list(node.pending):
            node.outcome[rid] = False
            n = self.nodes[rid]
            if n.state == S.AWAIT_DISCOVERY:
                n.state = S.SLEEP
                n.config = None
        node.pending.clear()
        self._finish_formation(node)

    def _finish_formation(self, node: Node):
        if node.state != S.AWAIT_RESPONSES:
            return
        # piggybacked on the relay's next uplink: no separate CP set-up
        bits = self.params.control_bits + 32 * max(1, len(node.outcome))
        self._send(node, self.nodes[BS_ID], self.now, MsgKind.FORMATION_REPORT, bits, node.ul_rate)
        for rid, ok in node.outcome.items():
            self.pair_outcome[(rid, node.id)] = ok
        node.state = S.READY

    # report-cycle handlers ------------------------------------------------------
    def _cellular_wake(self, node: Node, _):
        node.state = S.AWAIT_ACK
        self._bs_uplink(node, self.now, MsgKind.DATA_PACKET, self.packet_bits)

    def _to_sleep(self, node: Node, _):
        self.stats.direct += 1
        node.state = S.SLEEP

    def _remote_wake(self, node: Node, _):
        pm = self.power
        t = self._episode(node, self.now, pm.clock_s, Episode.CLOCK_SYNC)
        # random access and D2D connection set-up, priced as one CP episode
        t = self._episode(node, t, pm.cp_s, Episode.CP_ESTABLISH)
        node.state = S.AWAIT_ACK
        node.attempt = 0
        node.seq += 1
        self.stats.remote_sent += 1
        self._remote_tx(node, t)

    def _remote_tx(self, node: Node, t: float):
        relay = self.nodes[node.config]
        rate = self._rate(node.id, relay.id)
        t = self._send(node, relay, t, MsgKind.DATA_PACKET, self.packet_bits, rate)
        lost = self.params.loss_prob > 0 and self.rng.random() < self.params.loss_prob
        if lost:
            self.at(t + self.params.ack_timeout_s, node.id, Ev.TIMEOUT, node.seq)
        else:
            self.at(t, relay.id, Ev.DATA, (node.id, node.seq))

    def _remote_timeout(self, node: Node, seq):
        if seq != node.seq:
            return
        if node.attempt >= self.params.max_retx:
            self.stats.failed += 1
            node.state = S.ASSOCIATED
            return
        node.attempt += 1
        self.stats.retransmissions += 1
        self._remote_tx(node, self.now)

    def _relay_data(self, node: Node, data):
        rid, seq = data
        remote = self.nodes[rid]
        t = self._send(node, remote, self.now, MsgKind.D2D_ACK, self.params.control_bits,
                       self._rate(node.id, rid))
        self.at(t, rid, Ev.D2D_ACK, seq)
        if self.params.aggregation:
            node.buffer += 1
        else:
            node.forward_queue += 1
            if node.state == S.READY:
                self._relay_forward(node, t)

    def _relay_forward(self, node: Node, t: float):
        n = node.forward_queue
        node.forward_queue = 0
        node.state = S.AWAIT_BS_ACK
        node.inflight = (n, 0)
        self._bs_uplink(node, t, MsgKind.RELAY_FORWARD, n * self.packet_bits, sync=False)

    def _remote_acked(self, node: Node, seq):
        if seq != node.seq:
            raise ProtocolError(f"remote {node.id}: stale acknowledgement")
        self.stats.remote_acked += 1
        node.seq += 1            # invalidates any pending timeout
        node.state = S.ASSOCIATED

    def _relay_wake(self, node: Node, _):
        n = node.buffer if self.params.aggregation else 0
        node.buffer -= n
        node.state = S.AWAIT_BS_ACK
        node.inflight = (n, 1)
        kind = MsgKind.RELAY_FORWARD if n else MsgKind.DATA_PACKET
        self._bs_uplink(node, self.now, kind, (n + 1) * self.packet_bits)

    def _relay_bs_ack(self, node: Node, _):
        self.stats.forwarded += node.inflight[0]
        self.stats.direct += node.inflight[1]
        node.inflight = (0, 0)
        node.state = S.READY
        if node.forward_queue:
            self._relay_forward(node, self.now)

    def _ignore(self, node: Node, _):
        pass

    def _defer(self, node: Node, ev_data):
        self.at(max(node.busy, self.now), node.id, Ev.WAKE)

    def _bs_page(self, node: Node, target: int):
        self.page(target, self.now)

    def page(self, node_id: int, t: float) -> None:
        """BS pages a device; the device listens for one paging occasion."""
        node = self.nodes[node_id]
        start = max(t, node.busy)
        m = self.cols.message(int(MsgKind.PAGE), BS_ID, node_id, self.params.control_bits, start)
        self.cols.episode(node_id, start, self.power.paging_s, int(Episode.PAGING_LISTEN), m)
        node.busy = start + self.power.paging_s
        self.at(node.busy, node_id, Ev.PAGE)

    # helpers ----------------------------------------------------------------
    def add_node(self, node_id: int, role: Role, ul_rate: float, dl_rate: float) -> Node:
        node = self.nodes.get(node_id)
        if node is None:
            node = self.nodes[node_id] = Node(node_id, role, ul_rate, dl_rate)
        return node

    def mark(self) -> tuple[int, int]:
        return len(self.cols.node), len(self.cols.mk)

    def trace_since(self, mark: tuple[int, int]) -> EventTrace:
        return self.cols.build(*mark)


def _as_sim(clock, params) -> Simulator:
    if isinstance(clock, Simulator):
        return clock
    return Simulator(0.0 if clock is None else float(clock), params)


def _field(a, name):
    return a[name] if isinstance(a, dict) else getattr(a, name)


def run_formation(assignments, d2d_links, policy, clock=None, *, cellular=None,
                  params: ProtocolParams | None = None):
    """Run the cluster-formation signaling for every Remote/Relay pairing.

    ``assignments`` maps device id -> assignment (anything with ``mode`` and
    ``paired_relay``); ``d2d_links`` maps (remote, relay) -> RadioLink as
    seen on the air; ``cellular`` maps device id -> (ul_rate, dl_rate).
    Returns the trace of this run and {(remote, relay): "Established" |
    "Rejected"}.
    """
    sim = _as_sim(clock, params)
    mark = sim.mark()
    sim.pl_bound = policy.d2d_pathloss_max
    cellular = cellular or {}
    groups: dict[int, list[int]] = {}
    for dev_id in sorted(assignments):
        a = assignments[dev_id]
        if _field(a, "mode") == Mode.REMOTE:
            groups.setdefault(int(_field(a, "paired_relay")), []).append(int(dev_id))
    bs = sim.nodes[BS_ID]
    t0 = sim.now
    for relay_id, remotes in sorted(groups.items()):
        ul, dl = cellular.get(relay_id, (1e5, 1e6))
        relay = sim.add_node(relay_id, Role.RELAY, ul, dl)
        relay.state = S.READY
        relay.targets = list(remotes)
        relay.outcome = {}
        for rid in remotes:
            lk = d2d_links[(rid, relay_id)]
            key = (min(rid, relay_id), max(rid, relay_id))
            sim.d2d_rate[key] = lk.rate_bps
            sim.d2d_pathloss[key] = lk.pathloss_db
            rul, rdl = cellular.get(rid, (0.0, 1e6))
            node = sim.add_node(rid, Role.REMOTE, rul, rdl)
            node.role = Role.REMOTE
            node.state = S.SLEEP
            node.config = None
            if rdl > 0:
                t = sim._send(bs, node, t0, MsgKind.SIB_DCI_CONFIG, sim.params.control_bits, rdl)
                sim.at(t, rid, Ev.SIB_DCI, relay_id)
            else:
                # out of BS downlink: configured by the relay's announcement (carries target ids)
                node.config, node.state = relay_id, S.AWAIT_DISCOVERY
        t = sim._send(bs, relay, t0, MsgKind.SIB_DCI_CONFIG, sim.params.control_bits, relay.dl_rate)
        # the relay starts discovery once the whole group has been configured
        t_go = max([t] + [sim.nodes[r].busy for r in remotes])
        sim.at(t_go, relay_id, Ev.SIB_DCI)
    sim.run()
    outcomes = {pair: ("Established" if ok else "Rejected") for pair, ok in sim.pair_outcome.items()
                if pair[0] in assignments}
    return sim.trace_since(mark), outcomes


def report_times(ids, reports_per_day: int, horizon_s: float, seed: int,
                 start: float = 0.0) -> list[tuple[float, int]]:
    """Per-device report instants: seeded phase in the first period, then periodic."""
    ids = np.sort(np.asarray(list(ids), dtype=np.int64))
    if reports_per_day <= 0 or len(ids) == 0:
        return []
    period = DAY_S / reports_per_day
    rng = np.random.default_rng(seed)
    phase = rng.random(len(ids)) * period
    n = int(math.ceil(horizon_s / period - 1e-12))
    t = start + phase[:, None] + period * np.arange(n)[None, :]
    keep = t < start + horizon_s
    nid = np.broadcast_to(ids[:, None], t.shape)
    return list(zip(t[keep].tolist(), nid[keep].tolist()))


def run_report_cycle(assignments, cellular, d2d_links, clock=None, *,
                     origin: Origin | str = Origin.MOBILE_ORIGINATED,
                     reports_per_day: int = 24, packet_bits: int = 2000,
                     horizon_s: float = DAY_S, params: ProtocolParams | None = None,
                     power: PowerModel | None = None, start: float | None = None):
    """Simulate uplink reports of every served device over ``horizon_s``.

    ``cellular`` maps device id -> (ul_rate_bps, dl_rate_bps); ``d2d_links``
    maps (remote, relay) -> RadioLink.  Returns (trace, CycleStats).

    With aggregation the cycle is treated as periodic: packets a relay
    receives after its last own report are forwarded with its first report
    of the next cycle, so each relay starts with that many buffered packets.
    """
    sim = _as_sim(clock, params)
    sim.packet_bits = packet_bits
    if power is not None:
        sim.power = power
    origin = Origin(origin)
    mark = sim.mark()
    sim.stats = CycleStats()
    start = sim.now if start is None else float(start)
    served = []
    for dev_id in sorted(assignments):
        a = assignments[dev_id]
        mode = _field(a, "mode")
        if mode == Mode.UNREACHABLE:
            continue
        ul, dl = cellular[dev_id]
        if mode == Mode.REMOTE:
            relay_id = int(_field(a, "paired_relay"))
            lk = d2d_links[(dev_id, relay_id)]
            if not lk.rate_bps > 0:
                raise ProtocolError(f"remote {dev_id} paired over a zero-rate D2D link")
            sim.d2d_rate[(min(dev_id, relay_id), max(dev_id, relay_id))] = lk.rate_bps
            node = sim.add_node(dev_id, Role.REMOTE, ul, dl)
            if node.state not in (S.ASSOCIATED, S.SLEEP) or node.config not in (None, relay_id):
                raise ProtocolError(f"remote {dev_id} not associated with relay {relay_id}")
            node.role, node.config, node.state = Role.REMOTE, relay_id, S.ASSOCIATED
        elif mode == Mode.RELAY:
            node = sim.add_node(dev_id, Role.RELAY, ul, dl)
            node.role, node.state = Role.RELAY, S.READY
        else:
            node = sim.add_node(dev_id, Role.CELLULAR, ul, dl)
            node.role, node.state = Role.CELLULAR, S.SLEEP
        node.ul_rate, node.dl_rate = ul, dl
        if node.role != Role.REMOTE and not ul > 0:
            raise ProtocolError(f"device {dev_id} in mode {mode} has no cellular rate")
        served.append(dev_id)

    times = report_times(served, reports_per_day, horizon_s, sim.params.seed + 1, start)
    if sim.params.aggregation:
        _preload_relays(sim, times)
    for t, nid in times:
        if origin == Origin.MOBILE_TERMINATED:
            n = sim.nodes[nid]
            # remotes outside BS downlink coverage are paged through their relay
            if not n.dl_rate > 0 and n.role != Role.REMOTE:
                raise ProtocolError(f"device {nid} cannot be paged")
            # paged in time order so busy intervals are booked causally
            sim.at(t, BS_ID, Ev.PAGING_OCCASION, nid)
        else:
            sim.at(t, nid, Ev.WAKE)
    sim.run()
    for nid in served:
        node = sim.nodes[nid]
        if node.role == Role.RELAY:
            sim.stats.carried_out += node.buffer
    return sim.trace_since(mark), sim.stats


def _preload_relays(sim: Simulator, times) -> None:
    last: dict[int, float] = {}
    for t, nid in times:
        if sim.nodes[nid].role == Role.RELAY:
            last[nid] = max(t, last.get(nid, -math.inf))
    for t, nid in times:
        node = sim.nodes[nid]
        if node.role == Role.REMOTE and t > last.get(node.config, math.inf):
            sim.nodes[node.config].buffer += 1
            sim.stats.carried_in += 1


def cellular_reference_trace(device_ids, ul_rate, dl_rate, *, reports_per_day: int = 24,
                             packet_bits: int = 2000, horizon_s: float = DAY_S,
                             control_bits: int = 256, tx_dbm: float = 23.0,
                             power: PowerModel | None = None) -> EventTrace:
    """Hypothetical all-cellular trace: every report runs sync, CP, uplink, BS ack.

    Built in closed form (evenly spaced reports) for pricing projected
    cellular energy.  Devices with zero uplink rate get no episodes.
    """
    pm = power or PowerModel()
    ids = np.asarray(device_ids, dtype=np.int64)
    ul = np.asarray(ul_rate, dtype=float)
    dl = np.asarray(dl_rate, dtype=float)
    ok = ul > 0
    ids, ul, dl = ids[ok], ul[ok], dl[ok]
    n_rep = int(math.floor(reports_per_day * horizon_s / DAY_S + 1e-9))
    if n_rep == 0 or len(ids) == 0:
        return EventTrace.empty()
    if np.any(dl <= 0):
        raise ProtocolError("downlink rate must be positive for cellular devices")
    period = horizon_s / n_rep
    t0 = np.arange(n_rep) * period
    tx = packet_bits / ul
    ack = control_bits / dl
    nd = len(ids)
    # per report: CLOCK, CP, TX, RX
    durs = np.stack([np.full(nd, pm.clock_s), np.full(nd, pm.cp_s), tx, ack], axis=1)
    offs = np.concatenate([np.zeros((nd, 1)), np.cumsum(durs, axis=1)[:, :-1]], axis=1)
    start = t0[None, :, None] + offs[:, None, :]
    dur = np.broadcast_to(durs[:, None, :], start.shape)
    ep = np.broadcast_to(np.array([Episode.CLOCK_SYNC, Episode.CP_ESTABLISH, Episode.TRANSMIT,
                                   Episode.RECEIVE], dtype=np.int8), start.shape)
    node = np.broadcast_to(ids[:, None, None], start.shape)
    dbm = np.where(ep == Episode.TRANSMIT, tx_dbm, 0.0)
    n = start.size
    return EventTrace(node.reshape(n).copy(), start.reshape(n), dur.reshape(n).copy(),
                      ep.reshape(n).copy(), np.full(n, -1, dtype=np.int64), dbm.reshape(n),
                      np.zeros(0, np.int8), np.zeros(0, np.int64), np.zeros(0, np.int64),
                      np.zeros(0, np.int64), np.zeros(0))


__all__ = [
    "Origin", "ProtocolError", "ProtocolParams", "Role", "Simulator", "CycleStats",
    "TRANSITIONS", "run_formation", "run_report_cycle", "report_times",
    "cellular_reference_trace", "TraceBuilder",
]
