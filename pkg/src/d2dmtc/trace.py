"""Columnar event traces: device activity episodes and the messages behind them."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class Episode(enum.IntEnum):
    TRANSMIT = 0
    RECEIVE = 1
    PAGING_LISTEN = 2
    CLOCK_SYNC = 3
    CP_ESTABLISH = 4
    SLEEP = 5


class MsgKind(enum.IntEnum):
    SIB_DCI_CONFIG = 0
    DISCOVERY_ANNOUNCEMENT = 1
    DISCOVERY_RESPONSE = 2
    SECURITY_EXCHANGE = 3
    FORMATION_REPORT = 4
    PAGE = 5
    DATA_PACKET = 6
    D2D_ACK = 7
    RELAY_FORWARD = 8
    BS_ACK = 9


class EpisodeRecord(NamedTuple):
    timestamp: float
    node_id: int
    episode: Episode
    duration: float
    msg: int          # index into the message table, -1 if none
    tx_dbm: float


class Message(NamedTuple):
    kind: MsgKind
    src: int
    dst: int
    payload_bits: int
    timestamp: float


@dataclass
class EventTrace:
    node: np.ndarray
    start: np.ndarray
    duration: np.ndarray
    episode: np.ndarray
    msg: np.ndarray
    tx_dbm: np.ndarray
    msg_kind: np.ndarray
    msg_src: np.ndarray
    msg_dst: np.ndarray
    msg_bits: np.ndarray
    msg_time: np.ndarray

    def __len__(self) -> int:
        return len(self.node)

    def __iter__(self):
        for k in range(len(self.node)):
            yield self.record(k)

    def record(self, k: int) -> EpisodeRecord:
        return EpisodeRecord(float(self.start[k]), int(self.node[k]), Episode(int(self.episode[k])),
                             float(self.duration[k]), int(self.msg[k]), float(self.tx_dbm[k]))

    @property
    def n_messages(self) -> int:
        return len(self.msg_kind)

    def message(self, k: int) -> Message:
        return Message(MsgKind(int(self.msg_kind[k])), int(self.msg_src[k]), int(self.msg_dst[k]),
                       int(self.msg_bits[k]), float(self.msg_time[k]))

    def messages(self):
        return [self.message(k) for k in range(self.n_messages)]

    def for_node(self, node_id: int) -> list[EpisodeRecord]:
        return [self.record(k) for k in np.flatnonzero(self.node == node_id)]

    @classmethod
    def empty(cls) -> "EventTrace":
        return TraceBuilder().build()

    @classmethod
    def concat(cls, traces) -> "EventTrace":
        traces = list(traces)
        if not traces:
            return cls.empty()
        offs = np.cumsum([0] + [t.n_messages for t in traces[:-1]])
        msg = np.concatenate([np.where(t.msg >= 0, t.msg + o, -1) for t, o in zip(traces, offs)])
        cat = lambda name: np.concatenate([getattr(t, name) for t in traces])  # noqa: E731
        return cls(cat("node"), cat("start"), cat("duration"), cat("episode"), msg, cat("tx_dbm"),
                   cat("msg_kind"), cat("msg_src"), cat("msg_dst"), cat("msg_bits"), cat("msg_time"))

    def shifted(self, dt: float) -> "EventTrace":
        return EventTrace(self.node, self.start + dt, self.duration, self.episode, self.msg,
                          self.tx_dbm, self.msg_kind, self.msg_src, self.msg_dst, self.msg_bits,
                          self.msg_time + dt)

    def sorted(self) -> "EventTrace":
        order = np.lexsort((self.node, self.start))
        return EventTrace(self.node[order], self.start[order], self.duration[order],
                          self.episode[order], self.msg[order], self.tx_dbm[order],
                          self.msg_kind, self.msg_src, self.msg_dst, self.msg_bits, self.msg_time)

    def check_non_overlapping(self, tol: float = 1e-9) -> None:
        if len(self.node) < 2:
            return
        order = np.lexsort((self.start, self.node))
        n, s, d = self.node[order], self.start[order], self.duration[order]
        same = n[1:] == n[:-1]
        bad = same & (s[1:] < s[:-1] + d[:-1] - tol)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise ValueError(f"overlapping episodes for node {int(n[k])} at t={s[k + 1]:.6f}s")

    def write_records(self, fp) -> None:
        """Newline-delimited ``timestamp_s node episode duration_s msg_kind`` records."""
        kinds = [k.name for k in MsgKind]
        eps = [e.name for e in Episode]
        for k in np.lexsort((self.node, self.start)):
            m = int(self.msg[k])
            mk = kinds[int(self.msg_kind[m])] if m >= 0 else "-"
            fp.write(f"{self.start[k]:.6f} {int(self.node[k])} {eps[int(self.episode[k])]} "
                     f"{self.duration[k]:.6f} {mk}\n")


class TraceBuilder:
    def __init__(self):
        self.node: list[int] = []
        self.start: list[float] = []
        self.duration: list[float] = []
        self.episode: list[int] = []
        self.msg: list[int] = []
        self.tx_dbm: list[float] = []
        self.msg_kind: list[int] = []
        self.msg_src: list[int] = []
        self.msg_dst: list[int] = []
        self.msg_bits: list[int] = []
        self.msg_time: list[float] = []

    def episode_(self, node: int, start: float, duration: float, episode: Episode,
                 msg: int = -1, tx_dbm: float = 0.0) -> None:
        self.node.append(node)
        self.start.append(start)
        self.duration.append(duration)
        self.episode.append(int(episode))
        self.msg.append(msg)
        self.tx_dbm.append(tx_dbm)

    def message(self, kind: MsgKind, src: int, dst: int, bits: int, t: float) -> int:
        if bits <= 0:
            raise ValueError("message payload must be positive")
        self.msg_kind.append(int(kind))
        self.msg_src.append(src)
        self.msg_dst.append(dst)
        self.msg_bits.append(bits)
        self.msg_time.append(t)
        return len(self.msg_kind) - 1

    def build(self) -> EventTrace:
        return EventTrace(
            np.asarray(self.node, dtype=np.int64), np.asarray(self.start, dtype=float),
            np.asarray(self.duration, dtype=float), np.asarray(self.episode, dtype=np.int8),
            np.asarray(self.msg, dtype=np.int64), np.asarray(self.tx_dbm, dtype=float),
            np.asarray(self.msg_kind, dtype=np.int8), np.asarray(self.msg_src, dtype=np.int64),
            np.asarray(self.msg_dst, dtype=np.int64), np.asarray(self.msg_bits, dtype=np.int64),
            np.asarray(self.msg_time, dtype=float),
        )
