"""Simulated V2X broadcast medium with synchronous rounds.

The bus is ideal: lossless, zero latency, full mesh. Each agent broadcasts at
most once per round; a round completes only when every registered agent has
sent, and deliveries are ordered by sender id, so repeated runs observe the
identical (round, sender) sequence.

Payloads cross the bus as serialized bytes. JSON is used for the encoding:
Python's float repr round-trips, so numeric payloads survive bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np


class BusProtocolError(RuntimeError):
    pass


class BusTimeout(RuntimeError):
    pass


PAYLOAD_KINDS = ("coordinate", "dual_vector", "nominal_trajectory")


@dataclass(frozen=True)
class BusMessage:
    sender: int
    round_index: int
    kind: str
    payload: bytes

    def decode(self):
        return decode_payload(self.payload)


def encode_payload(value) -> bytes:
    """Serialize dicts/lists/ndarrays of floats to bytes, exactly invertible."""

    def convert(v):
        if isinstance(v, np.ndarray):
            return {"__nd__": v.tolist(), "shape": list(v.shape)}
        if isinstance(v, dict):
            return {k: convert(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [convert(x) for x in v]
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        return v

    return json.dumps(convert(value), sort_keys=True, separators=(",", ":")).encode()


def decode_payload(data: bytes):
    def restore(v):
        if isinstance(v, dict):
            if "__nd__" in v:
                return np.array(v["__nd__"], dtype=float).reshape(v["shape"])
            return {k: restore(x) for k, x in v.items()}
        if isinstance(v, list):
            return [restore(x) for x in v]
        return v

    return restore(json.loads(data.decode()))


class SyncBus:
    """Round-synchronized broadcast bus shared by all agents of one run."""

    def __init__(self, log_sink=None):
        self._agents: list[int] = []
        self._round = 0
        self._outbox: dict[int, BusMessage] = {}
        self._log_sink = log_sink

    @property
    def round_index(self) -> int:
        return self._round

    @property
    def agents(self) -> tuple[int, ...]:
        return tuple(self._agents)

    def register(self, agent_id: int) -> None:
        if self._round != 0 or self._outbox:
            raise BusProtocolError("agents must register before the first round")
        if agent_id in self._agents:
            raise BusProtocolError(f"agent {agent_id} registered twice")
        self._agents.append(agent_id)
        self._agents.sort()

    def broadcast(self, agent_id: int, round_index: int, kind: str, payload) -> None:
        if agent_id not in self._agents:
            raise BusProtocolError(f"agent {agent_id} is not registered")
        if round_index != self._round:
            raise BusProtocolError(
                f"agent {agent_id} sent for round {round_index}, bus is at round {self._round}"
            )
        if kind not in PAYLOAD_KINDS:
            raise BusProtocolError(f"unknown payload kind {kind!r}")
        if agent_id in self._outbox:
            raise BusProtocolError(f"agent {agent_id} sent twice in round {self._round}")
        data = payload if isinstance(payload, bytes) else encode_payload(payload)
        msg = BusMessage(sender=agent_id, round_index=self._round, kind=kind, payload=data)
        self._outbox[agent_id] = msg
        if self._log_sink is not None:
            digest = hashlib.sha256(data).hexdigest()[:16]
            self._log_sink.write(
                json.dumps(
                    {"round": self._round, "sender": agent_id, "kind": kind, "digest": digest}
                )
                + "\n"
            )

    def receive_all(self, agent_id: int, round_index: int) -> list[BusMessage]:
        """All round messages from the other agents, ordered by sender id.

        The bus is synchronous and in-process, so missing messages cannot
        arrive later; an incomplete round is reported immediately with the
        missing senders listed.
        """
        if agent_id not in self._agents:
            raise BusProtocolError(f"agent {agent_id} is not registered")
        if round_index != self._round:
            raise BusProtocolError(
                f"agent {agent_id} asked for round {round_index}, bus is at round {self._round}"
            )
        missing = [a for a in self._agents if a not in self._outbox]
        if missing:
            raise BusTimeout(
                f"round {self._round} incomplete: waiting on senders {missing}"
            )
        return [self._outbox[a] for a in self._agents if a != agent_id]

    def advance_round(self) -> int:
        """Barrier: close the current round once every agent has sent."""
        missing = [a for a in self._agents if a not in self._outbox]
        if missing:
            raise BusTimeout(f"cannot advance: round {self._round} missing {missing}")
        self._outbox = {}
        self._round += 1
        return self._round
