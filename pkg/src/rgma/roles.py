"""Query classes, producer types and the capability matrix tying them."""

from __future__ import annotations

from enum import Enum


class QueryClass(str, Enum):
    CONTINUOUS = "continuous"
    LATEST = "latest"
    HISTORY = "history"


class ProducerType(str, Enum):
    STREAM = "stream"
    RESILIENT_STREAM = "resilient"
    DATABASE = "database"
    LATEST = "latest"
    CANONICAL = "canonical"


#: which producer types can answer which query class
CAPABILITIES: dict[QueryClass, frozenset[ProducerType]] = {
    QueryClass.CONTINUOUS: frozenset({ProducerType.STREAM, ProducerType.RESILIENT_STREAM}),
    QueryClass.LATEST: frozenset({ProducerType.LATEST, ProducerType.CANONICAL}),
    QueryClass.HISTORY: frozenset({ProducerType.DATABASE, ProducerType.CANONICAL}),
}

#: producer types accepting the SQL INSERT interface
INSERTABLE = frozenset(
    {ProducerType.STREAM, ProducerType.RESILIENT_STREAM, ProducerType.DATABASE,
     ProducerType.LATEST}
)


def supports(
    ptype: ProducerType,
    qclass: QueryClass,
    answers: frozenset[QueryClass] | None = None,
) -> bool:
    """Capability check; canonical producers may narrow their declared classes."""
    if ptype not in CAPABILITIES[qclass]:
        return False
    if ptype is ProducerType.CANONICAL and answers is not None:
        return qclass in answers
    return True
