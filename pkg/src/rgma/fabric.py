"""In-process fabric: wires mediator sessions to producer instances and the
registry without sockets. Used by unit tests and the simulated-clock harness;
deliveries are synchronous, so seeded runs are deterministic."""

from __future__ import annotations

from dataclasses import dataclass

from rgma.errors import ConnectionClosedError, UnknownComponentError
from rgma.mediator import ConsumerSession, PlanTarget
from rgma.producers import ProducerInstance, Subscription
from rgma.registry import Registry
from rgma.roles import QueryClass
from rgma.sqlcore import Query


@dataclass
class LocalSubscriptionHandle:
    fabric: "LocalFabric"
    component_id: str
    producer: ProducerInstance
    sub: Subscription

    @property
    def alive(self) -> bool:
        return not self.sub.closed and self.fabric.reachable(self.component_id)

    def close(self):
        self.producer.unsubscribe(self.sub.sub_id)


class LocalFabric:
    def __init__(self, registry: Registry | None = None):
        self.registry = registry
        self._registries: dict[str, Registry] = {}
        self._producers: dict[str, ProducerInstance] = {}
        self._down: set[str] = set()
        self._sessions: dict[str, ConsumerSession] = {}
        if registry is not None:
            registry.notifier = self._dispatch_notification
            self._registries[registry.registry_id] = registry

    def attach_registry(self, registry: Registry):
        """Additional replicas answer their own metadata queries here."""
        self._registries[registry.registry_id] = registry

    # --- component management ----------------------------------------------

    def attach(self, producer: ProducerInstance, register: bool = True,
               termination_interval_ms: int = 30_000):
        """Make a producer reachable; optionally register its declarations."""
        self._producers[producer.component_id] = producer
        self._down.discard(producer.component_id)
        if register and self.registry is not None:
            for table in producer.tables():
                self.registry.register_producer(
                    component_id=producer.component_id,
                    producer_type=producer.producer_type,
                    table=table,
                    view=producer.view_for(table),
                    termination_interval_ms=termination_interval_ms,
                    answers=producer.answers,
                )

    def kill(self, component_id: str):
        """Simulate a crash: unreachable, all its subscriptions die."""
        self._down.add(component_id)
        producer = self._producers.get(component_id)
        if producer is not None:
            for sub in list(producer._subscriptions.values()):
                sub.closed = True
            producer._subscriptions.clear()

    def reachable(self, component_id: str) -> bool:
        return component_id in self._producers and component_id not in self._down

    def producer(self, component_id: str) -> ProducerInstance:
        if not self.reachable(component_id):
            raise ConnectionClosedError(f"producer {component_id!r} is unreachable")
        return self._producers[component_id]

    # --- mediator-facing surface ----------------------------------------------

    def one_shot(self, target: PlanTarget, fetch_query: Query, qclass: QueryClass) -> list[dict]:
        cid = target.component_id
        if cid.endswith(".meta"):
            registry = self._registries.get(cid[: -len(".meta")])
            if registry is None:
                raise ConnectionClosedError(f"registry for {cid!r} is not reachable here")
            return registry.answer_meta_query(fetch_query)
        return self.producer(cid).answer_query(fetch_query, qclass)

    def subscribe(self, target: PlanTarget, fetch_query: Query, deliver) -> LocalSubscriptionHandle:
        producer = self.producer(target.component_id)
        sub = producer.subscribe(fetch_query, sink=deliver)
        return LocalSubscriptionHandle(self, target.component_id, producer, sub)

    # --- notifications -----------------------------------------------------------

    def register_session(self, session: ConsumerSession):
        self._sessions[session.component_id] = session

    def drop_session(self, session: ConsumerSession):
        self._sessions.pop(session.component_id, None)

    def _dispatch_notification(self, consumer_entry, producer_entry):
        session = self._sessions.get(consumer_entry.component_id)
        if session is None:
            raise UnknownComponentError(
                f"no live session for consumer {consumer_entry.component_id!r}"
            )
        session.on_new_producer(producer_entry)
