"""Tuples, the latest-replacement rule, history/latest stores and cleanup.

A tuple's defining-key values say what is measured; its timestamp says when.
Latest stores keep one row per defining key (newest timestamp wins, equal
timestamps replaced by the latest arrival); history stores keep everything
until a cleanup or retention rule removes it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from rgma.errors import KeyMismatchError, SchemaError
from rgma.sqlcore import (
    Condition,
    Query,
    TableDefinition,
    Value,
    check_value,
    evaluate,
)
from rgma.storage import TableFile


@dataclass(frozen=True)
class Tuple:
    """One timestamped row; values are in schema column order."""

    table: str
    values: tuple[Value, ...]
    timestamp: int


@dataclass(frozen=True)
class DefiningKeyValue:
    table: str
    values: tuple[Value, ...]


def make_tuple(schema: TableDefinition, binding: Mapping[str, Value]) -> Tuple:
    values = []
    for col in schema.columns:
        if col.name not in binding:
            raise SchemaError(f"table {schema.name}: column {col.name!r} unbound")
        values.append(check_value(binding[col.name], col.type))
    extra = set(binding) - set(schema.column_names())
    if extra:
        raise SchemaError(f"table {schema.name}: unknown columns {sorted(extra)}")
    ts = values[schema.index_of(schema.timestamp_column)]
    return Tuple(schema.name, tuple(values), int(ts))


def tuple_mapping(schema: TableDefinition, t: Tuple) -> dict[str, Value]:
    return dict(zip(schema.column_names(), t.values))


def defining_key(schema: TableDefinition, t: Tuple) -> DefiningKeyValue:
    return DefiningKeyValue(
        schema.name, tuple(t.values[schema.index_of(k)] for k in schema.defining_key)
    )


def latest_merge(existing: Tuple | None, incoming: Tuple, schema: TableDefinition) -> Tuple:
    """Replacement rule: incoming wins iff its timestamp is newer or the same."""
    if existing is None:
        return incoming
    if defining_key(schema, existing) != defining_key(schema, incoming):
        raise KeyMismatchError(
            f"latest merge across different defining keys in table {schema.name}"
        )
    return incoming if incoming.timestamp >= existing.timestamp else existing


@dataclass(frozen=True)
class CleanupRule:
    """Delete rows matching a condition (NOW is bound at execution time),
    re-executed every interval_ms."""

    table: str
    where: Condition
    interval_ms: int

    def __post_init__(self):
        object.__setattr__(self, "table", self.table.lower())
        if self.interval_ms <= 0:
            raise SchemaError("cleanup interval must be positive")


@dataclass(frozen=True)
class RetentionRule:
    """Keep only the newest keep_newest rows, re-applied every interval_ms."""

    table: str
    keep_newest: int
    interval_ms: int

    def __post_init__(self):
        object.__setattr__(self, "table", self.table.lower())
        if self.interval_ms <= 0:
            raise SchemaError("retention interval must be positive")
        if self.keep_newest < 0:
            raise SchemaError("keep_newest must be non-negative")


class HistoryStore:
    """Append-only row store; rows leave only through cleanup/retention."""

    def __init__(self, schema: TableDefinition, path: str | None = None):
        self.schema = schema
        self._rows: list[Tuple] = []
        self._file: TableFile | None = None
        if path is not None:
            self._file = TableFile(path, schema.name, schema.schema_hash())
            self._rows = [
                Tuple(schema.name, tuple(vals), int(vals[schema.index_of(schema.timestamp_column)]))
                for vals in self._file.records()
            ]

    def append(self, t: Tuple):
        if t.table != self.schema.name or len(t.values) != len(self.schema.columns):
            raise SchemaError(f"tuple does not match table {self.schema.name}")
        self._rows.append(t)
        if self._file is not None:
            self._file.append(list(t.values))

    def rows(self) -> list[Tuple]:
        return list(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def delete_where(self, cond: Condition, now: int | None = None) -> int:
        keep = []
        deleted = 0
        for t in self._rows:
            if evaluate(cond, tuple_mapping(self.schema, t), now=now):
                deleted += 1
            else:
                keep.append(t)
        if deleted:
            self._rows = keep
            if self._file is not None:
                self._file.rewrite([list(t.values) for t in keep])
        return deleted

    def keep_newest(self, n: int) -> int:
        if len(self._rows) <= n:
            return 0
        # newest = highest timestamp, later arrival wins ties
        order = sorted(range(len(self._rows)), key=lambda i: (self._rows[i].timestamp, i))
        drop = set(order[: len(self._rows) - n])
        deleted = len(drop)
        self._rows = [t for i, t in enumerate(self._rows) if i not in drop]
        if self._file is not None:
            self._file.rewrite([list(t.values) for t in self._rows])
        return deleted

    def close(self):
        if self._file is not None:
            self._file.close()


class LatestStore:
    """One row per defining key, maintained by the replacement rule."""

    def __init__(self, schema: TableDefinition, path: str | None = None):
        self.schema = schema
        self._rows: dict[DefiningKeyValue, Tuple] = {}
        self._seq: dict[DefiningKeyValue, int] = {}
        self._counter = 0
        self._file: TableFile | None = None
        if path is not None:
            self._file = TableFile(path, schema.name, schema.schema_hash())
            for vals in self._file.records():
                t = Tuple(
                    schema.name, tuple(vals), int(vals[schema.index_of(schema.timestamp_column)])
                )
                self._merge(t)

    def _merge(self, t: Tuple) -> Tuple:
        key = defining_key(self.schema, t)
        winner = latest_merge(self._rows.get(key), t, self.schema)
        if winner is t:
            self._rows[key] = t
            self._counter += 1
            self._seq[key] = self._counter
        return winner

    def insert(self, t: Tuple) -> Tuple:
        if t.table != self.schema.name or len(t.values) != len(self.schema.columns):
            raise SchemaError(f"tuple does not match table {self.schema.name}")
        winner = self._merge(t)
        if winner is t and self._file is not None:
            self._file.append(list(t.values))
        return winner

    def rows(self) -> list[Tuple]:
        return list(self._rows.values())

    def __len__(self) -> int:
        return len(self._rows)

    def delete_where(self, cond: Condition, now: int | None = None) -> int:
        doomed = [
            k for k, t in self._rows.items()
            if evaluate(cond, tuple_mapping(self.schema, t), now=now)
        ]
        for k in doomed:
            del self._rows[k]
            self._seq.pop(k, None)
        if doomed and self._file is not None:
            self._file.rewrite([list(t.values) for t in self._rows.values()])
        return len(doomed)

    def keep_newest(self, n: int) -> int:
        if len(self._rows) <= n:
            return 0
        order = sorted(self._rows, key=lambda k: (self._rows[k].timestamp, self._seq[k]))
        doomed = order[: len(self._rows) - n]
        for k in doomed:
            del self._rows[k]
            self._seq.pop(k, None)
        if self._file is not None:
            self._file.rewrite([list(t.values) for t in self._rows.values()])
        return len(doomed)

    def close(self):
        if self._file is not None:
            self._file.close()


def apply_cleanup(store: HistoryStore | LatestStore, rule: CleanupRule, now: int) -> int:
    """Remove rows satisfying the rule; idempotent at a fixed now."""
    if rule.table != store.schema.name:
        raise SchemaError(f"cleanup rule targets {rule.table!r}, store holds {store.schema.name!r}")
    return store.delete_where(rule.where, now=now)


def apply_retention(store: HistoryStore | LatestStore, rule: RetentionRule) -> int:
    if rule.table != store.schema.name:
        raise SchemaError(f"retention rule targets {rule.table!r}, store holds {store.schema.name!r}")
    return store.keep_newest(rule.keep_newest)


def history_query(
    query: Query,
    tables: Mapping[str, tuple[TableDefinition, Sequence[Tuple]]],
) -> list[dict[str, Value]]:
    """All rows (joined for multi-table queries) satisfying the condition.

    Returns row mappings keyed canonically (bare column names, or alias.column
    for joins); projection is left to the caller.
    """
    for tref in query.tables:
        if tref.name not in tables:
            raise SchemaError(f"no store for table {tref.name!r}")

    if not query.is_join:
        schema, rows = tables[query.tables[0].name]
        out = []
        for t in rows:
            m = tuple_mapping(schema, t)
            if evaluate(query.condition, m):
                out.append(m)
        return out

    # nested-loop join over the FROM list
    partial: list[dict[str, Value]] = [{}]
    for tref in query.tables:
        schema, rows = tables[tref.name]
        mapped = [
            {f"{tref.alias}.{c}": v for c, v in tuple_mapping(schema, t).items()} for t in rows
        ]
        partial = [dict(p, **m) for p in partial for m in mapped]
    out = []
    for row in partial:
        if all(row[a] == row[b] for a, b in query.join_equalities):
            if evaluate(query.condition, row):
                out.append(row)
    return out
