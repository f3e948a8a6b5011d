"""Relational model for the SQL subset.

Identifiers are case-insensitive and canonicalized to lower case; string
literals stay case-sensitive. Condition trees reference columns through
canonical keys: the bare column name for single-table queries, or
"alias.column" for joins.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

from rgma.errors import SchemaError, TypeMismatchError


class ColumnType(str, Enum):
    INT = "INT"
    REAL = "REAL"
    STRING = "STRING"
    TIMESTAMP = "TIMESTAMP"


Value = int | float | str

NUMERIC_TYPES = frozenset({ColumnType.INT, ColumnType.REAL, ColumnType.TIMESTAMP})


def check_value(value: Value, ctype: ColumnType) -> Value:
    """Validate (and, for REAL, coerce) a python value against a column type."""
    if isinstance(value, bool):
        raise TypeMismatchError(f"boolean value not supported for {ctype.value} column")
    if ctype is ColumnType.INT:
        if isinstance(value, int):
            return value
        raise TypeMismatchError(f"expected INT value, got {value!r}")
    if ctype is ColumnType.REAL:
        if isinstance(value, (int, float)):
            return float(value)
        raise TypeMismatchError(f"expected REAL value, got {value!r}")
    if ctype is ColumnType.TIMESTAMP:
        if isinstance(value, int):
            return value
        raise TypeMismatchError(f"expected TIMESTAMP (integer ms) value, got {value!r}")
    if ctype is ColumnType.STRING:
        if isinstance(value, str):
            return value
        raise TypeMismatchError(f"expected STRING value, got {value!r}")
    raise TypeMismatchError(f"unknown column type {ctype!r}")


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType


@dataclass(frozen=True)
class TableDefinition:
    """One table's schema: columns, defining-key columns, timestamp column.

    The defining key identifies what a tuple measures; together with the
    timestamp it is close to, but deliberately not, a primary key.
    """

    name: str
    columns: tuple[Column, ...]
    defining_key: tuple[str, ...]
    timestamp_column: str

    def __post_init__(self):
        object.__setattr__(self, "name", self.name.lower())
        cols = tuple(Column(c.name.lower(), c.type) for c in self.columns)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "defining_key", tuple(k.lower() for k in self.defining_key))
        object.__setattr__(self, "timestamp_column", self.timestamp_column.lower())

        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {self.name}: duplicate column name")
        ts_cols = [c.name for c in self.columns if c.type is ColumnType.TIMESTAMP]
        if len(ts_cols) != 1:
            raise SchemaError(
                f"table {self.name}: exactly one TIMESTAMP column required, found {len(ts_cols)}"
            )
        if ts_cols[0] != self.timestamp_column:
            raise SchemaError(
                f"table {self.name}: timestamp column must be {ts_cols[0]!r}"
            )
        if not self.defining_key:
            raise SchemaError(f"table {self.name}: defining key must not be empty")
        if len(set(self.defining_key)) != len(self.defining_key):
            raise SchemaError(f"table {self.name}: duplicate defining-key column")
        for k in self.defining_key:
            if k not in names:
                raise SchemaError(f"table {self.name}: defining-key column {k!r} not declared")
            if k == self.timestamp_column:
                raise SchemaError(
                    f"table {self.name}: timestamp column cannot be part of the defining key"
                )

    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def has_column(self, name: str) -> bool:
        return name.lower() in self.column_names()

    def type_of(self, name: str) -> ColumnType:
        name = name.lower()
        for c in self.columns:
            if c.name == name:
                return c.type
        raise SchemaError(f"table {self.name}: no column {name!r}")

    def index_of(self, name: str) -> int:
        name = name.lower()
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"table {self.name}: no column {name!r}")

    def schema_hash(self) -> bytes:
        text = render_create_table(self) + " KEY " + ",".join(self.defining_key)
        return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass(frozen=True)
class ViewPredicate:
    """Conjunction of column=literal atoms a producer guarantees for its table.

    An empty atom list is the universal predicate (covers the whole table).
    """

    atoms: tuple[tuple[str, Value], ...] = ()

    def __post_init__(self):
        atoms = tuple((c.lower(), v) for c, v in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        cols = [c for c, _ in atoms]
        if len(set(cols)) != len(cols):
            raise SchemaError("view predicate: two atoms on the same column")

    @classmethod
    def universal(cls) -> "ViewPredicate":
        return cls(())

    @property
    def is_universal(self) -> bool:
        return not self.atoms

    def bindings(self) -> dict[str, Value]:
        return dict(self.atoms)


# --- condition trees -------------------------------------------------------

@dataclass(frozen=True)
class ColumnRef:
    key: str  # canonical lookup key: "col" or "alias.col"
    type: ColumnType


@dataclass(frozen=True)
class Literal:
    value: Value
    type: ColumnType


@dataclass(frozen=True)
class NowRef:
    """Reserved NOW pseudo-value, bound at evaluation time (cleanup rules)."""


@dataclass(frozen=True)
class Arith:
    left: "Operand"
    op: str  # '+' or '-'
    right: "Operand"


Operand = ColumnRef | Literal | NowRef | Arith

COMPARE_OPS = ("=", "<>", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Comparison:
    left: Operand
    op: str
    right: Operand


@dataclass(frozen=True)
class And:
    items: tuple["Condition", ...]


@dataclass(frozen=True)
class Or:
    items: tuple["Condition", ...]


@dataclass(frozen=True)
class Not:
    item: "Condition"


@dataclass(frozen=True)
class Boolean:
    value: bool


TRUE = Boolean(True)
FALSE = Boolean(False)

Condition = Comparison | And | Or | Not | Boolean


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: str

    def __post_init__(self):
        object.__setattr__(self, "name", self.name.lower())
        object.__setattr__(self, "alias", self.alias.lower())


@dataclass(frozen=True)
class Query:
    """A parsed SELECT: projection (None = *), tables, residual condition and,
    for multi-table queries, the extracted equi-join column pairs."""

    projection: tuple[str, ...] | None
    tables: tuple[TableRef, ...]
    condition: Condition | None
    join_equalities: tuple[tuple[str, str], ...] = ()

    @property
    def is_join(self) -> bool:
        return len(self.tables) > 1

    def table_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tables)

    def aliases_of(self, table: str) -> tuple[str, ...]:
        table = table.lower()
        return tuple(t.alias for t in self.tables if t.name == table)


# --- rendering -------------------------------------------------------------

def render_literal(value: Value) -> str:
    if isinstance(value, bool):
        raise TypeMismatchError("boolean literals are not part of the grammar")
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _render_operand(op: Operand) -> str:
    if isinstance(op, ColumnRef):
        return op.key
    if isinstance(op, Literal):
        return render_literal(op.value)
    if isinstance(op, NowRef):
        return "NOW"
    if isinstance(op, Arith):
        return f"{_render_operand(op.left)} {op.op} {_render_operand(op.right)}"
    raise TypeMismatchError(f"cannot render operand {op!r}")


def render_condition(cond: Condition) -> str:
    if isinstance(cond, Comparison):
        return f"{_render_operand(cond.left)} {cond.op} {_render_operand(cond.right)}"
    if isinstance(cond, And):
        return " AND ".join(
            f"({render_condition(c)})" if isinstance(c, Or) else render_condition(c)
            for c in cond.items
        )
    if isinstance(cond, Or):
        return " OR ".join(render_condition(c) for c in cond.items)
    if isinstance(cond, Not):
        return f"NOT ({render_condition(cond.item)})"
    if isinstance(cond, Boolean):
        raise TypeMismatchError("constant conditions have no SQL rendering")
    raise TypeMismatchError(f"cannot render condition {cond!r}")


def render_create_table(schema: TableDefinition) -> str:
    cols = ", ".join(f"{c.name} {c.type.value}" for c in schema.columns)
    return f"CREATE TABLE {schema.name} ({cols})"


def render_insert(schema: TableDefinition, binding: dict[str, Value]) -> str:
    names = schema.column_names()
    cols = ", ".join(names)
    vals = ", ".join(render_literal(binding[c]) for c in names)
    return f"INSERT INTO {schema.name} ({cols}) VALUES ({vals})"


def render_view(view: ViewPredicate) -> str:
    if view.is_universal:
        return ""
    atoms = " AND ".join(f"{c} = {render_literal(v)}" for c, v in view.atoms)
    return f"WHERE ({atoms})"


def render_select(query: Query) -> str:
    proj = "*" if query.projection is None else ", ".join(query.projection)
    tables = ", ".join(
        t.name if t.alias == t.name else f"{t.name} {t.alias}" for t in query.tables
    )
    parts = [f"{a} = {b}" for a, b in query.join_equalities]
    if query.condition is not None and not isinstance(query.condition, Boolean):
        rendered = render_condition(query.condition)
        if parts and isinstance(query.condition, Or):
            rendered = f"({rendered})"
        parts.append(rendered)
    where = f" WHERE {' AND '.join(parts)}" if parts else ""
    return f"SELECT {proj} FROM {tables}{where}"
