"""Condition evaluation and the routing-relevance test.

relevant() decides whether a producer view can possibly overlap a query
condition. It substitutes the view's equality bindings, simplifies, and
runs a satisfiability check (equality propagation plus per-column interval
reasoning over a DNF expansion). Anything the check cannot decide is
reported relevant: exclusion must be sound, inclusion may be conservative.
"""

from __future__ import annotations

from typing import Mapping

from rgma.errors import SchemaError, TypeMismatchError
from rgma.sqlcore.model import (
    And,
    Arith,
    Boolean,
    ColumnRef,
    ColumnType,
    Comparison,
    Condition,
    FALSE,
    Literal,
    Not,
    NowRef,
    Operand,
    Or,
    Query,
    TableDefinition,
    TRUE,
    Value,
    ViewPredicate,
    check_value,
)

_NEGATE = {"=": "<>", "<>": "=", "<": ">=", "<=": ">", ">": "<=", ">=": "<"}
_FLIP = {"=": "=", "<>": "<>", "<": ">", "<=": ">=", ">": "<", ">=": "<="}

_DNF_CAP = 512


# --- evaluation ------------------------------------------------------------

def _eval_operand(op: Operand, row: Mapping[str, Value], now: int | None) -> Value:
    if isinstance(op, Literal):
        return op.value
    if isinstance(op, ColumnRef):
        try:
            return row[op.key]
        except KeyError:
            raise TypeMismatchError(f"column {op.key!r} not bound in row") from None
    if isinstance(op, NowRef):
        if now is None:
            raise TypeMismatchError("condition references NOW but no current time was supplied")
        return now
    if isinstance(op, Arith):
        left = _eval_operand(op.left, row, now)
        right = _eval_operand(op.right, row, now)
        if not isinstance(left, (int, float)) or not isinstance(right, (int, float)):
            raise TypeMismatchError("arithmetic requires numeric operands")
        return left + right if op.op == "+" else left - right
    raise TypeMismatchError(f"cannot evaluate operand {op!r}")


def _compare(left: Value, op: str, right: Value) -> bool:
    if isinstance(left, str) != isinstance(right, str):
        raise TypeMismatchError("cannot compare string with numeric value")
    if op == "=":
        return left == right
    if op == "<>":
        return left != right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise TypeMismatchError(f"unknown comparison operator {op!r}")


def evaluate(cond: Condition | None, row: Mapping[str, Value], now: int | None = None) -> bool:
    """Standard boolean semantics; an absent condition is universally true."""
    if cond is None:
        return True
    if isinstance(cond, Boolean):
        return cond.value
    if isinstance(cond, Comparison):
        return _compare(
            _eval_operand(cond.left, row, now), cond.op, _eval_operand(cond.right, row, now)
        )
    if isinstance(cond, And):
        return all(evaluate(c, row, now) for c in cond.items)
    if isinstance(cond, Or):
        return any(evaluate(c, row, now) for c in cond.items)
    if isinstance(cond, Not):
        return not evaluate(cond.item, row, now)
    raise TypeMismatchError(f"cannot evaluate condition {cond!r}")


# --- substitution and simplification ---------------------------------------

def _subst_operand(op: Operand, bindings: Mapping[str, Value]) -> Operand:
    if isinstance(op, ColumnRef) and op.key in bindings:
        return Literal(check_value(bindings[op.key], op.type), op.type)
    if isinstance(op, Arith):
        return Arith(_subst_operand(op.left, bindings), op.op, _subst_operand(op.right, bindings))
    return op


def substitute(cond: Condition, bindings: Mapping[str, Value]) -> Condition:
    """Replace bound column references with their literal values."""
    if isinstance(cond, Comparison):
        return Comparison(
            _subst_operand(cond.left, bindings), cond.op, _subst_operand(cond.right, bindings)
        )
    if isinstance(cond, And):
        return And(tuple(substitute(c, bindings) for c in cond.items))
    if isinstance(cond, Or):
        return Or(tuple(substitute(c, bindings) for c in cond.items))
    if isinstance(cond, Not):
        return Not(substitute(cond.item, bindings))
    return cond


def _fold_operand(op: Operand) -> Operand:
    if isinstance(op, Arith):
        left = _fold_operand(op.left)
        right = _fold_operand(op.right)
        if isinstance(left, Literal) and isinstance(right, Literal):
            value = left.value + right.value if op.op == "+" else left.value - right.value  # type: ignore[operator]
            ctype = (
                ColumnType.REAL
                if ColumnType.REAL in (left.type, right.type)
                else ColumnType.INT
            )
            return Literal(value, ctype)
        return Arith(left, op.op, right)
    return op


def simplify(cond: Condition) -> Condition:
    """Constant-fold literal comparisons and collapse boolean structure."""
    if isinstance(cond, Comparison):
        left = _fold_operand(cond.left)
        right = _fold_operand(cond.right)
        if isinstance(left, Literal) and isinstance(right, Literal):
            return TRUE if _compare(left.value, cond.op, right.value) else FALSE
        return Comparison(left, cond.op, right)
    if isinstance(cond, And):
        items: list[Condition] = []
        for item in cond.items:
            s = simplify(item)
            if isinstance(s, Boolean):
                if not s.value:
                    return FALSE
                continue
            items.extend(s.items if isinstance(s, And) else (s,))
        if not items:
            return TRUE
        return items[0] if len(items) == 1 else And(tuple(items))
    if isinstance(cond, Or):
        items = []
        for item in cond.items:
            s = simplify(item)
            if isinstance(s, Boolean):
                if s.value:
                    return TRUE
                continue
            items.extend(s.items if isinstance(s, Or) else (s,))
        if not items:
            return FALSE
        return items[0] if len(items) == 1 else Or(tuple(items))
    if isinstance(cond, Not):
        inner = simplify(cond.item)
        if isinstance(inner, Boolean):
            return FALSE if inner.value else TRUE
        if isinstance(inner, Not):
            return inner.item
        return Not(inner)
    return cond


# --- satisfiability --------------------------------------------------------

def _to_nnf(cond: Condition, negated: bool = False) -> Condition:
    if isinstance(cond, Comparison):
        return Comparison(cond.left, _NEGATE[cond.op], cond.right) if negated else cond
    if isinstance(cond, Boolean):
        return Boolean(cond.value != negated)
    if isinstance(cond, Not):
        return _to_nnf(cond.item, not negated)
    if isinstance(cond, And):
        items = tuple(_to_nnf(c, negated) for c in cond.items)
        return Or(items) if negated else And(items)
    if isinstance(cond, Or):
        items = tuple(_to_nnf(c, negated) for c in cond.items)
        return And(items) if negated else Or(items)
    raise TypeMismatchError(f"cannot normalize condition {cond!r}")


def _dnf(cond: Condition) -> list[list[Comparison]] | None:
    """Disjunctive normal form as atom lists; None when the expansion blows the cap."""
    if isinstance(cond, Comparison):
        return [[cond]]
    if isinstance(cond, Boolean):
        return [[]] if cond.value else []
    if isinstance(cond, Or):
        out: list[list[Comparison]] = []
        for item in cond.items:
            sub = _dnf(item)
            if sub is None:
                return None
            out.extend(sub)
            if len(out) > _DNF_CAP:
                return None
        return out
    if isinstance(cond, And):
        acc: list[list[Comparison]] = [[]]
        for item in cond.items:
            sub = _dnf(item)
            if sub is None:
                return None
            acc = [a + b for a in acc for b in sub]
            if len(acc) > _DNF_CAP:
                return None
        return acc
    raise TypeMismatchError(f"unexpected node in NNF {cond!r}")


class _ColumnRange:
    __slots__ = ("eq", "neq", "lo", "hi", "conflict")

    def __init__(self):
        self.eq: Value | None = None
        self.neq: set[Value] = set()
        self.lo: tuple[Value, bool] | None = None  # (bound, inclusive)
        self.hi: tuple[Value, bool] | None = None
        self.conflict = False

    def apply(self, op: str, value: Value):
        if op == "=":
            if self.eq is not None and self.eq != value:
                self.conflict = True
            self.eq = value
        elif op == "<>":
            self.neq.add(value)
        elif op in ("<", "<="):
            bound = (value, op == "<=")
            if self.hi is None or bound[0] < self.hi[0] or (
                bound[0] == self.hi[0] and not bound[1]
            ):
                self.hi = bound
        elif op in (">", ">="):
            bound = (value, op == ">=")
            if self.lo is None or bound[0] > self.lo[0] or (
                bound[0] == self.lo[0] and not bound[1]
            ):
                self.lo = bound

    def feasible(self, ctype: ColumnType) -> bool:
        if self.conflict:
            return False
        if self.eq is not None:
            v = self.eq
            if v in self.neq:
                return False
            if self.lo is not None and (v < self.lo[0] or (v == self.lo[0] and not self.lo[1])):
                return False
            if self.hi is not None and (v > self.hi[0] or (v == self.hi[0] and not self.hi[1])):
                return False
            return True
        if ctype in (ColumnType.INT, ColumnType.TIMESTAMP):
            lo = None if self.lo is None else (self.lo[0] if self.lo[1] else self.lo[0] + 1)
            hi = None if self.hi is None else (self.hi[0] if self.hi[1] else self.hi[0] - 1)
            if lo is not None and hi is not None:
                if lo > hi:
                    return False
                size = hi - lo + 1
                if size <= 4096:
                    excluded = sum(1 for n in self.neq if isinstance(n, int) and lo <= n <= hi)
                    return excluded < size
            return True
        if self.lo is not None and self.hi is not None:
            if self.lo[0] > self.hi[0]:
                return False
            if self.lo[0] == self.hi[0]:
                if not (self.lo[1] and self.hi[1]):
                    return False
                return self.lo[0] not in self.neq
        return True


def _conjunct_feasible(atoms: list[Comparison]) -> bool:
    ranges: dict[str, tuple[ColumnType, _ColumnRange]] = {}
    for atom in atoms:
        left, op, right = atom.left, atom.op, atom.right
        if isinstance(left, Literal) and isinstance(right, ColumnRef):
            left, op, right = right, _FLIP[op], left
        if isinstance(left, ColumnRef) and isinstance(right, Literal):
            entry = ranges.get(left.key)
            if entry is None:
                entry = (left.type, _ColumnRange())
                ranges[left.key] = entry
            entry[1].apply(op, right.value)
        elif isinstance(left, Literal) and isinstance(right, Literal):
            if not _compare(left.value, op, right.value):
                return False
        # anything else (arithmetic, NOW, column pairs) is undecided: skip
    return all(rng.feasible(ctype) for ctype, rng in ranges.values())


def satisfiable(cond: Condition | None) -> bool:
    """Sound-for-exclusion satisfiability: False only with a proof of emptiness."""
    if cond is None:
        return True
    cond = simplify(cond)
    if isinstance(cond, Boolean):
        return cond.value
    clauses = _dnf(_to_nnf(cond))
    if clauses is None:
        return True
    return any(_conjunct_feasible(c) for c in clauses)


# --- routing relevance -----------------------------------------------------

def _view_bindings(
    view: ViewPredicate, query: Query, table: str, schema: TableDefinition
) -> dict[str, Value]:
    aliases = query.aliases_of(table)
    if not aliases:
        raise SchemaError(f"table {table!r} does not appear in the query")
    bindings: dict[str, Value] = {}
    for col, value in view.atoms:
        if not schema.has_column(col):
            raise SchemaError(f"view column {col!r} not in table {schema.name}")
        value = check_value(value, schema.type_of(col))
        for alias in aliases:
            key = f"{alias}.{col}" if query.is_join else col
            bindings[key] = value
    return bindings


def relevant(view: ViewPredicate, query: Query, table: str, schema: TableDefinition) -> bool:
    """False only when no tuple can satisfy both the view and the condition."""
    bindings = _view_bindings(view, query, table.lower(), schema)
    if query.condition is None:
        return True
    residual = simplify(substitute(query.condition, bindings))
    if isinstance(residual, Boolean):
        return residual.value
    return satisfiable(residual)


def residual_condition(
    query: Query, views: Mapping[str, tuple[ViewPredicate, TableDefinition]]
) -> Condition | None:
    """Condition left for a producer once its view bindings are substituted.

    views maps table name -> (view, schema) for every query table the target
    producer declares. Returns None when nothing remains to check (TRUE) and
    FALSE when the producer provably cannot contribute.
    """
    if query.condition is None:
        return None
    bindings: dict[str, Value] = {}
    for table, (view, schema) in views.items():
        bindings.update(_view_bindings(view, query, table, schema))
    residual = simplify(substitute(query.condition, bindings))
    if isinstance(residual, Boolean):
        return None if residual.value else FALSE
    return residual


def output_columns(query: Query, schemas: Mapping[str, TableDefinition]) -> list[str]:
    """Canonical result column keys, in rendering order."""
    if query.projection is not None:
        return list(query.projection)
    if not query.is_join:
        return list(schemas[query.tables[0].name].column_names())
    cols: list[str] = []
    for tref in query.tables:
        cols.extend(f"{tref.alias}.{c}" for c in schemas[tref.name].column_names())
    return cols
