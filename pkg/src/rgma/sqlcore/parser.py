"""Recursive-descent parser for the three supported statement kinds plus
view predicates and bare conditions (cleanup rules).

Out-of-subset constructs (aggregates, subqueries, ORDER BY, NULL, explicit
JOIN syntax, UPDATE/DELETE, ...) raise UnsupportedFeatureError rather than
being silently ignored.
"""

from __future__ import annotations

from typing import Callable, Mapping

from rgma.errors import SchemaError, SqlSyntaxError, TypeMismatchError, UnsupportedFeatureError
from rgma.sqlcore import lexer
from rgma.sqlcore.lexer import END, IDENT, NUMBER, OP, STRING, Token
from rgma.sqlcore.model import (
    And,
    Arith,
    Boolean,
    ColumnRef,
    ColumnType,
    Comparison,
    Condition,
    Column,
    Literal,
    Not,
    NowRef,
    NUMERIC_TYPES,
    Operand,
    Or,
    Query,
    TableDefinition,
    TableRef,
    Value,
    ViewPredicate,
    check_value,
)

_TRAILING_UNSUPPORTED = {
    "ORDER", "GROUP", "LIMIT", "HAVING", "UNION", "OFFSET", "INTERSECT", "EXCEPT",
}
_UNSUPPORTED_COMPARE = {"IN", "BETWEEN", "LIKE", "IS"}
_COLUMN_TYPES = {t.value: t for t in ColumnType}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = lexer.tokenize(text)
        self.i = 0

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def take(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != END:
            self.i += 1
        return tok

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == IDENT and tok.text.upper() == word

    def take_keyword(self, word: str) -> Token:
        tok = self.take()
        if tok.kind != IDENT or tok.text.upper() != word:
            raise SqlSyntaxError(f"expected {word} at position {tok.pos}")
        return tok

    def take_op(self, text: str) -> Token:
        tok = self.take()
        if tok.kind != OP or tok.text != text:
            raise SqlSyntaxError(f"expected {text!r} at position {tok.pos}")
        return tok

    def take_ident(self, what: str = "identifier") -> str:
        tok = self.take()
        if tok.kind != IDENT:
            raise SqlSyntaxError(f"expected {what} at position {tok.pos}")
        return tok.text.lower()

    def finish(self):
        if self.peek().kind == OP and self.peek().text == ";":
            self.take()
        tok = self.peek()
        if tok.kind != END:
            if tok.kind == IDENT and tok.text.upper() in _TRAILING_UNSUPPORTED:
                raise UnsupportedFeatureError(f"{tok.text.upper()} is outside the supported subset")
            raise SqlSyntaxError(f"unexpected trailing input at position {tok.pos}")


def statement_kind(text: str) -> str:
    """Classify a statement by its leading keyword (create/insert/select)."""
    p = _Parser(text)
    tok = p.peek()
    if tok.kind != IDENT:
        raise SqlSyntaxError("empty or malformed statement")
    word = tok.text.upper()
    if word in ("CREATE", "INSERT", "SELECT"):
        return word.lower()
    if word in ("UPDATE", "DELETE", "DROP", "ALTER", "TRUNCATE"):
        raise UnsupportedFeatureError(f"{word} statements are outside the supported subset")
    raise SqlSyntaxError(f"unrecognized statement starting with {tok.text!r}")


def parse_create_table(text: str, defining_key: list[str] | tuple[str, ...]) -> TableDefinition:
    """Parse CREATE TABLE; the defining key arrives as metadata beside the SQL."""
    p = _Parser(text)
    p.take_keyword("CREATE")
    p.take_keyword("TABLE")
    name = p.take_ident("table name")
    p.take_op("(")
    columns: list[Column] = []
    while True:
        col = p.take_ident("column name")
        tok = p.take()
        if tok.kind != IDENT:
            raise SqlSyntaxError(f"expected column type at position {tok.pos}")
        type_word = tok.text.upper()
        if type_word in ("PRIMARY", "UNIQUE", "NOT", "REFERENCES", "FOREIGN"):
            raise UnsupportedFeatureError(
                "column constraints are outside the subset; the defining key is separate metadata"
            )
        ctype = _COLUMN_TYPES.get(type_word)
        if ctype is None:
            raise UnsupportedFeatureError(f"unsupported column type {tok.text!r}")
        nxt = p.peek()
        if nxt.kind == IDENT:
            raise UnsupportedFeatureError("column constraints are outside the subset")
        columns.append(Column(col, ctype))
        tok = p.take()
        if tok.kind == OP and tok.text == ",":
            continue
        if tok.kind == OP and tok.text == ")":
            break
        raise SqlSyntaxError(f"expected ',' or ')' at position {tok.pos}")
    p.finish()
    ts_cols = [c.name for c in columns if c.type is ColumnType.TIMESTAMP]
    if len(ts_cols) != 1:
        raise SchemaError(
            f"table {name}: exactly one TIMESTAMP column required, found {len(ts_cols)}"
        )
    return TableDefinition(
        name=name,
        columns=tuple(columns),
        defining_key=tuple(defining_key),
        timestamp_column=ts_cols[0],
    )


def _take_literal(p: _Parser) -> Value:
    tok = p.take()
    if tok.kind == NUMBER or tok.kind == STRING:
        return tok.value  # type: ignore[return-value]
    if tok.kind == OP and tok.text == "-":
        num = p.take()
        if num.kind != NUMBER:
            raise SqlSyntaxError(f"expected number after '-' at position {num.pos}")
        return -num.value  # type: ignore[operator]
    if tok.kind == IDENT and tok.text.upper() == "NULL":
        raise UnsupportedFeatureError("NULL values are outside the supported subset")
    raise SqlSyntaxError(f"expected literal at position {tok.pos}")


def parse_insert(text: str, schema: TableDefinition) -> dict[str, Value]:
    """Parse INSERT INTO and return the full column binding.

    Every schema column must be bound: the subset has no NULL, and both the
    defining key and the timestamp are mandatory in every tuple.
    """
    p = _Parser(text)
    p.take_keyword("INSERT")
    p.take_keyword("INTO")
    table = p.take_ident("table name")
    if table != schema.name:
        raise SchemaError(f"insert targets {table!r} but schema is {schema.name!r}")
    p.take_op("(")
    cols: list[str] = []
    while True:
        cols.append(p.take_ident("column name"))
        tok = p.take()
        if tok.kind == OP and tok.text == ",":
            continue
        if tok.kind == OP and tok.text == ")":
            break
        raise SqlSyntaxError(f"expected ',' or ')' at position {tok.pos}")
    p.take_keyword("VALUES")
    p.take_op("(")
    values: list[Value] = []
    while True:
        values.append(_take_literal(p))
        tok = p.take()
        if tok.kind == OP and tok.text == ",":
            continue
        if tok.kind == OP and tok.text == ")":
            break
        raise SqlSyntaxError(f"expected ',' or ')' at position {tok.pos}")
    if p.peek().kind == OP and p.peek().text == ",":
        raise UnsupportedFeatureError("multi-row VALUES lists are outside the supported subset")
    p.finish()

    if len(cols) != len(values):
        raise SqlSyntaxError(f"{len(cols)} columns but {len(values)} values")
    if len(set(cols)) != len(cols):
        raise SchemaError("duplicate column in insert column list")
    binding: dict[str, Value] = {}
    for col, val in zip(cols, values):
        if not schema.has_column(col):
            raise SchemaError(f"table {schema.name}: no column {col!r}")
        binding[col] = check_value(val, schema.type_of(col))
    missing = [c for c in schema.column_names() if c not in binding]
    if missing:
        raise SchemaError(f"insert into {schema.name} leaves columns unbound: {', '.join(missing)}")
    return binding


def insert_table_name(text: str) -> str:
    """Just the target table of an INSERT, without schema validation."""
    p = _Parser(text)
    p.take_keyword("INSERT")
    p.take_keyword("INTO")
    return p.take_ident("table name")


# --- condition parsing -----------------------------------------------------

# resolver(qualifier, column, pos) -> ColumnRef
Resolver = Callable[[str | None, str, int], ColumnRef]


def _parse_operand(p: _Parser, resolve: Resolver, allow_now: bool) -> Operand:
    tok = p.peek()
    if tok.kind == NUMBER or tok.kind == STRING:
        p.take()
        ctype = ColumnType.STRING if tok.kind == STRING else (
            ColumnType.REAL if isinstance(tok.value, float) else ColumnType.INT
        )
        return Literal(tok.value, ctype)  # type: ignore[arg-type]
    if tok.kind == OP and tok.text == "-":
        p.take()
        num = p.take()
        if num.kind != NUMBER:
            raise SqlSyntaxError(f"expected number after '-' at position {num.pos}")
        ctype = ColumnType.REAL if isinstance(num.value, float) else ColumnType.INT
        return Literal(-num.value, ctype)  # type: ignore[operator]
    if tok.kind == IDENT:
        word = tok.text.upper()
        if word == "NULL":
            raise UnsupportedFeatureError("NULL values are outside the supported subset")
        if word == "SELECT":
            raise UnsupportedFeatureError("subqueries are outside the supported subset")
        if word == "NOW" and allow_now:
            p.take()
            return NowRef()
        p.take()
        qualifier = None
        name = tok.text.lower()
        if p.peek().kind == OP and p.peek().text == ".":
            p.take()
            qualifier = name
            name = p.take_ident("column name")
        if p.peek().kind == OP and p.peek().text == "(":
            raise UnsupportedFeatureError(
                f"function call {name!r}: aggregates and functions are outside the supported subset"
            )
        return resolve(qualifier, name, tok.pos)
    raise SqlSyntaxError(f"expected value or column at position {tok.pos}")


def _parse_additive(p: _Parser, resolve: Resolver, allow_now: bool) -> Operand:
    left = _parse_operand(p, resolve, allow_now)
    while p.peek().kind == OP and p.peek().text in ("+", "-"):
        op = p.take().text
        right = _parse_operand(p, resolve, allow_now)
        for side in (left, right):
            if _operand_family(side) != "num":
                raise TypeMismatchError("arithmetic requires numeric operands")
        left = Arith(left, op, right)
    return left


def _operand_family(op: Operand) -> str:
    if isinstance(op, ColumnRef):
        return "num" if op.type in NUMERIC_TYPES else "str"
    if isinstance(op, Literal):
        return "num" if op.type in NUMERIC_TYPES else "str"
    if isinstance(op, (NowRef, Arith)):
        return "num"
    raise TypeMismatchError(f"unknown operand {op!r}")


def _parse_comparison(p: _Parser, resolve: Resolver, allow_now: bool) -> Condition:
    left = _parse_additive(p, resolve, allow_now)
    tok = p.take()
    if tok.kind == IDENT and tok.text.upper() in _UNSUPPORTED_COMPARE:
        raise UnsupportedFeatureError(
            f"{tok.text.upper()} predicates are outside the supported subset"
        )
    if tok.kind != OP or tok.text not in ("=", "<>", "<", "<=", ">", ">="):
        raise SqlSyntaxError(f"expected comparison operator at position {tok.pos}")
    op = tok.text
    right = _parse_additive(p, resolve, allow_now)

    # plain column-vs-literal atoms get the strict typing rule
    if isinstance(left, ColumnRef) and isinstance(right, Literal):
        right = Literal(check_value(right.value, left.type), left.type)
    elif isinstance(left, Literal) and isinstance(right, ColumnRef):
        left = Literal(check_value(left.value, right.type), right.type)
    elif _operand_family(left) != _operand_family(right):
        raise TypeMismatchError("comparison operands must share a type family")
    return Comparison(left, op, right)


def _parse_not(p: _Parser, resolve: Resolver, allow_now: bool) -> Condition:
    if p.at_keyword("NOT"):
        p.take()
        return Not(_parse_not(p, resolve, allow_now))
    if p.peek().kind == OP and p.peek().text == "(":
        p.take()
        cond = _parse_or(p, resolve, allow_now)
        p.take_op(")")
        return cond
    return _parse_comparison(p, resolve, allow_now)


def _parse_and(p: _Parser, resolve: Resolver, allow_now: bool) -> Condition:
    items = [_parse_not(p, resolve, allow_now)]
    while p.at_keyword("AND"):
        p.take()
        items.append(_parse_not(p, resolve, allow_now))
    if len(items) == 1:
        return items[0]
    flat: list[Condition] = []
    for it in items:
        flat.extend(it.items if isinstance(it, And) else (it,))
    return And(tuple(flat))


def _parse_or(p: _Parser, resolve: Resolver, allow_now: bool) -> Condition:
    items = [_parse_and(p, resolve, allow_now)]
    while p.at_keyword("OR"):
        p.take()
        items.append(_parse_and(p, resolve, allow_now))
    if len(items) == 1:
        return items[0]
    flat: list[Condition] = []
    for it in items:
        flat.extend(it.items if isinstance(it, Or) else (it,))
    return Or(tuple(flat))


def _single_table_resolver(schema: TableDefinition) -> Resolver:
    def resolve(qualifier: str | None, name: str, pos: int) -> ColumnRef:
        if qualifier is not None and qualifier not in (schema.name,):
            raise SchemaError(f"unknown table qualifier {qualifier!r} at position {pos}")
        if not schema.has_column(name):
            raise SchemaError(f"table {schema.name}: no column {name!r}")
        return ColumnRef(name, schema.type_of(name))

    return resolve


def parse_condition_text(
    text: str, schema: TableDefinition, *, allow_now: bool = False
) -> Condition:
    """Parse a bare condition against one table (used by cleanup rules).

    With allow_now=True the identifier NOW is the reserved evaluation-time
    timestamp and shadows any column of that name.
    """
    p = _Parser(text)
    cond = _parse_or(p, _single_table_resolver(schema), allow_now)
    p.finish()
    _reject_column_pairs(cond)
    return cond


def _reject_column_pairs(cond: Condition):
    if isinstance(cond, Comparison):
        sides = (cond.left, cond.right)
        if all(isinstance(s, ColumnRef) for s in sides):
            raise UnsupportedFeatureError(
                "column-to-column comparison is only supported as a cross-table equi-join"
            )
        for side in sides:
            if isinstance(side, Arith):
                _reject_column_pairs_operand(side, top_has_column=any(
                    isinstance(s, ColumnRef) for s in sides))
        return
    if isinstance(cond, (And, Or)):
        for item in cond.items:
            _reject_column_pairs(item)
    elif isinstance(cond, Not):
        _reject_column_pairs(cond.item)


def _reject_column_pairs_operand(op: Operand, top_has_column: bool):
    # a comparison may reference at most one column overall; arithmetic that
    # mixes two columns is outside the condition algebra
    cols = _count_columns(op)
    if cols and top_has_column:
        raise UnsupportedFeatureError(
            "column-to-column comparison is only supported as a cross-table equi-join"
        )
    if cols > 1:
        raise UnsupportedFeatureError("arithmetic over more than one column is not supported")


def _count_columns(op: Operand) -> int:
    if isinstance(op, ColumnRef):
        return 1
    if isinstance(op, Arith):
        return _count_columns(op.left) + _count_columns(op.right)
    return 0


def parse_view_predicate(text: str | None, schema: TableDefinition) -> ViewPredicate:
    """Parse a producer view: a conjunction of column=literal atoms, optionally
    written as WHERE (...). Empty text is the universal predicate."""
    if text is None or not text.strip():
        return ViewPredicate.universal()
    p = _Parser(text)
    if p.at_keyword("WHERE"):
        p.take()
    wrapped = p.peek().kind == OP and p.peek().text == "("
    if wrapped:
        p.take()
    atoms: list[tuple[str, Value]] = []
    while True:
        col = p.take_ident("column name")
        if not schema.has_column(col):
            raise SchemaError(f"table {schema.name}: no column {col!r}")
        tok = p.take()
        if tok.kind != OP or tok.text != "=":
            raise UnsupportedFeatureError("view predicates allow only column = literal atoms")
        val = _take_literal(p)
        atoms.append((col, check_value(val, schema.type_of(col))))
        if p.at_keyword("AND"):
            p.take()
            continue
        break
    if wrapped:
        p.take_op(")")
    tok = p.peek()
    if tok.kind == IDENT and tok.text.upper() == "OR":
        raise UnsupportedFeatureError("view predicates are conjunctions only")
    p.finish()
    return ViewPredicate(tuple(atoms))


# --- SELECT ----------------------------------------------------------------

def parse_select(text: str, schemas: Mapping[str, TableDefinition]) -> Query:
    p = _Parser(text)
    p.take_keyword("SELECT")
    if p.at_keyword("DISTINCT"):
        raise UnsupportedFeatureError("DISTINCT is outside the supported subset")

    # projection: '*' or a list of (possibly qualified) column names
    star = False
    proj_raw: list[tuple[str | None, str, int]] = []
    if p.peek().kind == OP and p.peek().text == "*":
        p.take()
        star = True
    else:
        while True:
            tok = p.peek()
            if tok.kind == OP and tok.text == "(":
                raise UnsupportedFeatureError("expressions in the select list are not supported")
            name = p.take_ident("column name")
            if name.upper() == "SELECT":
                raise UnsupportedFeatureError("subqueries are outside the supported subset")
            qualifier = None
            if p.peek().kind == OP and p.peek().text == ".":
                p.take()
                qualifier = name
                name = p.take_ident("column name")
            if p.peek().kind == OP and p.peek().text == "(":
                raise UnsupportedFeatureError(
                    f"function call {name!r}: aggregates and functions are outside the supported subset"
                )
            proj_raw.append((qualifier, name, tok.pos))
            if p.peek().kind == OP and p.peek().text == ",":
                p.take()
                continue
            break

    p.take_keyword("FROM")
    tables: list[TableRef] = []
    while True:
        tok = p.peek()
        if tok.kind == OP and tok.text == "(":
            raise UnsupportedFeatureError("subqueries are outside the supported subset")
        tname = p.take_ident("table name")
        if tname not in schemas:
            raise SchemaError(f"unknown table {tname!r}")
        alias = tname
        if p.at_keyword("AS"):
            p.take()
            alias = p.take_ident("alias")
        elif p.peek().kind == IDENT and p.peek().text.upper() not in (
            "WHERE", "ORDER", "GROUP", "LIMIT", "HAVING", "UNION", "JOIN", "INNER",
            "LEFT", "RIGHT", "OUTER", "CROSS", "ON",
        ):
            alias = p.take_ident("alias")
        tables.append(TableRef(tname, alias))
        nxt = p.peek()
        if nxt.kind == OP and nxt.text == ",":
            p.take()
            continue
        if nxt.kind == IDENT and nxt.text.upper() in (
            "JOIN", "INNER", "LEFT", "RIGHT", "OUTER", "CROSS", "ON",
        ):
            raise UnsupportedFeatureError(
                "explicit JOIN syntax is not supported; list tables separated by commas"
            )
        break
    aliases = [t.alias for t in tables]
    if len(set(aliases)) != len(aliases):
        raise SchemaError("duplicate table alias in FROM clause")
    is_join = len(tables) > 1
    by_alias = {t.alias: schemas[t.name] for t in tables}

    def resolve(qualifier: str | None, name: str, pos: int) -> ColumnRef:
        if qualifier is not None:
            if qualifier not in by_alias:
                raise SchemaError(f"unknown table or alias {qualifier!r} at position {pos}")
            schema = by_alias[qualifier]
            if not schema.has_column(name):
                raise SchemaError(f"table {schema.name}: no column {name!r}")
            key = f"{qualifier}.{name}" if is_join else name
            return ColumnRef(key, schema.type_of(name))
        owners = [a for a, s in by_alias.items() if s.has_column(name)]
        if not owners:
            raise SchemaError(f"no table in FROM declares column {name!r}")
        if len(owners) > 1:
            raise SchemaError(f"column {name!r} is ambiguous across {sorted(owners)}")
        key = f"{owners[0]}.{name}" if is_join else name
        return ColumnRef(key, by_alias[owners[0]].type_of(name))

    condition: Condition | None = None
    if p.at_keyword("WHERE"):
        p.take()
        condition = _parse_or(p, resolve, allow_now=False)
    p.finish()

    # extract cross-table equi-joins from the top-level conjunction
    join_eqs: list[tuple[str, str]] = []
    if condition is not None:
        terms = list(condition.items) if isinstance(condition, And) else [condition]
        residual: list[Condition] = []
        for term in terms:
            if (
                is_join
                and isinstance(term, Comparison)
                and term.op == "="
                and isinstance(term.left, ColumnRef)
                and isinstance(term.right, ColumnRef)
            ):
                la, ra = term.left.key.split(".", 1)[0], term.right.key.split(".", 1)[0]
                if la == ra:
                    raise UnsupportedFeatureError(
                        "column-to-column comparison within one table is not supported"
                    )
                if _operand_family(term.left) != _operand_family(term.right):
                    raise TypeMismatchError("join columns must share a type family")
                join_eqs.append((term.left.key, term.right.key))
                continue
            residual.append(term)
        for term in residual:
            _reject_column_pairs(term)
        if not residual:
            condition = None
        elif len(residual) == 1:
            condition = residual[0]
        else:
            condition = And(tuple(residual))

    projection: tuple[str, ...] | None = None
    if not star:
        keys = []
        for qualifier, name, pos in proj_raw:
            keys.append(resolve(qualifier, name, pos).key)
        projection = tuple(keys)

    return Query(
        projection=projection,
        tables=tuple(tables),
        condition=condition,
        join_equalities=tuple(join_eqs),
    )
