"""SQL subset: table definitions, view predicates, condition algebra,
parsing and the relevance test used for query routing."""

from rgma.sqlcore.model import (
    And,
    Arith,
    Boolean,
    Column,
    ColumnRef,
    ColumnType,
    Comparison,
    Condition,
    FALSE,
    Literal,
    Not,
    NowRef,
    Or,
    Query,
    TableDefinition,
    TableRef,
    TRUE,
    Value,
    ViewPredicate,
    check_value,
    render_condition,
    render_create_table,
    render_insert,
    render_select,
    render_view,
)
from rgma.sqlcore.parser import (
    insert_table_name,
    parse_condition_text,
    parse_create_table,
    parse_insert,
    parse_select,
    parse_view_predicate,
    statement_kind,
)
from rgma.sqlcore.analysis import (
    evaluate,
    output_columns,
    relevant,
    residual_condition,
    satisfiable,
    simplify,
    substitute,
)

__all__ = [
    "And",
    "Arith",
    "Boolean",
    "Column",
    "ColumnRef",
    "ColumnType",
    "Comparison",
    "Condition",
    "FALSE",
    "Literal",
    "Not",
    "NowRef",
    "Or",
    "Query",
    "TableDefinition",
    "TableRef",
    "TRUE",
    "Value",
    "ViewPredicate",
    "check_value",
    "evaluate",
    "insert_table_name",
    "output_columns",
    "parse_condition_text",
    "parse_create_table",
    "parse_insert",
    "parse_select",
    "parse_view_predicate",
    "relevant",
    "render_condition",
    "render_create_table",
    "render_insert",
    "render_select",
    "render_view",
    "residual_condition",
    "satisfiable",
    "simplify",
    "statement_kind",
    "substitute",
]
