"""Tokenizer for the SQL subset."""

from __future__ import annotations

from dataclasses import dataclass

from rgma.errors import SqlSyntaxError
from rgma.sqlcore.model import Value

# longest first so '<=' wins over '<'
_OPERATORS = ("<=", ">=", "<>", "=", "<", ">", "(", ")", ",", ".", "*", "+", "-", ";")

IDENT = "ident"
NUMBER = "number"
STRING = "string"
OP = "op"
END = "end"


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    value: Value | None
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise SqlSyntaxError(f"unterminated string literal at position {i}")
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            tokens.append(Token(STRING, text[i : j + 1], "".join(buf), i))
            i = j + 1
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            is_float = False
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                is_float = True
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    is_float = True
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            raw = text[i:j]
            tokens.append(Token(NUMBER, raw, float(raw) if is_float else int(raw), i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(Token(IDENT, text[i:j], None, i))
            i = j
            continue
        for op in _OPERATORS:
            if text.startswith(op, i):
                tokens.append(Token(OP, op, None, i))
                i += len(op)
                break
        else:
            raise SqlSyntaxError(f"unexpected character {ch!r} at position {i}")
    tokens.append(Token(END, "", None, n))
    return tokens
