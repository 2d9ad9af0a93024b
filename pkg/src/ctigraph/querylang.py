"""Mini pattern-query language over the graph.

Grammar (keywords case-insensitive, strings single- or double-quoted):

    match ( IDENT ) [ where IDENT . IDENT = STRING ] return IDENT

Errors carry 1-based line/column and the expected token set; the printer is
the exact inverse of the parser (``parse(print(ast)) == ast``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import QuerySyntaxError, UnboundVariable

_TOKEN = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<string>\"[^\"]*\"|'[^']*')"
    r"|(?P<punct>[().=])"
)

KEYWORDS = {"match", "where", "return"}


@dataclass(frozen=True)
class Predicate:
    attribute: str
    value: str  # comparator is always equality


@dataclass(frozen=True)
class QueryAst:
    variable: str
    predicate: Predicate | None = None


@dataclass(frozen=True)
class _Tok:
    kind: str  # keyword | ident | string | punct | eof
    text: str
    line: int
    column: int


def _lex(text: str) -> list[_Tok]:
    tokens = []
    line = 1
    col = 1
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", line, col)
        lexeme = m.group(0)
        if not m.group("ws"):
            if m.group("ident"):
                kind = "keyword" if lexeme.lower() in KEYWORDS else "ident"
            elif m.group("string"):
                kind = "string"
            else:
                kind = lexeme  # punct tokens are their own kind
            tokens.append(_Tok(kind, lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(_Tok("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Tok]):
        self.tokens = tokens
        self.pos = 0

    @property
    def current(self) -> _Tok:
        return self.tokens[self.pos]

    def expect(self, kind: str, text: str | None = None, expected_name: str | None = None) -> _Tok:
        tok = self.current
        ok = tok.kind == kind and (text is None or tok.text.lower() == text)
        if not ok:
            want = expected_name or text or kind
            found = tok.text or "end of input"
            raise QuerySyntaxError(
                f"unexpected {found!r}", tok.line, tok.column, expected=(want,)
            )
        self.pos += 1
        return tok

    def parse(self) -> QueryAst:
        self.expect("keyword", "match")
        self.expect("(")
        variable = self.expect("ident", expected_name="variable name").text
        self.expect(")")

        predicate = None
        if self.current.kind == "keyword" and self.current.text.lower() == "where":
            self.pos += 1
            subject_tok = self.current
            subject = self.expect("ident", expected_name="variable name").text
            if subject != variable:
                raise UnboundVariable(
                    f"variable {subject!r} is not bound (matched variable is {variable!r})"
                )
            self.expect(".")
            attribute = self.expect("ident", expected_name="attribute name").text
            self.expect("=")
            literal = self.expect("string", expected_name="quoted string").text[1:-1]
            if not literal:
                raise QuerySyntaxError(
                    "string literal must be non-empty", subject_tok.line, subject_tok.column
                )
            predicate = Predicate(attribute=attribute, value=literal)

        self.expect("keyword", "return")
        returned = self.expect("ident", expected_name="variable name")
        if returned.text != variable:
            raise UnboundVariable(
                f"variable {returned.text!r} is not bound (matched variable is {variable!r})"
            )
        self.expect("eof", expected_name="end of query")
        return QueryAst(variable=variable, predicate=predicate)


def parse_query(text: str) -> QueryAst:
    return _Parser(_lex(text)).parse()


def print_query(ast: QueryAst) -> str:
    if ast.predicate is None:
        return f"match({ast.variable}) return {ast.variable}"
    pred = ast.predicate
    return (
        f"match({ast.variable}) where {ast.variable}.{pred.attribute} = "
        f'"{pred.value}" return {ast.variable}'
    )
