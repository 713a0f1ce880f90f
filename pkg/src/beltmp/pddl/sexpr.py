"""S-expression reader that keeps source positions for diagnostics."""

from __future__ import annotations


class PddlError(ValueError):
    """Base class for every PDDL input problem."""


class PddlSyntaxError(PddlError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        super().__init__(f"{line}:{col}: {message}" if line else message)


class UndeclaredSymbolError(PddlError):
    pass


class TypeMismatchError(PddlError):
    pass


class UnsupportedConstructError(PddlSyntaxError):
    """A construct outside the supported PDDL subset."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"unsupported (outside the supported subset): {message}", line, col)


class Sym(str):
    """A lower-cased atom with its source position."""

    line: int
    col: int

    def __new__(cls, text: str, line: int = 0, col: int = 0):
        obj = super().__new__(cls, text.lower())
        obj.line = line
        obj.col = col
        return obj


class SList(list):
    line: int = 0
    col: int = 0


def where(node) -> tuple[int, int]:
    return getattr(node, "line", 0), getattr(node, "col", 0)


def tokenize(text: str):
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in "()":
            yield Sym(ch, line, col)
            i += 1
            col += 1
            continue
        start, start_col = i, col
        while i < n and not text[i].isspace() and text[i] not in "();":
            i += 1
            col += 1
        yield Sym(text[start:i], line, start_col)


def read(text: str) -> SList:
    """Parse exactly one top-level s-expression."""
    stack: list[SList] = []
    result = None
    last = (1, 1)
    for tok in tokenize(text):
        last = (tok.line, tok.col)
        if result is not None:
            raise PddlSyntaxError("trailing input after the top-level expression", tok.line, tok.col)
        if tok == "(":
            node = SList()
            node.line, node.col = tok.line, tok.col
            stack.append(node)
        elif tok == ")":
            if not stack:
                raise PddlSyntaxError("unbalanced ')'", tok.line, tok.col)
            node = stack.pop()
            if stack:
                stack[-1].append(node)
            else:
                result = node
        else:
            if not stack:
                raise PddlSyntaxError(f"unexpected atom {tok!r} outside parentheses", tok.line, tok.col)
            stack[-1].append(tok)
    if stack:
        raise PddlSyntaxError("unexpected end of input: missing ')'", *last)
    if result is None:
        raise PddlSyntaxError("empty input", *last)
    return result
