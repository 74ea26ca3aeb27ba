"""Attribute credentials and monotone access-policy formulas.

Grammar (keywords upper-case, AND binds tighter than OR)::

    Policy  := Or
    Or      := And ("OR" And)*
    And     := Primary ("AND" Primary)*
    Primary := ATTR | "(" Policy ")" | "ANY" INT "OF" "(" Policy ("," Policy)+ ")"
    ATTR    := [A-Za-z0-9_.:-]+, other than a keyword
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Union

from medledger import codec
from medledger.crypto.signing import SigningKey, verify
from medledger.errors import UnknownActor

MAX_TEXT = 4096
MAX_DEPTH = 16
MAX_LEAVES = 256
MAX_NESTING = 128
MAX_ATTR_NAME = 128

_ATTR_RE = re.compile(r"[A-Za-z0-9_.:-]+\Z")
_INT_RE = re.compile(r"[0-9]+\Z")
_TOKEN_RE = re.compile(r"\s+|[(),]|[^\s(),]+")
_KEYWORDS = {"AND", "OR", "ANY", "OF"}


class PolicyError(ValueError):
    pass


class PolicySyntaxError(PolicyError):
    def __init__(self, offset: int, message: str) -> None:
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class PolicyTooComplex(PolicyError):
    pass


class InvalidAttribute(ValueError):
    pass


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Attr:
    name: str


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


@dataclass(frozen=True)
class AnyOf:
    k: int
    children: tuple


Policy = Union[Attr, And, Or, AnyOf]


def depth(f: Policy) -> int:
    if isinstance(f, Attr):
        return 1
    return 1 + max(depth(c) for c in f.children)


def leaves(f: Policy) -> list[str]:
    if isinstance(f, Attr):
        return [f.name]
    return [name for c in f.children for name in leaves(c)]


def check_limits(f: Policy) -> Policy:
    if depth(f) > MAX_DEPTH:
        raise PolicyTooComplex(f"depth {depth(f)} exceeds {MAX_DEPTH}")
    if len(leaves(f)) > MAX_LEAVES:
        raise PolicyTooComplex(f"more than {MAX_LEAVES} leaves")
    return f


# -- parsing ------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.tokens = [
            (m.group(), m.start()) for m in _TOKEN_RE.finditer(text) if not m.group().isspace()
        ]
        self.i = 0
        self.nesting = 0

    def peek(self) -> str | None:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def offset(self) -> int:
        return self.tokens[self.i][1] if self.i < len(self.tokens) else len(self.text.encode())

    def fail(self, message: str):
        # byte offsets, not character offsets
        char_off = self.tokens[self.i][1] if self.i < len(self.tokens) else len(self.text)
        raise PolicySyntaxError(len(self.text[:char_off].encode()), message)

    def expect(self, tok: str) -> None:
        if self.peek() != tok:
            found = self.peek()
            self.fail(f"expected {tok!r}, found {'end of input' if found is None else repr(found)}")
        self.i += 1

    def parse(self) -> Policy:
        f = self.parse_or()
        if self.peek() is not None:
            self.fail(f"unexpected {self.peek()!r}")
        return f

    def parse_or(self) -> Policy:
        children = [self.parse_and()]
        while self.peek() == "OR":
            self.i += 1
            children.append(self.parse_and())
        return children[0] if len(children) == 1 else Or(tuple(children))

    def parse_and(self) -> Policy:
        children = [self.parse_primary()]
        while self.peek() == "AND":
            self.i += 1
            children.append(self.parse_primary())
        return children[0] if len(children) == 1 else And(tuple(children))

    def enter(self) -> None:
        self.nesting += 1
        if self.nesting > MAX_NESTING:
            raise PolicyTooComplex(f"nesting deeper than {MAX_NESTING}")

    def parse_primary(self) -> Policy:
        tok = self.peek()
        if tok is None:
            self.fail("expected attribute, '(' or ANY, found end of input")
        if tok == "(":
            self.i += 1
            self.enter()
            f = self.parse_or()
            self.expect(")")
            self.nesting -= 1
            return f
        if tok == "ANY":
            self.i += 1
            if self.peek() is None or not _INT_RE.match(self.peek()):
                self.fail("expected threshold after ANY")
            k_off = self.i
            k = int(self.peek())
            self.i += 1
            self.expect("OF")
            self.expect("(")
            self.enter()
            children = [self.parse_or()]
            while self.peek() == ",":
                self.i += 1
                children.append(self.parse_or())
            self.expect(")")
            self.nesting -= 1
            if len(children) < 2:
                self.i -= 1
                self.fail("ANY needs at least two alternatives")
            if not 1 <= k <= len(children):
                self.i = k_off
                self.fail(f"threshold {k} outside 1..{len(children)}")
            return AnyOf(k, tuple(children))
        if tok in _KEYWORDS or not _ATTR_RE.match(tok):
            self.fail(f"unexpected {tok!r}")
        self.i += 1
        return Attr(tok)


def parse_policy(text: str) -> Policy:
    if len(text.encode("utf-8")) > MAX_TEXT:
        raise PolicyTooComplex(f"policy text longer than {MAX_TEXT} bytes")
    return check_limits(_Parser(text).parse())


@lru_cache(maxsize=1024)
def parse_cached(text: str) -> Policy:
    return parse_policy(text)


def format_policy(f: Policy) -> str:
    """Canonical text; ``parse_policy(format_policy(f)) == f`` for parsed ``f``."""
    if isinstance(f, Attr):
        return f.name
    if isinstance(f, AnyOf):
        return f"ANY {f.k} OF (" + ", ".join(format_policy(c) for c in f.children) + ")"
    parts = []
    for c in f.children:
        s = format_policy(c)
        # nested same-kind nodes and OR under AND need explicit grouping
        if isinstance(c, Or) or (isinstance(c, And) and isinstance(f, And)):
            s = f"({s})"
        parts.append(s)
    return (" AND " if isinstance(f, And) else " OR ").join(parts)


# -- evaluation ---------------------------------------------------------------


def eval_policy(f: Policy, attrs: Iterable[str]) -> bool:
    held = attrs if isinstance(attrs, (set, frozenset)) else frozenset(attrs)
    return _eval(f, held)


def _eval(f: Policy, held) -> bool:
    if isinstance(f, Attr):
        return f.name in held
    if isinstance(f, And):
        return all(_eval(c, held) for c in f.children)
    if isinstance(f, Or):
        return any(_eval(c, held) for c in f.children)
    return sum(1 for c in f.children if _eval(c, held)) >= f.k


# -- credentials ----------------------------------------------------------------


@dataclass(frozen=True)
class Attribute:
    name: str
    subject: str
    issued_at: int
    registrar_sig: bytes


@dataclass(frozen=True)
class _SignedAttribute:
    subject: str
    name: str
    issued_at: int


def check_attr_name(name: str) -> None:
    if not name or not name.isascii() or len(name) > MAX_ATTR_NAME:
        raise InvalidAttribute(f"attribute name must be 1..{MAX_ATTR_NAME} ASCII bytes: {name!r}")


def credential_bytes(subject: str, name: str, issued_at: int) -> bytes:
    return b"medledger/v1/attr" + codec.encode(_SignedAttribute(subject, name, issued_at))


def issue_credential(registrar_key: SigningKey, subject: str, name: str, height: int) -> Attribute:
    check_attr_name(name)
    sig = registrar_key.sign(credential_bytes(subject, name, height))
    return Attribute(name=name, subject=subject, issued_at=height, registrar_sig=sig)


def verify_credential(registrar_pk: bytes, attr: Attribute) -> bool:
    try:
        check_attr_name(attr.name)
    except InvalidAttribute:
        return False
    return verify(registrar_pk, attr.registrar_sig, credential_bytes(attr.subject, attr.name, attr.issued_at))


def collect_attributes(state, actor_id: str, height: int) -> frozenset[str]:
    """Attributes on-chain for ``actor_id`` at ``height``, minus revocations."""
    if actor_id not in state.actors:
        raise UnknownActor(actor_id)
    return frozenset(
        e.name
        for e in state.attributes.get(actor_id, ())
        if e.issued_height <= height and (e.revoked_height is None or e.revoked_height > height)
    )
