"""Scalar expression graphs: parsing, evaluation and exact differentiation.

Expressions are immutable, hash-consed DAG nodes. Two structurally equal
expressions built in the same process are the *same* object, so sharing of
common subexpressions happens automatically inside one graph and identity
comparison (``a is b``) is structural equality.

Grammar accepted by :func:`parse` (EBNF)::

    expr    = term , { ( "+" | "-" ) , term } ;
    term    = unary , { ( "*" | "/" ) , unary } ;
    unary   = ( "-" | "+" ) , unary | power ;
    power   = atom , { "^" , [ "+" | "-" ] , integer } ;
    atom    = number | identifier
            | func , "(" , expr , ")"
            | "(" , expr , ")" ;
    func    = "sin" | "cos" | "tan" | "exp" | "ln" | "sqrt" | "abs" ;

Exponents must be integer literals; write general powers as ``exp(b*ln(a))``.
``-x^2`` parses as ``-(x^2)`` and ``x^2^3`` as ``(x^2)^3``.
"""

from __future__ import annotations

import math
import re
import threading
import weakref
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expr",
    "VariableSpace",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "ExprDomainError",
    "const",
    "var",
    "parse",
    "diff",
    "evaluate",
    "substitute",
    "free_vars",
    "to_string",
    "compile_exprs",
    "node_count",
    "to_dag",
    "from_dag",
    "sin",
    "cos",
    "tan",
    "exp",
    "ln",
    "sqrt",
    "absolute",
    "ZERO",
    "ONE",
]

UNARY_FUNCS = ("sin", "cos", "tan", "exp", "ln", "sqrt", "abs")
BINARY_OPS = ("add", "sub", "mul", "div")


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int | None = None):
        where = "" if offset is None else f" at offset {offset}"
        super().__init__(f"unknown identifier {name!r}{where}")
        self.name = name
        self.offset = offset


class ExprDomainError(ExprError, ArithmeticError):
    """Raised when evaluation leaves the domain of an operator."""

    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in {to_string(subexpr)}")
        self.subexpr = subexpr


_intern_lock = threading.Lock()
_intern: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


class Expr:
    """An immutable expression node.

    ``kind`` is one of ``const``, ``var``, ``unary``, ``binary`` or ``pow``.
    Use the module-level constructors rather than instantiating directly.
    """

    __slots__ = ("kind", "op", "value", "args", "__weakref__")

    kind: str
    op: str | None
    value: float | str | int | None
    args: tuple["Expr", ...]

    def __new__(cls, kind, op, value, args):
        if kind == "const":
            value = float(value)
            if value == 0.0:
                value = 0.0  # fold -0.0
        key = (kind, op, value, tuple(id(a) for a in args))
        with _intern_lock:
            node = _intern.get(key)
            if node is None:
                node = object.__new__(cls)
                object.__setattr__(node, "kind", kind)
                object.__setattr__(node, "op", op)
                object.__setattr__(node, "value", value)
                object.__setattr__(node, "args", tuple(args))
                _intern[key] = node
        return node

    def __setattr__(self, name, value):
        raise AttributeError("Expr is immutable")

    def __reduce__(self):
        table, roots = to_dag([self])
        return (_from_dag_single, (table, roots[0]))

    def __repr__(self):
        text = to_string(self)
        if len(text) > 80:
            text = text[:77] + "..."
        return f"Expr({text!r})"

    def __str__(self):
        return to_string(self)

    @property
    def is_const(self) -> bool:
        return self.kind == "const"

    # arithmetic sugar for building models in Python
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    def __pow__(self, k):
        if isinstance(k, Expr):
            if k.kind != "const" or k.value != int(k.value):
                raise TypeError("exponent must be an integer")
            k = int(k.value)
        if int(k) != k:
            raise TypeError("exponent must be an integer")
        return power(self, int(k))


def _coerce(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return const(float(x))
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


def const(value: float) -> Expr:
    return Expr("const", None, float(value), ())


def var(name: str) -> Expr:
    return Expr("var", None, str(name), ())


ZERO = const(0.0)
ONE = const(1.0)


def _is(e: Expr, value: float) -> bool:
    return e.kind == "const" and e.value == value


# ---------------------------------------------------------------------------
# smart constructors (constant folding and trivial-identity elimination)


def add(a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        return const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if b.kind == "unary" and b.op == "neg":
        return sub(a, b.args[0])
    if b.kind == "const" and b.value < 0:
        return sub(a, const(-b.value))
    return Expr("binary", "add", None, (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        return const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if a is b:
        return ZERO
    if b.kind == "unary" and b.op == "neg":
        return add(a, b.args[0])
    return Expr("binary", "sub", None, (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if b.kind == "const" and a.kind != "const":
        a, b = b, a
    if a.kind == "const":
        if b.kind == "const":
            return const(a.value * b.value)
        if a.value == 0.0:
            return ZERO
        if a.value == 1.0:
            return b
        if a.value == -1.0:
            return neg(b)
        if b.kind == "binary" and b.op == "mul" and b.args[0].kind == "const":
            return mul(const(a.value * b.args[0].value), b.args[1])
        if b.kind == "unary" and b.op == "neg":
            return mul(const(-a.value), b.args[0])
    if _is(b, 0.0):
        return ZERO
    if a.kind == "unary" and a.op == "neg" and b.kind == "unary" and b.op == "neg":
        return mul(a.args[0], b.args[0])
    if a.kind == "unary" and a.op == "neg":
        return neg(mul(a.args[0], b))
    if b.kind == "unary" and b.op == "neg":
        return neg(mul(a, b.args[0]))
    return Expr("binary", "mul", None, (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if b.kind == "const":
        if b.value == 1.0:
            return a
        if b.value == -1.0:
            return neg(a)
        if a.kind == "const" and b.value != 0.0:
            return const(a.value / b.value)
        if b.value != 0.0:
            return mul(const(1.0 / b.value), a)
    if _is(a, 0.0):
        return ZERO
    return Expr("binary", "div", None, (a, b))


def neg(a: Expr) -> Expr:
    if a.kind == "const":
        return const(-a.value)
    if a.kind == "unary" and a.op == "neg":
        return a.args[0]
    if a.kind == "binary" and a.op == "sub":
        return sub(a.args[1], a.args[0])
    return Expr("unary", "neg", None, (a,))


def power(a: Expr, k: int) -> Expr:
    k = int(k)
    if k == 0:
        return ONE
    if k == 1:
        return a
    if a.kind == "const":
        try:
            return const(a.value**k)
        except ZeroDivisionError:
            pass
    if a.kind == "pow":
        return power(a.args[0], a.value * k)
    return Expr("pow", None, k, (a,))


_FOLD = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "ln": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}


def _unary(op: str, a: Expr) -> Expr:
    if a.kind == "const":
        try:
            return const(_FOLD[op](a.value))
        except (ValueError, OverflowError):
            pass  # left symbolic; evaluation reports the domain error
    if op == "ln" and a.kind == "unary" and a.op == "exp":
        return a.args[0]
    return Expr("unary", op, None, (a,))


def sin(a) -> Expr:
    return _unary("sin", _coerce(a))


def cos(a) -> Expr:
    return _unary("cos", _coerce(a))


def tan(a) -> Expr:
    return _unary("tan", _coerce(a))


def exp(a) -> Expr:
    return _unary("exp", _coerce(a))


def ln(a) -> Expr:
    return _unary("ln", _coerce(a))


def sqrt(a) -> Expr:
    return _unary("sqrt", _coerce(a))


def absolute(a) -> Expr:
    return _unary("abs", _coerce(a))


_BUILD_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def _rebuild(node: Expr, args: Sequence[Expr]) -> Expr:
    if node.kind == "binary":
        return _BUILD_BINARY[node.op](args[0], args[1])
    if node.kind == "unary":
        if node.op == "neg":
            return neg(args[0])
        return _unary(node.op, args[0])
    if node.kind == "pow":
        return power(args[0], node.value)
    return node


# ---------------------------------------------------------------------------
# graph traversal


def _topo(roots: Iterable[Expr]) -> list[Expr]:
    """Nodes reachable from ``roots``, children before parents, each once."""
    order: list[Expr] = []
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in reversed(node.args):
                if id(child) not in seen:
                    stack.append((child, False))
    return order


def node_count(exprs: Expr | Iterable[Expr]) -> int:
    """Number of distinct nodes in the DAG spanned by ``exprs``."""
    if isinstance(exprs, Expr):
        exprs = [exprs]
    return len(_topo(exprs))


def free_vars(exprs: Expr | Iterable[Expr]) -> set[str]:
    if isinstance(exprs, Expr):
        exprs = [exprs]
    return {n.value for n in _topo(exprs) if n.kind == "var"}


def substitute(e: Expr, mapping: Mapping[str, Expr | float]) -> Expr:
    """Replace variables by expressions (or numbers), re-simplifying on the way."""
    repl = {k: _coerce(v) for k, v in mapping.items()}
    done: dict[int, Expr] = {}
    for node in _topo([e]):
        if node.kind == "var":
            done[id(node)] = repl.get(node.value, node)
        elif node.kind == "const":
            done[id(node)] = node
        else:
            done[id(node)] = _rebuild(node, [done[id(a)] for a in node.args])
    return done[id(e)]


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, name: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``name``."""
    d: dict[int, Expr] = {}
    for node in _topo([e]):
        kind = node.kind
        if kind == "const":
            d[id(node)] = ZERO
        elif kind == "var":
            d[id(node)] = ONE if node.value == name else ZERO
        elif kind == "pow":
            (a,) = node.args
            da = d[id(a)]
            k = node.value
            d[id(node)] = ZERO if da is ZERO else mul(mul(const(k), power(a, k - 1)), da)
        elif kind == "binary":
            a, b = node.args
            da, db = d[id(a)], d[id(b)]
            op = node.op
            if op == "add":
                d[id(node)] = add(da, db)
            elif op == "sub":
                d[id(node)] = sub(da, db)
            elif op == "mul":
                d[id(node)] = add(mul(da, b), mul(a, db))
            else:
                if db is ZERO:
                    d[id(node)] = div(da, b)
                else:
                    d[id(node)] = div(sub(mul(da, b), mul(a, db)), power(b, 2))
        else:
            (a,) = node.args
            da = d[id(a)]
            if da is ZERO:
                d[id(node)] = ZERO
                continue
            op = node.op
            if op == "neg":
                r = neg(da)
            elif op == "sin":
                r = mul(cos(a), da)
            elif op == "cos":
                r = neg(mul(sin(a), da))
            elif op == "tan":
                r = mul(add(ONE, power(node, 2)), da)
            elif op == "exp":
                r = mul(node, da)
            elif op == "ln":
                r = div(da, a)
            elif op == "sqrt":
                r = div(da, mul(const(2.0), node))
            elif op == "abs":
                r = mul(div(a, node), da)
            else:  # pragma: no cover
                raise ExprError(f"unknown operator {op}")
            d[id(node)] = r
    return d[id(e)]


# ---------------------------------------------------------------------------
# evaluation


def _domain_check(node: Expr, op: str, x: float) -> None:
    if op == "ln" and x <= 0.0:
        raise ExprDomainError("ln of non-positive value", node)
    if op == "sqrt" and x < 0.0:
        raise ExprDomainError("sqrt of negative value", node)


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` in IEEE double precision.

    Raises :class:`ExprDomainError` naming the offending subexpression on
    division by zero, ``ln`` of a non-positive number or ``sqrt`` of a
    negative number, and ``KeyError`` for unbound variables.
    """
    val: dict[int, float] = {}
    for node in _topo([e]):
        kind = node.kind
        if kind == "const":
            r = node.value
        elif kind == "var":
            try:
                r = float(env[node.value])
            except KeyError:
                raise KeyError(f"variable {node.value!r} is not bound") from None
        elif kind == "pow":
            x = val[id(node.args[0])]
            if x == 0.0 and node.value < 0:
                raise ExprDomainError("division by zero", node)
            try:
                r = x**node.value
            except OverflowError:
                r = math.inf
        elif kind == "binary":
            x, y = val[id(node.args[0])], val[id(node.args[1])]
            op = node.op
            if op == "add":
                r = x + y
            elif op == "sub":
                r = x - y
            elif op == "mul":
                r = x * y
            else:
                if y == 0.0:
                    raise ExprDomainError("division by zero", node)
                r = x / y
        else:
            x = val[id(node.args[0])]
            op = node.op
            if op == "neg":
                r = -x
            else:
                _domain_check(node, op, x)
                try:
                    r = _FOLD[op](x)
                except OverflowError:
                    r = math.inf
        val[id(node)] = r
    return val[id(e)]


_PY_FUNCS = {
    "sin": "math.sin",
    "cos": "math.cos",
    "tan": "math.tan",
    "exp": "math.exp",
    "ln": "math.log",
    "sqrt": "math.sqrt",
    "abs": "abs",
}
_NP_FUNCS = {
    "sin": "np.sin",
    "cos": "np.cos",
    "tan": "np.tan",
    "exp": "np.exp",
    "ln": "np.log",
    "sqrt": "np.sqrt",
    "abs": "np.abs",
}
_BIN_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def compile_exprs(
    exprs: Sequence[Expr], names: Sequence[str], vectorized: bool = False
) -> Callable:
    """Compile a batch of expressions into one Python function.

    The returned callable takes a sequence of values ordered like ``names``
    and returns a tuple with one value per expression. Shared subexpressions
    are computed once. Scalar functions raise :class:`ExprDomainError` like
    :func:`evaluate`. With ``vectorized=True`` the inputs may be numpy
    arrays (broadcast together) and domain violations produce nan/inf
    instead of raising.
    """
    names = list(names)
    index = {n: i for i, n in enumerate(names)}
    funcs = _NP_FUNCS if vectorized else _PY_FUNCS
    lines = ["def _f(_x):"]
    ref: dict[int, str] = {}
    missing = free_vars(exprs) - set(index)
    if missing:
        raise UnknownIdentifierError(sorted(missing)[0])
    for node in _topo(exprs):
        kind = node.kind
        if kind == "const":
            ref[id(node)] = f"({node.value!r})"
            continue
        name = f"_t{len(ref)}"
        if kind == "var":
            rhs = f"_x[{index[node.value]}]"
        elif kind == "pow":
            rhs = f"{ref[id(node.args[0])]} ** {node.value}"
            if node.value < 0:
                rhs = f"1.0 / ({ref[id(node.args[0])]} ** {-node.value})"
        elif kind == "binary":
            a, b = (ref[id(c)] for c in node.args)
            rhs = f"{a} {_BIN_SYMBOL[node.op]} {b}"
        elif node.op == "neg":
            rhs = f"-{ref[id(node.args[0])]}"
        else:
            rhs = f"{funcs[node.op]}({ref[id(node.args[0])]})"
        lines.append(f"    {name} = {rhs}")
        ref[id(node)] = name
    outs = ", ".join(ref[id(e)] for e in exprs)
    lines.append(f"    return ({outs}{',' if len(exprs) == 1 else ''})")
    source = "\n".join(lines)
    namespace = {"math": math, "np": np}
    exec(compile(source, "<robolin.expr>", "exec"), namespace)
    fn = namespace["_f"]
    if not vectorized:

        def scalar_fn(values):
            try:
                return fn(values)
            except (ValueError, ZeroDivisionError, OverflowError):
                # re-evaluate to name the offending subexpression
                env = dict(zip(names, map(float, values)))
                for e in exprs:
                    evaluate(e, env)
                raise

        return scalar_fn

    def vector_fn(values):
        with np.errstate(all="ignore"):
            return fn(values)

    return vector_fn


# ---------------------------------------------------------------------------
# printing and DAG serialization

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def to_string(e: Expr) -> str:
    """Infix text that :func:`parse` reads back to the same value."""
    text: dict[int, tuple[str, int]] = {}
    for node in _topo([e]):
        kind = node.kind
        if kind == "const":
            v = node.value
            s = repr(v) if math.isfinite(v) else ("(1.0/0.0)" if v > 0 else "(-1.0/0.0)")
            text[id(node)] = (f"({s})" if v < 0 else s, 5)
        elif kind == "var":
            text[id(node)] = (node.value, 5)
        elif kind == "pow":
            s, p = text[id(node.args[0])]
            if p < 5:
                s = f"({s})"
            text[id(node)] = (f"{s}^{node.value}", 4)
        elif kind == "binary":
            op = node.op
            prec = _PREC[op]
            (ls, lp), (rs, rp) = text[id(node.args[0])], text[id(node.args[1])]
            if lp < prec:
                ls = f"({ls})"
            # right operand of -, / and anything of equal precedence gets parens
            if rp < prec or (rp == prec and op in ("sub", "div", "mul")):
                rs = f"({rs})"
            text[id(node)] = (f"{ls} {_BIN_SYMBOL[op]} {rs}", prec)
        elif node.op == "neg":
            s, p = text[id(node.args[0])]
            if p < 4:
                s = f"({s})"
            text[id(node)] = (f"-{s}", 3)
        else:
            s, _ = text[id(node.args[0])]
            text[id(node)] = (f"{node.op}({s})", 5)
    return text[id(e)][0]


def to_dag(exprs: Sequence[Expr]) -> tuple[list[list], list[int]]:
    """Serialize expressions as a shared node table plus root indices.

    Each table row is ``[kind, op, value, child_indices]``; the table is in
    topological order so it can be rebuilt in one pass.
    """
    table: list[list] = []
    index: dict[int, int] = {}
    for node in _topo(exprs):
        index[id(node)] = len(table)
        table.append([node.kind, node.op, node.value, [index[id(a)] for a in node.args]])
    return table, [index[id(e)] for e in exprs]


def from_dag(table: Sequence[Sequence], roots: Sequence[int]) -> list[Expr]:
    nodes: list[Expr] = []
    for kind, op, value, children in table:
        args = [nodes[i] for i in children]
        if kind == "const":
            nodes.append(const(value))
        elif kind == "var":
            nodes.append(var(value))
        elif kind == "pow":
            nodes.append(power(args[0], int(value)))
        elif kind == "binary":
            nodes.append(_BUILD_BINARY[op](*args))
        elif op == "neg":
            nodes.append(neg(args[0]))
        else:
            nodes.append(_unary(op, args[0]))
    return [nodes[i] for i in roots]


def _from_dag_single(table, root):
    return from_dag(table, [root])[0]


# ---------------------------------------------------------------------------
# variable spaces and parsing


@dataclass(frozen=True)
class VariableSpace:
    """Ordered variable names partitioned into states, inputs and parameters."""

    states: tuple[str, ...] = ()
    inputs: tuple[str, ...] = ()
    params: tuple[str, ...] = ()

    def __post_init__(self):
        for field in ("states", "inputs", "params"):
            object.__setattr__(self, field, tuple(str(n) for n in getattr(self, field)))
        names = self.names
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate variable names: {dup}")
        bad = [n for n in names if not _IDENT_RE.fullmatch(n) or n in UNARY_FUNCS]
        if bad:
            raise ValueError(f"invalid variable names: {bad}")

    @property
    def names(self) -> tuple[str, ...]:
        return self.states + self.inputs + self.params

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __contains__(self, name) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def coerce(cls, space) -> "VariableSpace":
        if isinstance(space, VariableSpace):
            return space
        return cls(states=tuple(space))


_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, space: VariableSpace):
        self.tokens = _tokenize(text)
        self.i = 0
        self.space = space

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, off = self.take()
        if text != value or kind != "op":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", off)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text in ("-", "+"):
            self.take()
            inner = self.unary()
            return neg(inner) if text == "-" else inner
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        while self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            sign = 1
            kind, text, off = self.peek()
            if kind == "op" and text in ("+", "-"):
                self.take()
                sign = -1 if text == "-" else 1
                kind, text, off = self.peek()
            if kind != "num" or not text.isdigit():
                raise ExprSyntaxError("integer exponent required", off)
            self.take()
            e = power(e, sign * int(text))
        return e

    def atom(self) -> Expr:
        kind, text, off = self.take()
        if kind == "num":
            return const(float(text))
        if kind == "id":
            if text in UNARY_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _unary(text, arg)
            if text not in self.space:
                raise UnknownIdentifierError(text, off)
            return var(text)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", off)


def parse(text: str, space) -> Expr:
    """Parse infix ``text``; every identifier must belong to ``space``.

    ``space`` is a :class:`VariableSpace` or any collection of names.
    """
    return _Parser(text, VariableSpace.coerce(space)).parse()
