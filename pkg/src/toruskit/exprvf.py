"""Textual vector fields: parsing, forward-mode differentiation, ODE families.

Expressions use infix syntax with ``+ - * / ^`` (``^`` binds tightest and is
right-associative, unary minus binds looser than ``^``) and the functions
``sin cos exp log sqrt abs``. There is no implicit multiplication.

Trees are compiled to straight-line numpy code that propagates dual-number
tangents alongside values, so Jacobians are exact rather than finite
differences.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigError, DomainError, ExprSyntaxError, UnknownSymbol

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")


# -- expression trees --------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    arg: "ExprTree"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "ExprTree"
    right: "ExprTree"


ExprTree = Const | Var | Unary | Binary


def symbols(tree: ExprTree) -> set[str]:
    if isinstance(tree, Var):
        return {tree.name}
    if isinstance(tree, Unary):
        return symbols(tree.arg)
    if isinstance(tree, Binary):
        return symbols(tree.left) | symbols(tree.right)
    return set()


def to_source(tree: ExprTree) -> str:
    """Fully parenthesised source that parses back to an equivalent tree."""
    if isinstance(tree, Const):
        return repr(float(tree.value))
    if isinstance(tree, Var):
        return tree.name
    if isinstance(tree, Unary):
        if tree.op == "neg":
            return f"(-{to_source(tree.arg)})"
        return f"{tree.op}({to_source(tree.arg)})"
    return f"({to_source(tree.left)} {tree.op} {to_source(tree.right)})"


# -- parser -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            stripped = len(source[pos:]) - len(source[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {source[pos + stripped]!r}",
                                  pos + stripped)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source, allowed):
        self.tokens = _tokenize(source)
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            what = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", pos)

    def parse(self):
        tree = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return tree

    def expr(self):
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = Binary(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = Binary(op, left, self.unary())
        return left

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Unary("neg", self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(text, arg)
            if self.allowed is not None and text not in self.allowed:
                raise UnknownSymbol(text, pos)
            return Var(text)
        if kind == "op" and text == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", pos)


def parse_expr(source: str, allowed_symbols: Iterable[str] | None = None) -> ExprTree:
    """Parse ``source`` into an expression tree.

    Raises ExprSyntaxError (with a character position) on malformed input and
    UnknownSymbol for identifiers outside ``allowed_symbols``.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    allowed = None if allowed_symbols is None else set(allowed_symbols)
    return _Parser(source, allowed).parse()


# -- interpretive evaluation --------------------------------------------------

class Dual:
    """Value with a tangent vector; arithmetic follows the chain rule."""

    __slots__ = ("val", "der")

    def __init__(self, val, der):
        self.val = float(val)
        self.der = np.asarray(der, dtype=float)


def _lift(a, size):
    return a if isinstance(a, Dual) else Dual(a, np.zeros(size))


def _dual_apply(op, a, b=None):
    if b is None:
        v, d = a.val, a.der
        if op == "neg":
            return Dual(-v, -d)
        if op == "sin":
            return Dual(math.sin(v), math.cos(v) * d)
        if op == "cos":
            return Dual(math.cos(v), -math.sin(v) * d)
        if op == "exp":
            e = math.exp(v)
            return Dual(e, e * d)
        if op == "log":
            if v <= 0:
                raise DomainError(f"log of non-positive value {v}")
            return Dual(math.log(v), d / v)
        if op == "sqrt":
            if v < 0 or (v == 0 and np.any(d)):
                raise DomainError(f"sqrt at {v}")
            s = math.sqrt(v)
            return Dual(s, d / (2 * s) if s else d * 0.0)
        if op == "abs":
            return Dual(abs(v), math.copysign(1.0, v) * d)
        raise ValueError(op)
    if op == "+":
        return Dual(a.val + b.val, a.der + b.der)
    if op == "-":
        return Dual(a.val - b.val, a.der - b.der)
    if op == "*":
        return Dual(a.val * b.val, a.der * b.val + a.val * b.der)
    if op == "/":
        if b.val == 0:
            raise DomainError("division by zero")
        q = a.val / b.val
        return Dual(q, (a.der - q * b.der) / b.val)
    if op == "^":
        p = _real_pow(a.val, b.val)
        if not np.any(b.der):
            dp = b.val * _real_pow(a.val, b.val - 1) if np.any(a.der) else 0.0
            return Dual(p, dp * a.der)
        if a.val <= 0:
            raise DomainError("variable exponent on non-positive base")
        return Dual(p, p * (b.der * math.log(a.val) + b.val * a.der / a.val))
    raise ValueError(op)


def _real_pow(a, b):
    if a == 0 and b < 0:
        raise DomainError("zero to a negative power")
    if a < 0 and b != int(b):
        raise DomainError("negative base with non-integer exponent")
    try:
        return float(a) ** float(b)
    except OverflowError:
        return math.inf


def evaluate(tree: ExprTree, env: Mapping[str, float | Dual]):
    """Evaluate a tree; values in ``env`` may be floats or Dual numbers."""
    size = next((len(v.der) for v in env.values() if isinstance(v, Dual)), None)
    return _eval(tree, env, size)


def _eval(tree, env, size):
    if isinstance(tree, Const):
        return tree.value if size is None else Dual(tree.value, np.zeros(size))
    if isinstance(tree, Var):
        try:
            v = env[tree.name]
        except KeyError:
            raise UnknownSymbol(tree.name) from None
        return v if size is None else _lift(v, size)
    if isinstance(tree, Unary):
        a = _eval(tree.arg, env, size)
        if size is None:
            return _dual_apply(tree.op, Dual(a, ())).val
        return _dual_apply(tree.op, a)
    a = _eval(tree.left, env, size)
    b = _eval(tree.right, env, size)
    if size is None:
        return _dual_apply(tree.op, Dual(a, ()), Dual(b, ())).val
    return _dual_apply(tree.op, a, b)


# -- compilation to numpy code ------------------------------------------------

class _Emitter:
    """Generates straight-line code carrying sparse tangents per node."""

    def __init__(self, var_slots: Mapping[str, str], diff_keys: Mapping[str, int]):
        self.lines: list[str] = []
        self.n = 0
        self.var_slots = var_slots
        self.diff_keys = diff_keys
        self.memo: dict = {}

    def tmp(self, expr):
        name = f"_v{self.n}"
        self.n += 1
        self.lines.append(f"{name} = {expr}")
        return name

    def emit(self, tree):
        """Return (value_name, {diff_index: tangent_name}); shared subtrees are emitted once."""
        if isinstance(tree, (Unary, Binary)):
            if tree not in self.memo:
                self.memo[tree] = self._emit(tree)
            return self.memo[tree]
        return self._emit(tree)

    def _emit(self, tree):
        if isinstance(tree, Const):
            return repr(float(tree.value)), {}
        if isinstance(tree, Var):
            slot = self.var_slots[tree.name]
            if tree.name in self.diff_keys:
                return slot, {self.diff_keys[tree.name]: "1.0"}
            return slot, {}
        if isinstance(tree, Unary):
            v, d = self.emit(tree.arg)
            return self._unary(tree.op, v, d)
        a, da = self.emit(tree.left)
        b, db = self.emit(tree.right)
        return self._binary(tree.op, a, da, b, db)

    def _scale(self, factor, d):
        return {k: self.tmp(f"{factor} * {t}") for k, t in d.items()}

    def _unary(self, op, v, d):
        if op == "neg":
            return self.tmp(f"-{v}"), {k: self.tmp(f"-{t}") for k, t in d.items()}
        if op == "sin":
            out = self.tmp(f"_sin({v})")
            return out, (self._scale(self.tmp(f"_cos({v})"), d) if d else {})
        if op == "cos":
            out = self.tmp(f"_cos({v})")
            return out, (self._scale(self.tmp(f"-_sin({v})"), d) if d else {})
        if op == "exp":
            out = self.tmp(f"_exp({v})")
            return out, self._scale(out, d)
        if op == "log":
            out = self.tmp(f"_log({v})")
            return out, {k: self.tmp(f"{t} / {v}") for k, t in d.items()}
        if op == "sqrt":
            out = self.tmp(f"_sqrt({v})")
            return out, {k: self.tmp(f"{t} / (2.0 * {out})") for k, t in d.items()}
        if op == "abs":
            out = self.tmp(f"_abs({v})")
            return out, (self._scale(self.tmp(f"_sign({v})"), d) if d else {})
        raise ValueError(op)

    def _binary(self, op, a, da, b, db):
        keys = sorted(set(da) | set(db))
        if op in "+-":
            out = self.tmp(f"{a} {op} {b}")
            d = {}
            for k in keys:
                if k in da and k in db:
                    d[k] = self.tmp(f"{da[k]} {op} {db[k]}")
                elif k in da:
                    d[k] = da[k]
                else:
                    d[k] = db[k] if op == "+" else self.tmp(f"-{db[k]}")
            return out, d
        if op == "*":
            out = self.tmp(f"{a} * {b}")
            d = {}
            for k in keys:
                terms = []
                if k in da:
                    terms.append(f"{da[k]} * {b}")
                if k in db:
                    terms.append(f"{a} * {db[k]}")
                d[k] = self.tmp(" + ".join(terms))
            return out, d
        if op == "/":
            out = self.tmp(f"{a} / {b}")
            d = {}
            for k in keys:
                num = da.get(k, "0.0")
                if k in db:
                    num = f"({num} - {out} * {db[k]})"
                d[k] = self.tmp(f"{num} / {b}")
            return out, d
        if op == "^":
            if not db and b in ("2.0", "3.0"):
                # small integer powers as products: cheaper and exact
                out = self.tmp(f"{a} * {a}" if b == "2.0" else f"{a} * {a} * {a}")
                if not da:
                    return out, {}
                fac = self.tmp(f"2.0 * {a}" if b == "2.0" else f"3.0 * {a} * {a}")
                return out, self._scale(fac, da)
            if not db:
                out = self.tmp(f"_pow({a}, {b})")
                if not da:
                    return out, {}
                fac = self.tmp(f"{b} * _pow({a}, {b} - 1.0)")
                return out, self._scale(fac, da)
            out = self.tmp(f"_pow({a}, {b})")
            lg = self.tmp(f"_log({a})")
            d = {}
            for k in keys:
                terms = []
                if k in db:
                    terms.append(f"{db[k]} * {lg}")
                if k in da:
                    terms.append(f"{b} * {da[k]} / {a}")
                d[k] = self.tmp(f"{out} * ({' + '.join(terms)})")
            return out, d
        raise ValueError(op)


_NAMESPACE = {
    "_sin": np.sin, "_cos": np.cos, "_exp": np.exp, "_log": np.log,
    "_sqrt": np.sqrt, "_abs": np.abs, "_sign": np.sign, "_pow": np.power,
    "np": np,
}


def _substitute(tree: ExprTree, constants: Mapping[str, float]) -> ExprTree:
    if isinstance(tree, Var) and tree.name in constants:
        return Const(float(constants[tree.name]))
    if isinstance(tree, Unary):
        return Unary(tree.op, _substitute(tree.arg, constants))
    if isinstance(tree, Binary):
        return Binary(tree.op, _substitute(tree.left, constants),
                      _substitute(tree.right, constants))
    return tree


def compile_field(trees, state_names, constants=None) -> Callable:
    """Compile component trees into ``f(t, x, mu, eps, want) -> tuple``.

    ``x`` has shape (..., n). ``want`` selects outputs: "f" returns the
    values, "fj" values and Jacobian, "fjm" additionally d/dmu.
    Arrays broadcast over the leading batch axes of ``x`` and over ``t``.
    """
    constants = dict(constants or {})
    n = len(state_names)
    slots = {name: f"_x{i}" for i, name in enumerate(state_names)}
    slots.update(t="t", mu="mu", eps="eps")
    diff_keys = {name: i for i, name in enumerate(state_names)}
    diff_keys["mu"] = n
    em = _Emitter(slots, diff_keys)
    outs = [em.emit(_substitute(tr, constants)) for tr in trees]

    body = [f"_x{i} = x[..., {i}]" for i in range(n)]
    body += em.lines
    body.append("shape = np.broadcast_shapes(x.shape[:-1], np.shape(t))")
    body.append(f"F = np.empty(shape + ({len(trees)},))")
    for i, (v, _) in enumerate(outs):
        body.append(f"F[..., {i}] = {v}")
    body.append("if want == 'f':\n        return (F,)")
    body.append(f"J = np.zeros(shape + ({len(trees)}, {n}))")
    for i, (_, d) in enumerate(outs):
        for k, tname in d.items():
            if k < n:
                body.append(f"J[..., {i}, {k}] = {tname}")
    body.append("if want == 'fj':\n        return F, J")
    body.append(f"M = np.zeros(shape + ({len(trees)},))")
    for i, (_, d) in enumerate(outs):
        if n in d:
            body.append(f"M[..., {i}] = {d[n]}")
    body.append("return F, J, M")
    src = "def _field(t, x, mu, eps, want):\n    " + "\n    ".join(body) + "\n"
    ns = dict(_NAMESPACE)
    exec(compile(src, "<toruskit-field>", "exec"), ns)
    raw = ns["_field"]

    def field(t, x, mu, eps=0.0, want="f"):
        x = np.asarray(x, dtype=float)
        try:
            with np.errstate(divide="raise", invalid="raise", over="ignore"):
                return raw(t, x, mu, eps, want)
        except (FloatingPointError, ZeroDivisionError, ValueError) as exc:
            raise DomainError(f"field evaluation failed: {exc}") from None

    field.source = src
    return field


# -- periodicity rule -----------------------------------------------------------

def _affine_in_t(tree, constants):
    """Return (coefficient, ok) if ``tree`` is c*t + (t-free); ok False otherwise."""
    if "t" not in symbols(tree):
        return 0.0, True
    if isinstance(tree, Var):
        return 1.0, True
    if isinstance(tree, Unary) and tree.op == "neg":
        c, ok = _affine_in_t(tree.arg, constants)
        return -c, ok
    if isinstance(tree, Binary):
        if tree.op in "+-":
            c1, ok1 = _affine_in_t(tree.left, constants)
            c2, ok2 = _affine_in_t(tree.right, constants)
            return (c1 + c2 if tree.op == "+" else c1 - c2), ok1 and ok2
        if tree.op in "*/":
            lt = "t" in symbols(tree.left)
            rt = "t" in symbols(tree.right)
            if lt and rt:
                return 0.0, False
            if tree.op == "/" and rt:
                return 0.0, False
            inner, factor = (tree.left, tree.right) if lt else (tree.right, tree.left)
            k = _numeric(factor, constants)
            if k is None:
                return 0.0, False
            c, ok = _affine_in_t(inner, constants)
            return (c * k if tree.op == "*" else c / k), ok
    return 0.0, False


def _numeric(tree, constants):
    if symbols(tree) - set(constants):
        return None
    try:
        return float(evaluate(tree, dict(constants)))
    except DomainError:
        return None


def check_periodic(tree: ExprTree, period: float, constants: Mapping[str, float]) -> bool:
    """True iff ``t`` occurs only inside sin/cos of c*t + phase with c*T/2pi integral."""
    if "t" not in symbols(tree):
        return True
    if isinstance(tree, Var):
        return False
    if isinstance(tree, Unary):
        if tree.op in ("sin", "cos"):
            c, ok = _affine_in_t(tree.arg, constants)
            if ok:
                m = c * period / (2 * math.pi)
                return abs(m - round(m)) <= 1e-9 * max(1.0, abs(m))
        return check_periodic(tree.arg, period, constants)
    return (check_periodic(tree.left, period, constants)
            and check_periodic(tree.right, period, constants))


# -- vector field families ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VectorFieldDef:
    """Parsed ODE family.

    ``kind == "autonomous"``: ``fields[0]`` holds F(x, mu).
    ``kind == "periodic"``: ``fields[i-1]`` holds F_i(t, x, mu), i = 1..order_k, and
    ``f_tilde`` the optional remainder F~(t, x, mu, eps); the right-hand side is
    sum eps^i F_i + eps^(k+1) F~.
    """

    dimension: int
    kind: str
    fields: tuple
    period: float | None = None
    order_k: int = 1
    f_tilde: tuple | None = None
    constants: Mapping[str, float] = field(default_factory=dict)
    _compiled: tuple = field(init=False, repr=False)
    _compiled_full: Callable | None = field(init=False, repr=False)

    def __post_init__(self):
        names = self.state_names
        comp = tuple(compile_field(f, names, self.constants) for f in self.fields)
        object.__setattr__(self, "_compiled", comp)
        full = None
        if self.kind == "periodic":
            full = compile_field(self._series_trees(), names, self.constants)
        object.__setattr__(self, "_compiled_full", full)

    def _series_trees(self):
        """sum eps^i F_i + eps^(k+1) F~ as one tree per component, so shared subtrees compile once."""
        def power(i):
            out = Var("eps")
            for _ in range(i - 1):
                out = Binary("*", out, Var("eps"))
            return out

        orders = list(enumerate(self.fields, start=1))
        if self.f_tilde is not None:
            orders.append((self.order_k + 1, self.f_tilde))
        trees = []
        for j in range(self.dimension):
            total = None
            for i, comps in orders:
                term = Binary("*", power(i), comps[j])
                total = term if total is None else Binary("+", total, term)
            trees.append(total)
        return tuple(trees)

    @property
    def state_names(self):
        return tuple(f"x{i + 1}" for i in range(self.dimension))

    @property
    def is_periodic(self):
        return self.kind == "periodic"

    def term(self, i, t, x, mu, want="f"):
        """Order-``i`` term F_i (periodic) or F (autonomous, i = 1)."""
        return self._compiled[i - 1](t, x, mu, 0.0, want)

    def rhs(self, t, x, mu, eps=0.0, want="f"):
        """Full right-hand side with optional Jacobian ("fj") and d/dmu ("fjm")."""
        if not self.is_periodic:
            return self._compiled[0](t, x, mu, eps, want)
        return self._compiled_full(t, x, mu, eps, want)


def eval_jacobian(vf: VectorFieldDef, point, t=0.0, mu=0.0, eps=0.0, wrt_mu=False):
    """Exact state Jacobian of the full field at ``point``; with ``wrt_mu`` also d/dmu."""
    point = np.asarray(point, dtype=float)
    if point.shape[-1] != vf.dimension:
        raise ValueError(f"point has length {point.shape[-1]}, expected {vf.dimension}")
    if wrt_mu:
        _, J, M = vf.rhs(t, point, mu, eps, want="fjm")
        return J, M
    return vf.rhs(t, point, mu, eps, want="fj")[1]


# -- loading ------------------------------------------------------------------------

_SYSTEM_KEYS = {"dimension", "kind", "period", "order_k", "fields", "f_tilde", "constants"}


def _parse_component(src, allowed, where):
    if not isinstance(src, str):
        raise ConfigError(f"{where}: expected an expression string, got {src!r}")
    try:
        return parse_expr(src, allowed)
    except (ExprSyntaxError, UnknownSymbol) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def system_from_dict(spec: Mapping) -> VectorFieldDef:
    """Build a VectorFieldDef from the JSON system-definition mapping."""
    unknown = set(spec) - _SYSTEM_KEYS
    if unknown:
        raise ConfigError(f"unknown system keys: {sorted(unknown)}")
    try:
        n = int(spec["dimension"])
        kind = spec["kind"]
        raw_fields = spec["fields"]
    except KeyError as exc:
        raise ConfigError(f"missing system key {exc.args[0]!r}") from None
    if n < 2:
        raise ConfigError("dimension must be at least 2")
    if kind not in ("autonomous", "periodic"):
        raise ConfigError(f"kind must be 'autonomous' or 'periodic', got {kind!r}")
    constants = {str(k): float(v) for k, v in (spec.get("constants") or {}).items()}
    states = [f"x{i + 1}" for i in range(n)]
    clash = set(constants) & (set(states) | {"t", "mu", "eps"} | set(FUNCTIONS))
    if clash:
        raise ConfigError(f"constants shadow reserved names: {sorted(clash)}")
    if not isinstance(raw_fields, list) or not all(isinstance(r, list) for r in raw_fields):
        raise ConfigError("'fields' must be an array of arrays of strings")

    if kind == "autonomous":
        if len(raw_fields) != 1:
            raise ConfigError("autonomous systems take exactly one field array")
        allowed = set(states) | {"mu"} | set(constants)
        period, k, tilde = None, 1, None
    else:
        try:
            period = float(spec["period"])
            k = int(spec["order_k"])
        except KeyError as exc:
            raise ConfigError(f"periodic systems need {exc.args[0]!r}") from None
        if not period > 0:
            raise ConfigError("period must be positive")
        if k < 1 or len(raw_fields) != k:
            raise ConfigError(f"order_k = {k} but {len(raw_fields)} field arrays given")
        allowed = set(states) | {"t", "mu"} | set(constants)
        tilde = spec.get("f_tilde")

    parsed = []
    for i, comps in enumerate(raw_fields, start=1):
        if len(comps) != n:
            raise ConfigError(f"fields[{i - 1}] has {len(comps)} components, expected {n}")
        parsed.append(tuple(_parse_component(s, allowed, f"fields[{i - 1}][{j}]")
                            for j, s in enumerate(comps)))
    tilde_trees = None
    if tilde is not None:
        if len(tilde) != n:
            raise ConfigError(f"f_tilde has {len(tilde)} components, expected {n}")
        tilde_trees = tuple(_parse_component(s, allowed | {"eps"}, f"f_tilde[{j}]")
                            for j, s in enumerate(tilde))
    if kind == "periodic":
        for i, comps in enumerate(parsed, start=1):
            for j, tree in enumerate(comps):
                if not check_periodic(tree, period, constants):
                    raise ConfigError(f"fields[{i - 1}][{j}] is not syntactically "
                                      f"{period}-periodic in t")
        for j, tree in enumerate(tilde_trees or ()):
            if not check_periodic(tree, period, constants):
                raise ConfigError(f"f_tilde[{j}] is not syntactically periodic in t")
    return VectorFieldDef(dimension=n, kind=kind, fields=tuple(parsed), period=period,
                          order_k=k, f_tilde=tilde_trees, constants=constants)


def load_system(path) -> VectorFieldDef:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return system_from_dict(spec)
