"""Expression trees for behavioral (B-source) circuit elements.

Expressions are built with ordinary Python operators over leaves that
reference node voltages, branch currents and simulation time::

    >>> from emtkit.expr import V, I, sin
    >>> e = 3 * V("n1") + sin(V("n2")) * I("Vs")

Every node knows its exact derivative, so a tree can be evaluated together
with its gradient (:meth:`Expr.evaluate`) or compiled into straight-line
Python for the transient engine (:func:`compile_exprs`).
"""

from __future__ import annotations

import math
from bisect import bisect_right
from typing import Callable, Iterable, Mapping, Sequence

from .errors import DomainError

# Arguments above this threshold continue exp() linearly so that evaluation
# stays finite on every finite input.
EXP_LIMIT = 200.0
# Denominators smaller in magnitude than this are replaced by +/-DIV_EPS.
DIV_EPS = 1e-12
# Floor applied to the argument of sqrt() for derivative evaluation.
SQRT_EPS = 1e-30

VarKey = tuple  # ("v", node) or ("i", branch)

GROUND_NAMES = frozenset({"0", "gnd", "ground"})


def _num(x) -> "Expr":
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float)):
        return Const(float(x))
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


def _fmt(x: float) -> str:
    return repr(float(x))


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return Add(self, _num(other))

    def __radd__(self, other):
        return Add(_num(other), self)

    def __sub__(self, other):
        return Sub(self, _num(other))

    def __rsub__(self, other):
        return Sub(_num(other), self)

    def __mul__(self, other):
        return Mul(self, _num(other))

    def __rmul__(self, other):
        return Mul(_num(other), self)

    def __truediv__(self, other):
        return Div(self, _num(other))

    def __rtruediv__(self, other):
        return Div(_num(other), self)

    def __neg__(self):
        return Neg(self)

    def __pos__(self):
        return self

    # -- structure --------------------------------------------------------
    def children(self) -> tuple["Expr", ...]:
        return ()

    def variables(self) -> set[VarKey]:
        """Unknowns (node voltages, branch currents) referenced by the tree."""
        out: set[VarKey] = set()
        stack = [self]
        while stack:
            e = stack.pop()
            if isinstance(e, (V, I)):
                k = e.key
                if k is not None:
                    out.add(k)
            stack.extend(e.children())
        return out

    def uses_time(self) -> bool:
        stack = [self]
        while stack:
            e = stack.pop()
            if isinstance(e, Time):
                return True
            stack.extend(e.children())
        return False

    def is_affine(self) -> bool:
        """True when the tree is affine in its unknowns and time-invariant."""
        return _degree(self) <= 1

    # -- evaluation -------------------------------------------------------
    def evaluate(self, env: Mapping[VarKey, float], t: float = 0.0) -> tuple[float, dict[VarKey, float]]:
        """Value and exact partial derivatives with respect to referenced unknowns."""
        return self._ev(env, t)

    def _ev(self, env, t):  # pragma: no cover - abstract
        raise NotImplementedError

    def _gen(self, cg: "_CodeGen"):  # pragma: no cover - abstract
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self._astuple() == other._astuple()

    def __hash__(self):
        return hash((type(self).__name__, self._astuple()))

    def _astuple(self):  # pragma: no cover - abstract
        raise NotImplementedError


def _degree(e: Expr) -> int:
    """Polynomial degree in the unknowns; 2 stands for 'nonlinear'."""
    if isinstance(e, Const):
        return 0
    if isinstance(e, (V, I)):
        return 0 if e.key is None else 1
    if isinstance(e, Time):
        return 2
    if isinstance(e, (Add, Sub)):
        return max(_degree(e.a), _degree(e.b))
    if isinstance(e, Neg):
        return _degree(e.a)
    if isinstance(e, Mul):
        return min(2, _degree(e.a) + _degree(e.b))
    if isinstance(e, Div):
        return _degree(e.a) if _degree(e.b) == 0 else 2
    return 0 if all(_degree(c) == 0 for c in e.children()) else 2


def _literal(code: str) -> float | None:
    try:
        return float(code)
    except ValueError:
        return None


class _CodeGen:
    """Straight-line code emitter with constant folding and common-subexpression reuse."""

    def __init__(self, index: Mapping[VarKey, int]):
        self.index = index
        self.lines: list[str] = []
        self.n = 0
        self.consts: dict[str, object] = {}
        self.leaf: dict[VarKey, str] = {}
        self.memo: dict[str, str] = {}
        self.nodes: dict[Expr, tuple[str, dict]] = {}

    def gen(self, e: Expr):
        hit = self.nodes.get(e)
        if hit is None:
            hit = self.nodes[e] = e._gen(self)
        return hit

    def tmp(self) -> str:
        self.n += 1
        return f"_t{self.n}"

    def emit(self, line: str) -> None:
        self.lines.append("    " + line)

    def let(self, rhs: str) -> str:
        """Name holding ``rhs``; literals and plain names are returned as is."""
        if _literal(rhs) is not None or rhs.isidentifier():
            return rhs
        name = self.memo.get(rhs)
        if name is None:
            name = self.memo[rhs] = self.tmp()
            self.emit(f"{name} = {rhs}")
        return name

    def mul(self, a: str, b: str) -> str:
        la, lb = _literal(a), _literal(b)
        if la is not None and lb is not None:
            return _fmt(la * lb)
        if la == 0.0 or lb == 0.0:
            return "0.0"
        if la == 1.0:
            return b
        if lb == 1.0:
            return a
        if la == -1.0:
            return self.neg(b)
        if lb == -1.0:
            return self.neg(a)
        return self.let(f"{a} * {b}")

    def add(self, a: str, b: str) -> str:
        la, lb = _literal(a), _literal(b)
        if la is not None and lb is not None:
            return _fmt(la + lb)
        if la == 0.0:
            return b
        if lb == 0.0:
            return a
        return self.let(f"{a} + {b}")

    def sub(self, a: str, b: str) -> str:
        la, lb = _literal(a), _literal(b)
        if la is not None and lb is not None:
            return _fmt(la - lb)
        if lb == 0.0:
            return a
        if la == 0.0:
            return self.neg(b)
        return self.let(f"{a} - {b}")

    def neg(self, a: str) -> str:
        la = _literal(a)
        if la is not None:
            return _fmt(-la)
        return self.let(f"-{a}")

    def const(self, obj) -> str:
        name = f"_k{len(self.consts)}"
        self.consts[name] = obj
        return name


# ---------------------------------------------------------------------------
# leaves


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = float(value)

    def _astuple(self):
        return (self.value,)

    def _ev(self, env, t):
        return self.value, {}

    def _gen(self, cg):
        return _fmt(self.value), {}

    def __str__(self):
        return _fmt(self.value)

    __repr__ = __str__


class V(Expr):
    """Voltage of a node with respect to ground."""

    __slots__ = ("node",)

    def __init__(self, node: str):
        self.node = str(node)

    @property
    def key(self):
        return None if self.node in GROUND_NAMES else ("v", self.node)

    def _astuple(self):
        return (self.node,)

    def _ev(self, env, t):
        k = self.key
        if k is None:
            return 0.0, {}
        return float(env[k]), {k: 1.0}

    def _gen(self, cg):
        k = self.key
        if k is None:
            return "0.0", {}
        if k not in cg.leaf:
            name = cg.tmp()
            cg.emit(f"{name} = x[{cg.index[k]}]")
            cg.leaf[k] = name
        return cg.leaf[k], {k: "1.0"}

    def __str__(self):
        return f"V({self.node})"

    __repr__ = __str__


class I(Expr):
    """Current through a branch-current element (voltage source, inductor, ...)."""

    __slots__ = ("branch",)

    def __init__(self, branch: str):
        self.branch = str(branch)

    @property
    def key(self):
        return ("i", self.branch)

    def _astuple(self):
        return (self.branch,)

    def _ev(self, env, t):
        k = self.key
        return float(env[k]), {k: 1.0}

    def _gen(self, cg):
        k = self.key
        if k not in cg.leaf:
            name = cg.tmp()
            cg.emit(f"{name} = x[{cg.index[k]}]")
            cg.leaf[k] = name
        return cg.leaf[k], {k: "1.0"}

    def __str__(self):
        return f"I({self.branch})"

    __repr__ = __str__


class Time(Expr):
    __slots__ = ()

    def _astuple(self):
        return ()

    def _ev(self, env, t):
        return float(t), {}

    def _gen(self, cg):
        return "t", {}

    def __str__(self):
        return "TIME"

    __repr__ = __str__


TIME = Time()


# ---------------------------------------------------------------------------
# arithmetic


def _merge(*pairs):
    """Linear combination of gradient dicts: pairs of (scale, grad)."""
    out: dict = {}
    for s, g in pairs:
        for k, d in g.items():
            out[k] = out.get(k, 0.0) + s * d
    return out


def _gmerge(cg, *pairs):
    """Codegen analogue of _merge: pairs of (scale-code or None, grad-code-dict)."""
    keys: list = []
    for _, g in pairs:
        for k in g:
            if k not in keys:
                keys.append(k)
    out = {}
    for k in keys:
        acc = "0.0"
        for s, g in pairs:
            if k in g:
                acc = cg.add(acc, g[k] if s is None else cg.mul(s, g[k]))
        out[k] = acc
    return out


class _Binary(Expr):
    __slots__ = ("a", "b")
    op = "?"

    def __init__(self, a: Expr, b: Expr):
        self.a = a
        self.b = b

    def children(self):
        return (self.a, self.b)

    def _astuple(self):
        return (self.a, self.b)

    def __str__(self):
        return f"({self.a} {self.op} {self.b})"

    __repr__ = __str__


class Add(_Binary):
    __slots__ = ()
    op = "+"

    def _ev(self, env, t):
        va, ga = self.a._ev(env, t)
        vb, gb = self.b._ev(env, t)
        return va + vb, _merge((1.0, ga), (1.0, gb))

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        vb, gb = cg.gen(self.b)
        return cg.add(va, vb), _gmerge(cg, (None, ga), (None, gb))


class Sub(_Binary):
    __slots__ = ()
    op = "-"

    def _ev(self, env, t):
        va, ga = self.a._ev(env, t)
        vb, gb = self.b._ev(env, t)
        return va - vb, _merge((1.0, ga), (-1.0, gb))

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        vb, gb = cg.gen(self.b)
        return cg.sub(va, vb), _gmerge(cg, (None, ga), ("-1.0", gb))


class Mul(_Binary):
    __slots__ = ()
    op = "*"

    def _ev(self, env, t):
        va, ga = self.a._ev(env, t)
        vb, gb = self.b._ev(env, t)
        return va * vb, _merge((vb, ga), (va, gb))

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        vb, gb = cg.gen(self.b)
        return cg.mul(va, vb), _gmerge(cg, (vb, ga), (va, gb))


def _guard(d: float, eps: float) -> float:
    if abs(d) >= eps:
        return d
    return eps if d >= 0.0 else -eps


class Div(_Binary):
    """Quotient with a guarded denominator (see :data:`DIV_EPS`)."""

    __slots__ = ("eps",)
    op = "/"

    def __init__(self, a, b, eps: float = DIV_EPS):
        super().__init__(a, b)
        self.eps = eps

    def _ev(self, env, t):
        va, ga = self.a._ev(env, t)
        vb, gb = self.b._ev(env, t)
        d = _guard(vb, self.eps)
        guarded = d != vb
        q = va / d
        return q, _merge((1.0 / d, ga), (0.0 if guarded else -q / d, gb))

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        vb, gb = cg.gen(self.b)
        d, q, s = cg.tmp(), cg.tmp(), cg.tmp()
        e = _fmt(self.eps)
        cg.emit(f"{d} = {vb} if abs({vb}) >= {e} else ({e} if {vb} >= 0.0 else -{e})")
        cg.emit(f"{q} = {va} / {d}")
        cg.emit(f"{s} = 0.0 if {d} != {vb} else -{q} / {d}")
        return q, _gmerge(cg, (cg.let(f"1.0 / {d}"), ga), (s, gb))


class Neg(Expr):
    __slots__ = ("a",)

    def __init__(self, a: Expr):
        self.a = a

    def children(self):
        return (self.a,)

    def _astuple(self):
        return (self.a,)

    def _ev(self, env, t):
        va, ga = self.a._ev(env, t)
        return -va, _merge((-1.0, ga))

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        return cg.neg(va), _gmerge(cg, ("-1.0", ga))

    def __str__(self):
        return f"(-{self.a})"

    __repr__ = __str__


# ---------------------------------------------------------------------------
# functions


def _explin(x: float) -> tuple[float, float]:
    if x <= EXP_LIMIT:
        e = math.exp(x)
        return e, e
    e = math.exp(EXP_LIMIT)
    return e * (1.0 + x - EXP_LIMIT), e


def _sqrt(x: float) -> tuple[float, float]:
    r = math.sqrt(x) if x > 0.0 else 0.0
    return r, 0.5 / math.sqrt(max(x, SQRT_EPS))


class _Unary(Expr):
    __slots__ = ("a",)
    fname = "?"

    def __init__(self, a: Expr):
        self.a = a

    def children(self):
        return (self.a,)

    def _astuple(self):
        return (self.a,)

    def __str__(self):
        return f"{self.fname}({self.a})"

    __repr__ = __str__

    def _f(self, x):  # value, derivative
        raise NotImplementedError

    def _ev(self, env, t):
        va, ga = self.a._ev(env, t)
        f, df = self._f(va)
        return f, _merge((df, ga))

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        v, d = cg.tmp(), cg.tmp()
        fn = cg.const(self._f)
        cg.emit(f"{v}, {d} = {fn}({va})")
        return v, _gmerge(cg, (d, ga))


class Sin(_Unary):
    __slots__ = ()
    fname = "sin"

    def _f(self, x):
        return math.sin(x), math.cos(x)

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        v = cg.let(f"_sin({va})")
        if not ga:
            return v, {}
        return v, _gmerge(cg, (cg.let(f"_cos({va})"), ga))


class Cos(_Unary):
    __slots__ = ()
    fname = "cos"

    def _f(self, x):
        return math.cos(x), -math.sin(x)

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        v = cg.let(f"_cos({va})")
        if not ga:
            return v, {}
        return v, _gmerge(cg, (cg.neg(cg.let(f"_sin({va})")), ga))


class Exp(_Unary):
    __slots__ = ()
    fname = "exp"

    def _f(self, x):
        return _explin(x)


class Sqrt(_Unary):
    __slots__ = ()
    fname = "sqrt"

    def _f(self, x):
        return _sqrt(x)


class _Extremum(Expr):
    __slots__ = ("args",)
    fname = "?"

    def __init__(self, *args):
        if len(args) < 2:
            raise ValueError(f"{self.fname}() needs at least two arguments")
        self.args = tuple(_num(a) for a in args)

    def children(self):
        return self.args

    def _astuple(self):
        return self.args

    def __str__(self):
        return f"{self.fname}(" + ", ".join(str(a) for a in self.args) + ")"

    __repr__ = __str__

    def _better(self, a, b) -> bool:
        raise NotImplementedError

    def _ev(self, env, t):
        best_v, best_g = self.args[0]._ev(env, t)
        for a in self.args[1:]:
            v, g = a._ev(env, t)
            if self._better(v, best_v):
                best_v, best_g = v, g
        return best_v, dict(best_g)

    def _gen(self, cg):
        # first argument wins ties, like the interpreter
        evs = [cg.gen(a) for a in self.args]
        keys = []
        for _, g in evs:
            keys.extend(k for k in g if k not in keys)
        v = cg.tmp()
        ds = {k: cg.tmp() for k in keys}
        v0, g0 = evs[0]
        cg.emit(f"{v} = {v0}")
        for k in keys:
            cg.emit(f"{ds[k]} = {g0.get(k, '0.0')}")
        cmp = "<" if self.fname == "min" else ">"
        for vi, gi in evs[1:]:
            cg.emit(f"if {vi} {cmp} {v}:")
            cg.emit(f"    {v} = {vi}")
            for k in keys:
                cg.emit(f"    {ds[k]} = {gi.get(k, '0.0')}")
        return v, ds


class Min(_Extremum):
    __slots__ = ()
    fname = "min"

    def _better(self, a, b):
        return a < b


class Max(_Extremum):
    __slots__ = ()
    fname = "max"

    def _better(self, a, b):
        return a > b


class Clamp(Expr):
    """``x`` limited to ``[lo, hi]``; derivative 1 inside (bounds inclusive), 0 outside."""

    __slots__ = ("a", "lo", "hi")

    def __init__(self, a: Expr, lo: float, hi: float):
        if not lo < hi:
            raise ValueError(f"clamp needs lo < hi, got {lo}, {hi}")
        self.a = _num(a)
        self.lo = float(lo)
        self.hi = float(hi)

    def children(self):
        return (self.a,)

    def _astuple(self):
        return (self.a, self.lo, self.hi)

    def _ev(self, env, t):
        va, ga = self.a._ev(env, t)
        if va < self.lo:
            return self.lo, {}
        if va > self.hi:
            return self.hi, {}
        return va, dict(ga)

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        v, s = cg.tmp(), cg.tmp()
        lo, hi = _fmt(self.lo), _fmt(self.hi)
        cg.emit(f"{v} = {lo} if {va} < {lo} else ({hi} if {va} > {hi} else {va})")
        cg.emit(f"{s} = 1.0 if {lo} <= {va} <= {hi} else 0.0")
        return v, _gmerge(cg, (s, ga))

    def __str__(self):
        return f"clamp({self.a}, {_fmt(self.lo)}, {_fmt(self.hi)})"

    __repr__ = __str__


class Table(Expr):
    """Piecewise-linear lookup ``y(x)`` over strictly increasing breakpoints."""

    __slots__ = ("a", "xs", "ys", "extrapolate")

    def __init__(self, a: Expr, xs: Sequence[float], ys: Sequence[float], extrapolate: bool = True):
        xs = tuple(float(x) for x in xs)
        ys = tuple(float(y) for y in ys)
        if len(xs) < 2 or len(xs) != len(ys):
            raise ValueError("table needs at least two (x, y) pairs of equal length")
        if any(b <= a_ for a_, b in zip(xs, xs[1:])):
            raise ValueError("table breakpoints must be strictly increasing")
        self.a = _num(a)
        self.xs = xs
        self.ys = ys
        self.extrapolate = bool(extrapolate)

    def children(self):
        return (self.a,)

    def _astuple(self):
        return (self.a, self.xs, self.ys, self.extrapolate)

    def lookup(self, x: float) -> tuple[float, float]:
        xs, ys = self.xs, self.ys
        if (x < xs[0] or x > xs[-1]) and not self.extrapolate:
            raise DomainError(f"table lookup at {x!r} outside [{xs[0]!r}, {xs[-1]!r}]")
        k = min(max(bisect_right(xs, x) - 1, 0), len(xs) - 2)
        slope = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
        return ys[k] + slope * (x - xs[k]), slope

    def _ev(self, env, t):
        va, ga = self.a._ev(env, t)
        y, s = self.lookup(va)
        return y, _merge((s, ga))

    def _gen(self, cg):
        va, ga = cg.gen(self.a)
        v, d = cg.tmp(), cg.tmp()
        fn = cg.const(self.lookup)
        cg.emit(f"{v}, {d} = {fn}({va})")
        return v, _gmerge(cg, (d, ga))

    def __str__(self):
        pts = ", ".join(f"{_fmt(x)}, {_fmt(y)}" for x, y in zip(self.xs, self.ys))
        flag = "" if self.extrapolate else ", noextrap"
        return f"table({self.a}, {pts}{flag})"

    __repr__ = __str__


def sin(x) -> Expr:
    return Sin(_num(x))


def cos(x) -> Expr:
    return Cos(_num(x))


def exp(x) -> Expr:
    return Exp(_num(x))


def sqrt(x) -> Expr:
    return Sqrt(_num(x))


def minimum(*args) -> Expr:
    return Min(*args)


def maximum(*args) -> Expr:
    return Max(*args)


def clamp(x, lo: float, hi: float) -> Expr:
    return Clamp(_num(x), lo, hi)


def table(x, xs, ys, extrapolate: bool = True) -> Expr:
    return Table(_num(x), xs, ys, extrapolate)


def const(x: float) -> Expr:
    return Const(x)


# ---------------------------------------------------------------------------
# compilation


def affine_coefficients(expr: Expr) -> tuple[float, dict[VarKey, float]]:
    """Offset and constant partials of an affine expression."""
    if not expr.is_affine():
        raise ValueError(f"expression is not affine: {expr}")
    keys = expr.variables()
    value, grad = expr.evaluate({k: 0.0 for k in keys})
    return value, grad


def compile_exprs(exprs: Sequence[Expr], index: Mapping[VarKey, int]) -> tuple[Callable, list[list[tuple[VarKey, int]]]]:
    """Compile expressions into one function ``fn(x, t, f, jv)``.

    ``f[k]`` receives the value of ``exprs[k]``; ``jv`` receives the partial
    derivatives, flattened in the order given by the returned ``layout``:
    ``layout[k]`` lists ``(var, slot)`` pairs for expression ``k``.
    """
    cg = _CodeGen(index)
    layout: list[list[tuple[VarKey, int]]] = []
    slot = 0
    for k, e in enumerate(exprs):
        v, g = cg.gen(e)
        cg.emit(f"f[{k}] = {v}")
        entries = []
        for var in sorted(e.variables()):
            d = g.get(var, "0.0")
            cg.emit(f"jv[{slot}] = {d}")
            entries.append((var, slot))
            slot += 1
        layout.append(entries)
    src = "def _fn(x, t, f, jv):\n" + ("\n".join(cg.lines) if cg.lines else "    pass") + "\n"
    ns: dict = {"_sin": math.sin, "_cos": math.cos, **cg.consts}
    exec(compile(src, "<emtkit-expr>", "exec"), ns)
    fn = ns["_fn"]
    fn.source = src
    fn.n_partials = slot
    return fn, layout


def all_variables(exprs: Iterable[Expr]) -> set[VarKey]:
    out: set[VarKey] = set()
    for e in exprs:
        out |= e.variables()
    return out
