"""Workload language: a tiny deterministic multithreaded program format.

Statement forms (semicolon-terminated except blocks):

    memory x = 0;                 # shared-memory cell declaration (top level)
    param N = 4;                  # integer parameter, overridable per run
    thread { ... }                # one thread body
    threads <n> { ... }           # n copies of a body; $I is the copy index
    repeat <n> with B { ... }     # n copies of a group of thread decls
    compute <n>;                  # burn n units of virtual time
    lock m @3[10,12];             # acquire; @site optional (defaults to line)
    unlock m;
    read x -> r1;                 # load shared cell into a thread register
    write x = r1 add 2;           # store const | reg | reg add/sub operand
    if r1 == 0 { ... } else { ... }
    loop <n> { ... }
    marker begin;                 # named no-op, shows up in traces

``$NAME`` / ``${expr}`` substitute integers from params and repeat/copy
indices; inside identifiers they template names (``x$I`` -> ``x0``, ``x1``,
...), which is how replicated threads get private cells or locks. ``#``
starts a comment.

Static discipline enforced after expansion: locks are block-balanced on
every path (UNBALANCED_LOCK) and registers are loaded before use on every
path (UNBOUND_REGISTER).
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field

from .errors import UnbalancedLockError, UnboundRegisterError, WorkloadSyntaxError
from .model import Site

__all__ = [
    "WorkloadProgram",
    "parse_workload",
    "Compute", "Lock", "Unlock", "Read", "Write", "If", "Loop", "Marker",
]


# --- concrete (post-expansion) statement forms ------------------------------

@dataclass
class Compute:
    cost: int


@dataclass
class Lock:
    lock: str
    site: Site


@dataclass
class Unlock:
    lock: str


@dataclass
class Read:
    addr: str
    reg: str


@dataclass
class Write:
    addr: str
    valexpr: tuple  # ("const", k) | ("copy"|"add"|"sub", a, b)


@dataclass
class If:
    reg: str
    cmp: str
    rhs: int
    then: list
    els: list


@dataclass
class Loop:
    count: int
    body: list


@dataclass
class Marker:
    name: str


@dataclass
class WorkloadProgram:
    memory: dict[str, int]
    threads: list[list]  # thread bodies, tid = position
    params: dict[str, int] = field(default_factory=dict)

    @property
    def n_threads(self) -> int:
        return len(self.threads)


# --- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<arrow>->)
  | (?P<cmp>==|!=|<=|>=|<|>)
  | (?P<int>-?\d+)
  | (?P<name>(?:[A-Za-z_][A-Za-z0-9_]*|\$\{[^}]*\}|\$[A-Za-z_][A-Za-z0-9_]*)+)
  | (?P<punct>[{}();=@\[\],])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str  # "name" | "int" | "punct" | "cmp" | "arrow"
    text: str
    line: int


def _tokenize(src: str) -> list[_Tok]:
    toks, pos, line = [], 0, 1
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m:
            raise WorkloadSyntaxError(f"unexpected character {src[pos]!r}", line=line)
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, text, line))
        line += text.count("\n")
        pos = m.end()
    return toks


# --- template pieces ----------------------------------------------------------

_PIECE_RE = re.compile(r"\$\{([^}]*)\}|\$([A-Za-z_][A-Za-z0-9_]*)")

_ALLOWED_AST = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load,
    ast.Add, ast.Sub, ast.Mult, ast.FloorDiv, ast.Div, ast.Mod, ast.USub, ast.UAdd,
)


def _eval_expr(expr: str, env: dict[str, int], line: int) -> int:
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise WorkloadSyntaxError(f"bad expression {expr!r}: {exc.msg}", line=line) from exc
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_AST):
            raise WorkloadSyntaxError(
                f"expression {expr!r} uses unsupported syntax ({type(node).__name__})", line=line)
        if isinstance(node, ast.Constant) and not isinstance(node.value, int):
            raise WorkloadSyntaxError(f"non-integer constant in {expr!r}", line=line)
        if isinstance(node, ast.Name) and node.id not in env:
            raise WorkloadSyntaxError(f"unknown parameter {node.id!r} in {expr!r}", line=line)
    val = eval(compile(tree, "<expr>", "eval"), {"__builtins__": {}}, dict(env))
    if isinstance(val, float):
        val = int(val)
    return val


def _subst_name(template: str, env: dict[str, int], line: int) -> str:
    """Expand $X / ${...} pieces embedded in an identifier."""
    def repl(m: re.Match) -> str:
        expr = m.group(1) if m.group(1) is not None else m.group(2)
        return str(_eval_expr(expr, env, line))
    return _PIECE_RE.sub(repl, template)


def _int_value(tok: _Tok, env: dict[str, int]) -> int:
    if tok.kind == "int":
        return int(tok.text)
    return _eval_expr(_subst_name(tok.text, env, tok.line) if "$" in tok.text else tok.text,
                      env, tok.line)


# --- parser (to a template AST, then expanded) --------------------------------

@dataclass
class _TStmt:
    form: str
    line: int
    args: dict


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self) -> _Tok:
        tok = self.peek()
        if tok is None:
            last = self.toks[-1].line if self.toks else 1
            raise WorkloadSyntaxError("unexpected end of input", line=last)
        self.i += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        tok = self.next()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            raise WorkloadSyntaxError(f"expected {want!r}, got {tok.text!r}", line=tok.line)
        return tok

    def at_punct(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "punct" and tok.text == text

    def parse_program(self) -> list[_TStmt]:
        decls = []
        while self.peek() is not None:
            decls.append(self.parse_decl())
        return decls

    def parse_decl(self) -> _TStmt:
        tok = self.next()
        if tok.kind != "name":
            raise WorkloadSyntaxError(f"expected a declaration, got {tok.text!r}", line=tok.line)
        if tok.text == "memory":
            name = self.expect("name")
            self.expect("punct", "=")
            val = self.next()
            if val.kind not in ("int", "name"):
                raise WorkloadSyntaxError("memory initializer must be an integer", line=val.line)
            self.expect("punct", ";")
            return _TStmt("memory", tok.line, {"name": name.text, "value": val})
        if tok.text == "param":
            name = self.expect("name")
            self.expect("punct", "=")
            val = self.next()
            if val.kind not in ("int", "name"):
                raise WorkloadSyntaxError("param value must be an integer", line=val.line)
            self.expect("punct", ";")
            return _TStmt("param", tok.line, {"name": name.text, "value": val})
        if tok.text == "thread":
            body = self.parse_block()
            return _TStmt("thread", tok.line, {"body": body})
        if tok.text == "threads":
            count = self.next()
            body = self.parse_block()
            return _TStmt("threads", tok.line, {"count": count, "body": body})
        if tok.text == "repeat":
            count = self.next()
            self.expect("name", "with")
            var = self.expect("name")
            self.expect("punct", "{")
            inner = []
            while not self.at_punct("}"):
                inner.append(self.parse_decl())
            self.expect("punct", "}")
            for d in inner:
                if d.form not in ("thread", "threads"):
                    raise WorkloadSyntaxError(
                        "repeat blocks may contain only thread declarations", line=d.line)
            return _TStmt("repeat", tok.line, {"count": count, "var": var.text, "decls": inner})
        raise WorkloadSyntaxError(f"unknown declaration {tok.text!r}", line=tok.line)

    def parse_block(self) -> list[_TStmt]:
        self.expect("punct", "{")
        body = []
        while not self.at_punct("}"):
            body.append(self.parse_stmt())
        self.expect("punct", "}")
        return body

    def parse_stmt(self) -> _TStmt:
        tok = self.next()
        if tok.kind != "name":
            raise WorkloadSyntaxError(f"expected a statement, got {tok.text!r}", line=tok.line)
        form = tok.text
        if form == "compute":
            n = self.next()
            self.expect("punct", ";")
            return _TStmt("compute", tok.line, {"cost": n})
        if form == "lock":
            name = self.expect("name")
            site = None
            if self.at_punct("@"):
                self.next()
                sid = self.next()
                lo = hi = None
                if self.at_punct("["):
                    self.next()
                    lo = self.next()
                    self.expect("punct", ",")
                    hi = self.next()
                    self.expect("punct", "]")
                site = (sid, lo, hi)
            self.expect("punct", ";")
            return _TStmt("lock", tok.line, {"lock": name.text, "site": site})
        if form == "unlock":
            name = self.expect("name")
            self.expect("punct", ";")
            return _TStmt("unlock", tok.line, {"lock": name.text})
        if form == "read":
            addr = self.expect("name")
            self.expect("arrow")
            reg = self.expect("name")
            self.expect("punct", ";")
            return _TStmt("read", tok.line, {"addr": addr.text, "reg": reg.text})
        if form == "write":
            addr = self.expect("name")
            self.expect("punct", "=")
            a = self.next()
            op = None
            b = None
            nxt = self.peek()
            if nxt is not None and nxt.kind == "name" and nxt.text in ("add", "sub"):
                op = self.next().text
                b = self.next()
            self.expect("punct", ";")
            return _TStmt("write", tok.line, {"addr": addr.text, "a": a, "op": op, "b": b})
        if form == "if":
            reg = self.expect("name")
            cmp_tok = self.next()
            if cmp_tok.kind != "cmp":
                raise WorkloadSyntaxError(
                    f"expected a comparison operator, got {cmp_tok.text!r}", line=cmp_tok.line)
            rhs = self.next()
            then = self.parse_block()
            els: list[_TStmt] = []
            nxt = self.peek()
            if nxt is not None and nxt.kind == "name" and nxt.text == "else":
                self.next()
                els = self.parse_block()
            return _TStmt("if", tok.line,
                          {"reg": reg.text, "cmp": cmp_tok.text, "rhs": rhs,
                           "then": then, "els": els})
        if form == "loop":
            n = self.next()
            body = self.parse_block()
            return _TStmt("loop", tok.line, {"count": n, "body": body})
        if form == "marker":
            name = self.expect("name")
            self.expect("punct", ";")
            return _TStmt("marker", tok.line, {"name": name.text})
        raise WorkloadSyntaxError(f"unknown statement {form!r}", line=tok.line)


# --- expansion -----------------------------------------------------------------

def _expand_body(body: list[_TStmt], env: dict[str, int]) -> list:
    out = []
    for st in body:
        if st.form == "compute":
            out.append(Compute(_int_value(st.args["cost"], env)))
        elif st.form == "lock":
            name = _subst_name(st.args["lock"], env, st.line)
            site = st.args["site"]
            if site is None:
                s = Site(st.line, st.line, st.line)
            else:
                sid = _int_value(site[0], env)
                lo = _int_value(site[1], env) if site[1] is not None else sid
                hi = _int_value(site[2], env) if site[2] is not None else sid
                s = Site(sid, lo, hi)
            out.append(Lock(name, s))
        elif st.form == "unlock":
            out.append(Unlock(_subst_name(st.args["lock"], env, st.line)))
        elif st.form == "read":
            out.append(Read(_subst_name(st.args["addr"], env, st.line),
                            _subst_name(st.args["reg"], env, st.line)))
        elif st.form == "write":
            addr = _subst_name(st.args["addr"], env, st.line)
            a_tok: _Tok = st.args["a"]
            op = st.args["op"]

            def operand(tok: _Tok):
                if tok.kind == "int":
                    return int(tok.text)
                text = _subst_name(tok.text, env, tok.line)
                # ${...} arithmetic collapses to an int; plain names stay registers
                if re.fullmatch(r"-?\d+", text):
                    return int(text)
                return text

            a = operand(a_tok)
            if op is None:
                vx = ("const", a) if isinstance(a, int) else ("copy", a, None)
            else:
                vx = (op, a, operand(st.args["b"]))
            out.append(Write(addr, vx))
        elif st.form == "if":
            out.append(If(
                reg=_subst_name(st.args["reg"], env, st.line),
                cmp=st.args["cmp"],
                rhs=_int_value(st.args["rhs"], env),
                then=_expand_body(st.args["then"], env),
                els=_expand_body(st.args["els"], env)))
        elif st.form == "loop":
            n = _int_value(st.args["count"], env)
            if n < 0:
                raise WorkloadSyntaxError("loop count must be >= 0", line=st.line)
            out.append(Loop(n, _expand_body(st.args["body"], env)))
        elif st.form == "marker":
            out.append(Marker(_subst_name(st.args["name"], env, st.line)))
        else:  # pragma: no cover - parser only produces the forms above
            raise WorkloadSyntaxError(f"internal: unknown form {st.form}", line=st.line)
    return out


def _check_locks(body: list, where: str, held: tuple[str, ...] = ()) -> tuple[str, ...]:
    for st in body:
        if isinstance(st, Lock):
            held = held + (st.lock,)
        elif isinstance(st, Unlock):
            if not held or held[-1] != st.lock:
                raise UnbalancedLockError(
                    f"{where}: unlock of {st.lock!r} but innermost held lock is "
                    f"{held[-1] if held else 'none'!r}")
            held = held[:-1]
        elif isinstance(st, If):
            t = _check_locks(st.then, where, held)
            e = _check_locks(st.els, where, held)
            if t != held or e != held:
                raise UnbalancedLockError(
                    f"{where}: conditional branches must not change held locks")
        elif isinstance(st, Loop):
            t = _check_locks(st.body, where, held)
            if t != held:
                raise UnbalancedLockError(f"{where}: loop body must not change held locks")
    return held


def _check_registers(body: list, where: str, defined: frozenset[str]) -> frozenset[str]:
    def use(reg: str):
        if reg not in defined:
            raise UnboundRegisterError(
                f"{where}: register {reg!r} used before any read loads it")

    for st in body:
        if isinstance(st, Read):
            defined = defined | {st.reg}
        elif isinstance(st, Write):
            if st.valexpr[0] != "const":
                _, a, b = st.valexpr
                if isinstance(a, str):
                    use(a)
                if isinstance(b, str):
                    use(b)
        elif isinstance(st, If):
            use(st.reg)
            t = _check_registers(st.then, where, defined)
            e = _check_registers(st.els, where, defined)
            defined = t & e
        elif isinstance(st, Loop):
            after = _check_registers(st.body, where, defined)
            if st.count > 0:
                defined = after
    return defined


def parse_workload(text: str, overrides: dict[str, int] | None = None) -> WorkloadProgram:
    """Parse, apply parameter overrides, expand replication, run static checks."""
    decls = _Parser(_tokenize(text)).parse_program()

    params: dict[str, int] = {}
    for d in decls:
        if d.form == "param":
            params[d.args["name"]] = _int_value(d.args["value"], dict(params))
    for k, v in (overrides or {}).items():
        if k not in params:
            raise WorkloadSyntaxError(f"override for unknown param {k!r}")
        params[k] = int(v)

    memory: dict[str, int] = {}
    threads: list[list] = []
    for d in decls:
        if d.form == "param":
            continue
        if d.form == "memory":
            name = _subst_name(d.args["name"], params, d.line)
            memory[name] = _int_value(d.args["value"], params)
        elif d.form == "thread":
            threads.append(_expand_body(d.args["body"], dict(params)))
        elif d.form == "threads":
            n = _int_value(d.args["count"], params)
            if n < 1:
                raise WorkloadSyntaxError("threads count must be >= 1", line=d.line)
            for i in range(n):
                env = dict(params)
                env["I"] = i
                threads.append(_expand_body(d.args["body"], env))
        elif d.form == "repeat":
            n = _int_value(d.args["count"], params)
            if n < 1:
                raise WorkloadSyntaxError("repeat count must be >= 1", line=d.line)
            for b in range(n):
                for inner in d.args["decls"]:
                    env = dict(params)
                    env[d.args["var"]] = b
                    if inner.form == "thread":
                        threads.append(_expand_body(inner.args["body"], env))
                    else:
                        m = _int_value(inner.args["count"], env)
                        for i in range(m):
                            env2 = dict(env)
                            env2["I"] = i
                            threads.append(_expand_body(inner.args["body"], env2))
    if not threads:
        raise WorkloadSyntaxError("workload declares no threads")

    for tid, body in enumerate(threads):
        where = f"thread {tid}"
        left = _check_locks(body, where)
        if left:
            raise UnbalancedLockError(f"{where}: body ends still holding {list(left)}")
        _check_registers(body, where, frozenset())

    return WorkloadProgram(memory=memory, threads=threads, params=params)
