"""Appraisal policy language: parser, validator and evaluator.

A policy is a line-oriented program:

    rule <id> <mandatory|advisory>: <expr>
    feature <id>: <expr>
    loa:
      -> 1
      trusted_hardware -> 2
      ...

Expressions combine claim-field comparisons and builtin predicates with
and/or/not. Evaluation is pure and total: a rule that references a claim
kind absent from the evidence fails with a distinct missing-claim reason
(three-valued Kleene logic), it never raises.

The LOA block maps feature sets to assurance levels; lookup takes the
maximum level over entries whose feature set is contained in the satisfied
set, so adding a feature can never lower the assigned level.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .claims import ClaimKind, Endorsement, Evidence, ReferenceManifest
from .errors import DuplicateRuleId, PolicySyntaxError, PolicyTypeError

# --- AST ---------------------------------------------------------------------


class Severity(Enum):
    MANDATORY = "mandatory"
    ADVISORY = "advisory"


@dataclass(frozen=True)
class Compare:
    root: str  # claim kind name or pseudo-root ("manifest", "evidence")
    field: str
    op: str  # == != < <= > >=
    literal: object


@dataclass(frozen=True)
class Builtin:
    name: str
    args: tuple


@dataclass(frozen=True)
class Not:
    inner: object


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Rule:
    id: str
    severity: Severity
    expr: object


@dataclass(frozen=True)
class Feature:
    id: str
    expr: object


@dataclass(frozen=True)
class LoaEntry:
    features: frozenset
    level: int


@dataclass(frozen=True)
class PolicyProgram:
    rules: tuple
    features: tuple
    loa_table: tuple

    def feature_names(self) -> tuple:
        return tuple(f.id for f in self.features)


# Field schema: path root -> {field: type}. "num" covers int and float.
_CLAIM_ROOTS = {
    "key_type": {"migratable": "bool", "kind": "str"},
    "key_provenance": {"creation_origin": "str", "source_device": "str"},
    "geo_location": {"lat": "num", "lon": "num", "alt": "num"},
    "usage_log": {"length": "num"},
    "system_config": {"config_digest": "bytes"},
    "signature_origin": {"counter_value": "num"},
    "erasure": {"counter_value": "num"},
}
_PSEUDO_ROOTS = {
    "manifest": {"hardware_class": "str"},
    "evidence": {"counter": "num"},
}
_KIND_BY_ROOT = {k.value: k for k in ClaimKind}

_BUILTINS = {
    "config_approved": 0,  # config digest in the manifest approved set
    "chain_reaches_ek": 0,  # provenance chain verifies up to the endorsed EK
    "fresh_within": 1,  # evidence age within N ticks
    "geo_within": -2,  # point-in-polygon, args are lat,lon pairs (>= 3 pairs)
    "matches_endorsement": 1,  # claim field equals the endorsed reference value
}

_ORDERING_OPS = {"<", "<=", ">", ">="}


# --- lexer -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
  | (?P<arrow>->)
  | (?P<op>==|!=|<=|>=|<|>)
  | (?P<hex>0x[0-9a-fA-F]+)
  | (?P<float>-?\d+\.\d+)
  | (?P<int>-?\d+)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[().,:])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _lex_line(text: str, line_no: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PolicySyntaxError(
                f"unexpected character {text[pos]!r}", line_no, pos + 1
            )
        kind = m.lastgroup
        if kind == "comment":
            break
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), line_no, m.start() + 1))
        pos = m.end()
    return toks


class _Parser:
    def __init__(self, toks: list[_Tok], line_no: int, line_len: int):
        self.toks = toks
        self.pos = 0
        self.line_no = line_no
        self.line_len = line_len

    def peek(self) -> _Tok | None:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def next(self) -> _Tok:
        t = self.peek()
        if t is None:
            raise PolicySyntaxError("unexpected end of line", self.line_no, self.line_len)
        self.pos += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        t = self.next()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            raise PolicySyntaxError(f"expected {want!r}, got {t.text!r}", t.line, t.col)
        return t

    def done(self) -> None:
        t = self.peek()
        if t is not None:
            raise PolicySyntaxError(f"unexpected {t.text!r}", t.line, t.col)

    # expression grammar: or_expr > and_expr > unary > primary

    def parse_expr(self):
        items = [self.parse_and()]
        while (t := self.peek()) and t.kind == "ident" and t.text == "or":
            self.next()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self):
        items = [self.parse_unary()]
        while (t := self.peek()) and t.kind == "ident" and t.text == "and":
            self.next()
            items.append(self.parse_unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_unary(self):
        t = self.peek()
        if t and t.kind == "ident" and t.text == "not":
            self.next()
            return Not(self.parse_unary())
        return self.parse_primary()

    def parse_primary(self):
        t = self.peek()
        if t is None:
            raise PolicySyntaxError("expected expression", self.line_no, self.line_len)
        if t.kind == "punct" and t.text == "(":
            self.next()
            inner = self.parse_expr()
            self.expect("punct", ")")
            return inner
        if t.kind == "ident":
            name = self.next()
            nxt = self.peek()
            if nxt and nxt.kind == "punct" and nxt.text == "(":
                return self._parse_builtin(name)
            self.expect("punct", ".")
            fld = self.expect("ident")
            op = self.expect("op")
            literal = self._parse_literal()
            return self._check_compare(name, fld, op, literal)
        raise PolicySyntaxError(f"unexpected {t.text!r}", t.line, t.col)

    def _parse_builtin(self, name: _Tok) -> Builtin:
        arity = _BUILTINS.get(name.text)
        if arity is None:
            raise PolicySyntaxError(f"unknown predicate {name.text!r}", name.line, name.col)
        self.expect("punct", "(")
        args = []
        if not (self.peek() and self.peek().kind == "punct" and self.peek().text == ")"):
            while True:
                args.append(self._parse_builtin_arg(name.text))
                t = self.peek()
                if t and t.kind == "punct" and t.text == ",":
                    self.next()
                    continue
                break
        self.expect("punct", ")")
        self._check_builtin(name, tuple(args))
        return Builtin(name.text, tuple(args))

    def _parse_builtin_arg(self, builtin: str):
        t = self.peek()
        if builtin == "matches_endorsement":
            root = self.expect("ident")
            self.expect("punct", ".")
            fld = self.expect("ident")
            self._field_type(root, fld)
            if root.text not in _CLAIM_ROOTS:
                raise PolicyTypeError(
                    f"matches_endorsement needs a claim field, not {root.text!r}",
                    root.line,
                    root.col,
                )
            return (root.text, fld.text)
        if t and t.kind in ("int", "float"):
            self.next()
            return float(t.text) if t.kind == "float" else int(t.text)
        raise PolicySyntaxError(
            f"bad argument for {builtin}", t.line if t else self.line_no, t.col if t else 1
        )

    def _check_builtin(self, name: _Tok, args: tuple) -> None:
        arity = _BUILTINS[name.text]
        if arity >= 0 and len(args) != arity:
            raise PolicyTypeError(
                f"{name.text} takes {arity} argument(s)", name.line, name.col
            )
        if name.text == "fresh_within" and (not args or not isinstance(args[0], int) or args[0] < 0):
            raise PolicyTypeError("fresh_within needs a non-negative tick count", name.line, name.col)
        if name.text == "geo_within":
            if len(args) % 2 != 0 or len(args) < 6:
                raise PolicyTypeError(
                    "geo_within needs at least 3 lat,lon pairs", name.line, name.col
                )
            if not all(isinstance(a, (int, float)) for a in args):
                raise PolicyTypeError("geo_within arguments must be numbers", name.line, name.col)

    def _parse_literal(self):
        t = self.next()
        if t.kind == "int":
            return int(t.text)
        if t.kind == "float":
            return float(t.text)
        if t.kind == "hex":
            body = t.text[2:]
            if len(body) % 2:
                raise PolicySyntaxError("hex literal needs an even digit count", t.line, t.col)
            return bytes.fromhex(body)
        if t.kind == "string":
            return _unquote(t.text)
        if t.kind == "ident" and t.text in ("true", "false"):
            return t.text == "true"
        raise PolicySyntaxError(f"expected literal, got {t.text!r}", t.line, t.col)

    def _field_type(self, root: _Tok, fld: _Tok) -> str:
        schema = _CLAIM_ROOTS.get(root.text) or _PSEUDO_ROOTS.get(root.text)
        if schema is None:
            raise PolicyTypeError(f"unknown claim kind {root.text!r}", root.line, root.col)
        ftype = schema.get(fld.text)
        if ftype is None:
            raise PolicyTypeError(
                f"{root.text} has no field {fld.text!r}", fld.line, fld.col
            )
        return ftype

    def _check_compare(self, root: _Tok, fld: _Tok, op: _Tok, literal) -> Compare:
        ftype = self._field_type(root, fld)
        ltype = (
            "bool"
            if isinstance(literal, bool)
            else "num"
            if isinstance(literal, (int, float))
            else "bytes"
            if isinstance(literal, bytes)
            else "str"
        )
        if ltype != ftype:
            raise PolicyTypeError(
                f"{root.text}.{fld.text} is {ftype}, literal is {ltype}", op.line, op.col
            )
        if op.text in _ORDERING_OPS and ftype != "num":
            raise PolicyTypeError(
                f"ordering comparison needs a numeric field", op.line, op.col
            )
        return Compare(root.text, fld.text, op.text, literal)


def _unquote(text: str) -> str:
    return text[1:-1].replace('\\"', '"').replace("\\\\", "\\")


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


# --- program parsing -----------------------------------------------------------


def parse_policy(source: str) -> PolicyProgram:
    """Parse and validate a policy program; raises the first error found."""
    rules: list[Rule] = []
    features: list[Feature] = []
    loa_entries: list[LoaEntry] = []
    seen_rule_lines: dict[str, int] = {}
    in_loa = False

    lines = source.splitlines()
    for line_no, raw in enumerate(lines, start=1):
        toks = _lex_line(raw, line_no)
        if not toks:
            continue
        head = toks[0]
        if head.kind == "ident" and head.text in ("rule", "feature"):
            in_loa = False
        if head.kind == "ident" and head.text == "loa":
            p = _Parser(toks, line_no, len(raw) + 1)
            p.next()
            p.expect("punct", ":")
            p.done()
            in_loa = True
            continue
        if in_loa:
            loa_entries.append(_parse_loa_entry(toks, line_no, len(raw) + 1))
            continue
        p = _Parser(toks, line_no, len(raw) + 1)
        kw = p.expect("ident")
        if kw.text == "rule":
            ident = p.expect("ident")
            sev = p.expect("ident")
            if sev.text not in ("mandatory", "advisory"):
                raise PolicySyntaxError(
                    f"severity must be mandatory or advisory, got {sev.text!r}",
                    sev.line,
                    sev.col,
                )
            p.expect("punct", ":")
            expr = p.parse_expr()
            p.done()
            if ident.text in seen_rule_lines:
                raise DuplicateRuleId(
                    f"rule id {ident.text!r} already defined on line "
                    f"{seen_rule_lines[ident.text]}",
                    ident.line,
                    ident.col,
                )
            seen_rule_lines[ident.text] = line_no
            rules.append(Rule(ident.text, Severity(sev.text), expr))
        elif kw.text == "feature":
            ident = p.expect("ident")
            p.expect("punct", ":")
            expr = p.parse_expr()
            p.done()
            if any(f.id == ident.text for f in features):
                raise DuplicateRuleId(
                    f"feature id {ident.text!r} already defined", ident.line, ident.col
                )
            features.append(Feature(ident.text, expr))
        else:
            raise PolicySyntaxError(
                f"expected rule, feature or loa, got {kw.text!r}", kw.line, kw.col
            )

    declared = {f.id for f in features}
    for entry in loa_entries:
        unknown = entry.features - declared
        if unknown:
            raise PolicyTypeError(
                f"loa entry references undeclared feature(s) {sorted(unknown)}"
            )
    if not loa_entries:
        loa_entries.append(LoaEntry(frozenset(), 1))
    if not any(not e.features for e in loa_entries):
        raise PolicyTypeError("loa table must include a base (empty feature set) entry")
    return PolicyProgram(tuple(rules), tuple(features), tuple(loa_entries))


def _parse_loa_entry(toks: list[_Tok], line_no: int, line_len: int) -> LoaEntry:
    p = _Parser(toks, line_no, line_len)
    feats = []
    while (t := p.peek()) and t.kind == "ident":
        feats.append(p.next().text)
    arrow = p.next()
    if arrow.kind != "arrow":
        raise PolicySyntaxError(f"expected '->', got {arrow.text!r}", arrow.line, arrow.col)
    lvl = p.expect("int")
    p.done()
    level = int(lvl.text)
    if not 1 <= level <= 4:
        raise PolicyTypeError("LOA level must be 1..4", lvl.line, lvl.col)
    return LoaEntry(frozenset(feats), level)


def parse_policy_file(path) -> PolicyProgram:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_policy(fh.read())


# --- pretty printing -------------------------------------------------------------


def _print_literal(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, bytes):
        return "0x" + value.hex()
    if isinstance(value, str):
        return _quote(value)
    return repr(value)


def _print_expr(expr, parent_prec: int = 0) -> str:
    # precedence: or=1, and=2, not=3, atoms=4
    if isinstance(expr, Or):
        text = " or ".join(_print_expr(i, 1) for i in expr.items)
        prec = 1
    elif isinstance(expr, And):
        text = " and ".join(_print_expr(i, 2) for i in expr.items)
        prec = 2
    elif isinstance(expr, Not):
        text = "not " + _print_expr(expr.inner, 3)
        prec = 3
    elif isinstance(expr, Compare):
        text = f"{expr.root}.{expr.field} {expr.op} {_print_literal(expr.literal)}"
        prec = 4
    elif isinstance(expr, Builtin):
        args = []
        for a in expr.args:
            if isinstance(a, tuple):
                args.append(f"{a[0]}.{a[1]}")
            elif isinstance(a, float):
                args.append(repr(a))
            else:
                args.append(str(a))
        text = f"{expr.name}({', '.join(args)})"
        prec = 4
    else:
        raise TypeError(f"not an expression: {expr!r}")
    return f"({text})" if prec < parent_prec else text


def pretty_print(program: PolicyProgram) -> str:
    out = []
    for r in program.rules:
        out.append(f"rule {r.id} {r.severity.value}: {_print_expr(r.expr)}")
    for f in program.features:
        out.append(f"feature {f.id}: {_print_expr(f.expr)}")
    out.append("loa:")
    for e in program.loa_table:
        feats = " ".join(sorted(e.features))
        out.append(f"  {feats + ' ' if feats else ''}-> {e.level}")
    return "\n".join(out) + "\n"


# --- evaluation -------------------------------------------------------------------

_TRUE = object()
_FALSE = object()
# third truth value: frozenset of missing claim-kind names


def _is_missing(v) -> bool:
    return isinstance(v, frozenset)


def _kleene_not(v):
    if v is _TRUE:
        return _FALSE
    if v is _FALSE:
        return _TRUE
    return v


def _kleene_and(values):
    missing = frozenset()
    for v in values:
        if v is _FALSE:
            return _FALSE
        if _is_missing(v):
            missing |= v
    return missing if missing else _TRUE


def _kleene_or(values):
    missing = frozenset()
    for v in values:
        if v is _TRUE:
            return _TRUE
        if _is_missing(v):
            missing |= v
    return missing if missing else _FALSE


def point_in_polygon(lat: float, lon: float, polygon) -> bool:
    """Even-odd ray casting over (lat, lon); altitude is ignored."""
    inside = False
    n = len(polygon)
    for i in range(n):
        y1, x1 = polygon[i]
        y2, x2 = polygon[(i + 1) % n]
        if (y1 > lat) != (y2 > lat):
            x_cross = (x2 - x1) * (lat - y1) / (y2 - y1) + x1
            if lon < x_cross:
                inside = not inside
    return inside


@dataclass
class _EvalContext:
    evidence: Evidence
    endorsement: Endorsement | None
    manifest: ReferenceManifest | None
    evidence_age: int | None


def _field_value(claim, root: str, fld: str):
    body = claim.body
    if root == "key_type":
        return body.migratable if fld == "migratable" else body.kind.value
    if root == "key_provenance":
        return body.creation_origin.value if fld == "creation_origin" else body.source_device
    if root == "geo_location":
        return getattr(body, fld)
    if root == "usage_log":
        return len(body.entries)
    if root == "system_config":
        return body.config_digest
    if root in ("signature_origin", "erasure"):
        return body.counter_value
    raise ValueError(root)


def _eval_compare(expr: Compare, ctx: _EvalContext):
    if expr.root == "manifest":
        if ctx.manifest is None:
            return _FALSE
        value = ctx.manifest.hardware_class.value
    elif expr.root == "evidence":
        value = ctx.evidence.counter
    else:
        kind = _KIND_BY_ROOT[expr.root]
        cs = ctx.evidence.claims_of(kind)
        if not cs:
            return frozenset({expr.root})
        results = [
            _apply_op(_field_value(c, expr.root, expr.field), expr.op, expr.literal)
            for c in cs
        ]
        return _TRUE if all(results) else _FALSE
    return _TRUE if _apply_op(value, expr.op, expr.literal) else _FALSE


def _apply_op(value, op: str, literal) -> bool:
    if op == "==":
        return value == literal
    if op == "!=":
        return value != literal
    if op == "<":
        return value < literal
    if op == "<=":
        return value <= literal
    if op == ">":
        return value > literal
    return value >= literal


def _chain_reaches_ek(ctx: _EvalContext):
    cs = ctx.evidence.claims_of(ClaimKind.KEY_PROVENANCE)
    if not cs:
        return frozenset({"key_provenance"})
    if ctx.endorsement is None:
        return _FALSE
    ek = ctx.endorsement.ek_public
    for c in cs:
        links = c.body.links
        if not links:
            return _FALSE
        for i, link in enumerate(links):
            if not link.verify():
                return _FALSE
            if i + 1 < len(links) and link.parent_public_key != links[i + 1].child_public_key:
                return _FALSE
        if links[-1].parent_public_key != ek:
            return _FALSE
    return _TRUE


def _matches_endorsement(ctx: _EvalContext, root: str, fld: str):
    kind = _KIND_BY_ROOT[root]
    cs = ctx.evidence.claims_of(kind)
    if not cs:
        return frozenset({root})
    if ctx.endorsement is None:
        return _FALSE
    refs = [r for r in ctx.endorsement.reference_claims if r.kind is kind]
    if not refs:
        return _FALSE
    ref_values = {_wrap(_field_value(r, root, fld)) for r in refs}
    for c in cs:
        if _wrap(_field_value(c, root, fld)) not in ref_values:
            return _FALSE
    return _TRUE


def _wrap(v):
    return v if not isinstance(v, float) else round(v, 12)


def _eval_builtin(expr: Builtin, ctx: _EvalContext):
    if expr.name == "config_approved":
        cs = ctx.evidence.claims_of(ClaimKind.SYSTEM_CONFIG)
        if not cs:
            return frozenset({"system_config"})
        if ctx.manifest is None:
            return _FALSE
        approved = set(ctx.manifest.approved_config_digests)
        ok = all(c.body.config_digest in approved for c in cs)
        return _TRUE if ok else _FALSE
    if expr.name == "chain_reaches_ek":
        return _chain_reaches_ek(ctx)
    if expr.name == "fresh_within":
        if ctx.evidence_age is None:
            return _FALSE
        return _TRUE if ctx.evidence_age <= expr.args[0] else _FALSE
    if expr.name == "geo_within":
        cs = ctx.evidence.claims_of(ClaimKind.GEO_LOCATION)
        if not cs:
            return frozenset({"geo_location"})
        poly = [(expr.args[i], expr.args[i + 1]) for i in range(0, len(expr.args), 2)]
        ok = all(point_in_polygon(c.body.lat, c.body.lon, poly) for c in cs)
        return _TRUE if ok else _FALSE
    if expr.name == "matches_endorsement":
        root, fld = expr.args[0]
        return _matches_endorsement(ctx, root, fld)
    raise ValueError(expr.name)


def _eval_expr(expr, ctx: _EvalContext):
    if isinstance(expr, Compare):
        return _eval_compare(expr, ctx)
    if isinstance(expr, Builtin):
        return _eval_builtin(expr, ctx)
    if isinstance(expr, Not):
        return _kleene_not(_eval_expr(expr.inner, ctx))
    if isinstance(expr, And):
        return _kleene_and([_eval_expr(i, ctx) for i in expr.items])
    if isinstance(expr, Or):
        return _kleene_or([_eval_expr(i, ctx) for i in expr.items])
    raise TypeError(f"not an expression: {expr!r}")


@dataclass(frozen=True)
class PolicyVerdict:
    passed: bool
    failed_rules: tuple  # rule ids, mandatory and advisory alike
    reasons: dict  # rule id -> reason string
    satisfied_features: frozenset
    loa: int | None

    def __bool__(self) -> bool:
        return self.passed


def evaluate(
    program: PolicyProgram,
    evidence: Evidence,
    endorsements,
    manifests,
    now: int,
    evidence_age: int | None = None,
) -> PolicyVerdict:
    """Appraise evidence against a policy; assumes the chain is pre-verified.

    evidence_age is the verifier-supplied number of ticks since the challenge
    was issued; freshness predicates fail closed when it is unknown.
    """
    endorsement = None
    for e in endorsements:
        if e.device_id == evidence.device_id or (
            not e.device_id and e.manifest_ref == evidence.manifest_ref
        ):
            endorsement = e
            break
    manifest = None
    for m in manifests:
        if m.manifest_ref == evidence.manifest_ref:
            manifest = m
            break
    ctx = _EvalContext(evidence, endorsement, manifest, evidence_age)

    failed = []
    reasons = {}
    mandatory_ok = True
    for rule in program.rules:
        try:
            value = _eval_expr(rule.expr, ctx)
        except Exception as e:  # fuzzed evidence must never crash appraisal
            value = _FALSE
            reasons[rule.id] = f"error:{type(e).__name__}"
        if value is _TRUE:
            continue
        failed.append(rule.id)
        if rule.id not in reasons:
            if _is_missing(value):
                reasons[rule.id] = "missing-claim:" + ",".join(sorted(value))
            else:
                reasons[rule.id] = "predicate-false"
        if rule.severity is Severity.MANDATORY:
            mandatory_ok = False

    satisfied = set()
    for feat in program.features:
        try:
            if _eval_expr(feat.expr, ctx) is _TRUE:
                satisfied.add(feat.id)
        except Exception:
            pass

    loa = assign_loa(satisfied, program.loa_table) if mandatory_ok else None
    return PolicyVerdict(
        passed=mandatory_ok,
        failed_rules=tuple(failed),
        reasons=reasons,
        satisfied_features=frozenset(satisfied),
        loa=loa,
    )


def assign_loa(features, table) -> int:
    """Highest level whose required feature set the satisfied set covers.

    Monotone by construction: enlarging the feature set can only enable more
    table entries, so the maximum never decreases.
    """
    feats = frozenset(features)
    best = 1
    for entry in table:
        if entry.features <= feats and entry.level > best:
            best = entry.level
    return best
