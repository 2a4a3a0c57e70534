"""Model formula mini-language.

Grammar (whitespace insignificant)::

    formula := response "~" term ("+" term)*
    term    := "1" | ident
             | "s(" ident ["," "k=" int] ")"
             | "te(" ident ("," ident)* ["," "d=c(" int ("," int)* ")"]
                                        ["," "k=" (int | "c(" int ("," int)* ")")] ")"

``1`` is the (always present) intercept, so ``y ~ 1`` is intercept-only.
A scalar ``k`` in ``te()`` applies to every group.

Family and offset are not part of the formula; they are supplied
separately (CLI flags) and carried on the resulting :class:`ModelSpec`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

DEFAULT_K_1D = 10
DEFAULT_K_2D = 5


class Family(str, enum.Enum):
    NEGBIN = "nb"
    POISSON = "poisson"


@dataclass(frozen=True)
class OffsetRule:
    """How the log-exposure offset is obtained from a panel.

    ``kind`` is one of ``"person-years"`` (log(popsize / 1e5 / 12)),
    ``"none"`` or ``"column"`` (a named column, already on the log scale).
    """

    kind: str = "person-years"
    column: str | None = None

    def __post_init__(self):
        if self.kind not in ("person-years", "none", "column"):
            raise ValueError(f"unknown offset kind {self.kind!r}")
        if (self.kind == "column") != (self.column is not None):
            raise ValueError("a column name is required exactly when kind='column'")

    @classmethod
    def parse(cls, text: str) -> "OffsetRule":
        if text == "person-years":
            return cls("person-years")
        if text == "none":
            return cls("none")
        if text.startswith("column:") and len(text) > len("column:"):
            return cls("column", text[len("column:"):])
        raise ValueError(
            f"bad offset {text!r}; expected person-years, none or column:NAME")

    def __str__(self):
        return f"column:{self.column}" if self.kind == "column" else self.kind


@dataclass(frozen=True)
class SmoothTerm:
    variables: tuple[str, ...]
    d_groups: tuple[int, ...]
    basis_dims: tuple[int, ...]
    kind: str = "TE"

    def __post_init__(self):
        if self.kind not in ("S", "TE"):
            raise ValueError(f"unknown smooth kind {self.kind!r}")
        if sum(self.d_groups) != len(self.variables):
            raise ValueError("d groups must sum to the number of variables")
        if len(self.basis_dims) != len(self.d_groups):
            raise ValueError("need one basis dimension per d group")
        if self.kind == "S" and (len(self.variables) != 1 or self.d_groups != (1,)):
            raise ValueError("s() terms take exactly one variable")
        for d, k in zip(self.d_groups, self.basis_dims):
            if d < 1:
                raise ValueError("d groups must be positive")
            if k < (3 if d == 1 else 4):
                raise ValueError(f"basis dimension {k} too small for a {d}-D group")

    @property
    def label(self) -> str:
        name = "s" if self.kind == "S" else "te"
        return f"{name}({','.join(self.variables)})"

    def groups(self) -> list[tuple[str, ...]]:
        """Variables of each anisotropy group, in order."""
        out, i = [], 0
        for d in self.d_groups:
            out.append(self.variables[i:i + d])
            i += d
        return out


@dataclass(frozen=True)
class ModelSpec:
    response: str
    parametric_terms: tuple[str, ...] = ()
    smooth_terms: tuple[SmoothTerm, ...] = ()
    family: Family = Family.NEGBIN
    offset_rule: OffsetRule = field(default_factory=OffsetRule)

    @property
    def variables(self) -> list[str]:
        """Every covariate column the model reads, first-use order."""
        seen = []
        for name in self.parametric_terms:
            if name not in seen:
                seen.append(name)
        for term in self.smooth_terms:
            for name in term.variables:
                if name not in seen:
                    seen.append(name)
        return seen

    @property
    def n_groups(self) -> int:
        return sum(len(t.d_groups) for t in self.smooth_terms)


class FormulaError(ValueError):
    """Formula rejected; ``offset`` is the byte position of the problem."""

    kind = "error"

    def __init__(self, message: str, offset: int):
        self.offset = offset
        self.message = message
        super().__init__(f"{self.kind} at offset {offset}: {message}")


class FormulaSyntaxError(FormulaError):
    kind = "syntax error"


class FormulaSemanticError(FormulaError):
    kind = "semantic error"


_PUNCT = "~+(),="


def _tokenize(text):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            i += 1
        elif ch in _PUNCT:
            tokens.append((ch, ch, i))
            i += 1
        elif ch.isascii() and (ch.isalpha() or ch == "_"):
            j = i + 1
            while j < n and text[j].isascii() and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
        elif ch.isascii() and ch.isdigit():
            j = i + 1
            while j < n and text[j].isascii() and text[j].isdigit():
                j += 1
            tokens.append(("int", text[i:j], i))
            i = j
        else:
            raise FormulaSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self, ahead=0):
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def take(self, kind, what=None):
        tok = self.peek()
        if tok[0] != kind:
            found = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise FormulaSyntaxError(f"expected {what or kind}, found {found}", tok[2])
        self.pos += 1
        return tok

    def int_list(self):
        # c( int ("," int)* )
        tok = self.take("ident", "'c('")
        if tok[1] != "c":
            raise FormulaSyntaxError("expected 'c('", tok[2])
        self.take("(", "'('")
        values = [self.integer()]
        while self.peek()[0] == ",":
            self.pos += 1
            values.append(self.integer())
        self.take(")", "')'")
        return values

    def integer(self):
        tok = self.take("int", "integer")
        return int(tok[1]), tok[2]

    def formula(self):
        response = self.take("ident", "response name")[1]
        self.take("~", "'~'")
        terms = [self.term()]
        while self.peek()[0] == "+":
            self.pos += 1
            terms.append(self.term())
        self.take("eof", "'+' or end of input")
        return response, terms

    def term(self):
        tok = self.peek()
        if tok[0] == "int" and tok[1] == "1":
            self.pos += 1
            return ("one", tok[1], tok[2])
        tok = self.take("ident", "term")
        if tok[1] in ("s", "te") and self.peek()[0] == "(":
            self.pos += 1
            return self.smooth(tok[1], tok[2])
        return ("param", tok[1], tok[2])

    def smooth(self, name, start):
        variables = [self.take("ident", "variable name")]
        clauses = {}
        while self.peek()[0] == ",":
            self.pos += 1
            tok = self.take("ident", "variable or clause")
            if self.peek()[0] == "=":
                self.pos += 1
                if tok[1] in clauses:
                    raise FormulaSemanticError(f"duplicate clause {tok[1]!r}", tok[2])
                if tok[1] not in ("d", "k") or (name == "s" and tok[1] != "k"):
                    raise FormulaSemanticError(f"unknown clause name {tok[1]!r}", tok[2])
                if name == "s":
                    clauses["k"] = (tok[2], [self.integer()], False)
                elif tok[1] == "k" and self.peek()[0] == "int":
                    clauses["k"] = (tok[2], [self.integer()], True)
                else:
                    clauses[tok[1]] = (tok[2], self.int_list(), False)
            else:
                if clauses:
                    raise FormulaSyntaxError("variable after clause", tok[2])
                variables.append(tok)
        self.take(")", "',' or ')'")
        return (name, variables, clauses, start)


def _build_smooth(name, variables, clauses, start):
    names = [v[1] for v in variables]
    for i, v in enumerate(variables):
        if v[1] in names[:i]:
            raise FormulaSemanticError(f"variable {v[1]!r} repeated in term", v[2])
    if name == "s":
        if len(names) != 1:
            raise FormulaSemanticError("s() takes exactly one variable", variables[1][2])
        d_groups = [1]
    elif "d" in clauses:
        d_off, d_vals, _ = clauses["d"]
        d_groups = [v for v, _ in d_vals]
        for v, off in d_vals:
            if v < 1:
                raise FormulaSemanticError("d entries must be positive", off)
            if v > 2:
                raise FormulaSemanticError("d groups larger than 2 are not supported", off)
        if sum(d_groups) != len(names):
            raise FormulaSemanticError(
                f"d sums to {sum(d_groups)} but term has {len(names)} variables", d_off)
    else:
        d_groups = [1] * len(names)
    if "k" in clauses:
        k_off, k_vals, scalar = clauses["k"]
        if scalar:
            k_vals = k_vals * len(d_groups)
        if len(k_vals) != len(d_groups):
            raise FormulaSemanticError(
                f"k has {len(k_vals)} entries for {len(d_groups)} groups", k_off)
        for (k, off), d in zip(k_vals, d_groups):
            lo = 3 if d == 1 else 4
            if k < lo:
                raise FormulaSemanticError(f"k={k} below minimum {lo} for a {d}-D group", off)
        basis_dims = [k for k, _ in k_vals]
    else:
        basis_dims = [DEFAULT_K_1D if d == 1 else DEFAULT_K_2D for d in d_groups]
    return SmoothTerm(tuple(names), tuple(d_groups), tuple(basis_dims),
                      "S" if name == "s" else "TE")


def parse_formula(text: str, family: Family | str = Family.NEGBIN,
                  offset_rule: OffsetRule | None = None) -> ModelSpec:
    """Parse a model formula such as ``deaths ~ s(age) + te(x, date, d=c(1,1))``.

    Raises
    ------
    FormulaSyntaxError, FormulaSemanticError
        Both carry the byte ``offset`` of the offending token.
    """
    response, raw_terms = _Parser(text).formula()
    parametric, smooths, seen_sets = [], [], {}
    for raw in raw_terms:
        if raw[0] == "one":
            continue
        if raw[0] == "param":
            if raw[1] in parametric:
                raise FormulaSemanticError(f"duplicate term {raw[1]!r}", raw[2])
            parametric.append(raw[1])
            continue
        term = _build_smooth(*raw)
        key = frozenset(term.variables)
        if key in seen_sets:
            raise FormulaSemanticError(
                f"duplicate smooth over {sorted(key)}", raw[3])
        seen_sets[key] = term
        smooths.append(term)
    return ModelSpec(response, tuple(parametric), tuple(smooths), Family(family),
                     offset_rule if offset_rule is not None else OffsetRule())


def _format_term(term: SmoothTerm) -> str:
    defaults = tuple(DEFAULT_K_1D if d == 1 else DEFAULT_K_2D for d in term.d_groups)
    if term.kind == "S":
        k = "" if term.basis_dims == defaults else f",k={term.basis_dims[0]}"
        return f"s({term.variables[0]}{k})"
    parts = list(term.variables)
    parts.append("d=c(" + ",".join(map(str, term.d_groups)) + ")")
    if term.basis_dims != defaults:
        parts.append("k=c(" + ",".join(map(str, term.basis_dims)) + ")")
    return "te(" + ",".join(parts) + ")"


def format_spec(spec: ModelSpec) -> str:
    """Canonical formula text; ``parse_formula`` inverts it."""
    terms = list(spec.parametric_terms) + [_format_term(t) for t in spec.smooth_terms]
    return f"{spec.response} ~ " + (" + ".join(terms) or "1")
