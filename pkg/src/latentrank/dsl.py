"""Textual model-description language.

The grammar is a small lavaan-style subset:

    statement  := loading | covariance | group-header
    loading    := name "=~" term ("+" term)*
    covariance := name "~~" term ("+" term)*
    group-header := "group" ":" integer
    term       := (modifier "*")* name
    modifier   := number            # fix the cell to a constant
                | name              # label the free cell (equality constraint)
                | "start(" number ")"   # start value for the free cell

Statements are newline-terminated; ``#`` starts a comment.  Names are
identifiers ``[A-Za-z_][A-Za-z0-9_]*``.  A name is latent if it ever appears
on the left of ``=~``, observed otherwise.  Modifiers may be chained
(``lab*start(0.4)*y1``) to label a cell and set its start value at once.

Semantics:

* Unmodified loadings are free with start 0.5; the first indicator of a
  latent is not auto-fixed.
* Free variances of all observed and latent variables are added
  automatically unless declared; their auto label is ``name~~name``, so the
  same variable observed in several groups shares one residual variance.
* Cells never mentioned are fixed at zero.
* A ``group: k`` header scopes the following statements to group k (1-based).
  Statements before the first header apply to every group and create shared
  parameters; auto labels of group-scoped statements are prefixed ``gk:`` so
  they stay group-specific.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .model import (
    DEFAULT_COVARIANCE_START,
    DEFAULT_LOADING_START,
    DEFAULT_VARIANCE_START,
    FACTOR_COV,
    GroupDef,
    LOADING,
    ModelSpec,
    ParameterEntry,
    RESIDUAL_COV,
    validate,
)

ERROR = "error"
WARNING = "warning"

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_NUMBER_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")
_GROUP_RE = re.compile(r"group\s*:\s*(\S+)\s*\Z")
_START_RE = re.compile(r"start\s*\(([^)]*)\)\s*\Z")


@dataclass(frozen=True)
class ModelSource:
    """Model text plus the number of groups it instantiates."""

    text: str
    n_groups: int = 1

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("model text is empty")
        if self.n_groups < 1:
            raise ValueError("group count must be >= 1")


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int      # 1-based
    column: int    # 1-based
    message: str
    severity: str = ERROR

    def __str__(self):
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


class ModelSyntaxError(ValueError):
    """Raised by ParseResult.require() when parsing failed."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics) or "parse failed")


@dataclass
class ParseResult:
    spec: ModelSpec | None
    diagnostics: list[ParseDiagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.spec is not None

    def require(self) -> ModelSpec:
        if self.spec is None:
            raise ModelSyntaxError([d for d in self.diagnostics
                                    if d.severity == ERROR])
        return self.spec


@dataclass
class _Term:
    name: str
    line: int
    column: int
    fixed: float | None = None
    label: str | None = None
    start: float | None = None


@dataclass
class _Statement:
    line: int
    column: int
    op: str                  # "=~" or "~~"
    lhs: str
    terms: list[_Term]
    group: int | None        # None = applies to all groups


def _strip_comment(line: str) -> str:
    k = line.find("#")
    return line if k < 0 else line[:k]


def _split_top(text: str, base_col: int, sep: str):
    """Split on a separator outside parentheses, keeping 1-based columns."""
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(0, depth - 1)
        elif ch == sep and depth == 0:
            parts.append((text[start:i], base_col + start))
            start = i + 1
    parts.append((text[start:], base_col + start))
    return parts


class _Parser:
    def __init__(self, src: ModelSource):
        self.src = src
        self.diagnostics: list[ParseDiagnostic] = []

    def error(self, line: int, column: int, message: str):
        self.diagnostics.append(ParseDiagnostic(line, column, message, ERROR))

    def warn(self, line: int, column: int, message: str):
        self.diagnostics.append(ParseDiagnostic(line, column, message, WARNING))

    # -- tokenizing ---------------------------------------------------------

    def read_statements(self) -> list[_Statement]:
        statements: list[_Statement] = []
        scope: int | None = None
        for lineno, raw in enumerate(self.src.text.splitlines(), start=1):
            line = _strip_comment(raw)
            if not line.strip():
                continue
            col0 = len(line) - len(line.lstrip()) + 1
            body = line.strip()

            m = _GROUP_RE.fullmatch(body)
            if m is not None:
                try:
                    k = int(m.group(1))
                except ValueError:
                    self.error(lineno, col0, f"group header needs an integer, "
                                             f"got {m.group(1)!r}")
                    continue
                if not 1 <= k <= self.src.n_groups:
                    self.error(lineno, col0, f"group {k} outside 1..{self.src.n_groups}")
                    continue
                scope = k - 1
                continue

            op, op_pos = None, -1
            for cand in ("=~", "~~"):
                p = line.find(cand)
                if p >= 0 and (op is None or p < op_pos):
                    op, op_pos = cand, p
            if op is None:
                self.error(lineno, col0, "statement needs an operator '=~' or '~~'")
                continue

            lhs = line[:op_pos].strip()
            if not _IDENT_RE.fullmatch(lhs):
                self.error(lineno, col0, f"left-hand side {lhs!r} is not a valid name")
                continue

            rhs, rhs_col = line[op_pos + 2:], op_pos + 3
            terms = []
            for chunk, ccol in _split_top(rhs, rhs_col, "+"):
                term = self.read_term(chunk, lineno, ccol)
                if term is not None:
                    terms.append(term)
            if terms:
                statements.append(_Statement(lineno, col0, op, lhs, terms, scope))
        return statements

    def read_term(self, chunk: str, line: int, col: int) -> _Term | None:
        pieces = _split_top(chunk, col, "*")
        name_text, name_col = pieces[-1]
        name = name_text.strip()
        name_col += len(name_text) - len(name_text.lstrip())
        if not _IDENT_RE.fullmatch(name):
            self.error(line, name_col if name else col,
                       f"expected a variable name, got {name!r}")
            return None
        term = _Term(name=name, line=line, column=name_col)
        for mod_text, mcol in pieces[:-1]:
            mod = mod_text.strip()
            mcol += len(mod_text) - len(mod_text.lstrip())
            sm = _START_RE.fullmatch(mod)
            if sm is not None:
                if not _NUMBER_RE.fullmatch(sm.group(1).strip()):
                    self.error(line, mcol, f"malformed numeric literal "
                                           f"{sm.group(1).strip()!r} in start()")
                    return None
                if term.start is not None:
                    self.error(line, mcol, "term has more than one start() modifier")
                    return None
                term.start = float(sm.group(1))
            elif _NUMBER_RE.fullmatch(mod):
                if term.fixed is not None:
                    self.error(line, mcol, "term is fixed twice")
                    return None
                term.fixed = float(mod)
            elif _IDENT_RE.fullmatch(mod):
                if term.label is not None:
                    self.error(line, mcol, "term has more than one label")
                    return None
                term.label = mod
            else:
                self.error(line, mcol, f"malformed modifier {mod!r}")
                return None
        if term.fixed is not None and (term.label or term.start is not None):
            self.error(line, col, f"fixed cell {term.name!r} cannot carry "
                                  "a label or start value")
            return None
        return term

    # -- semantics ----------------------------------------------------------

    def build(self) -> ModelSpec | None:
        statements = self.read_statements()
        latents = {s.lhs for s in statements if s.op == "=~"}
        has_measurement = bool(latents)
        G = self.src.n_groups

        observed: list[list[str]] = [[] for _ in range(G)]
        latent: list[list[str]] = [[] for _ in range(G)]

        def groups_of(st: _Statement):
            return range(G) if st.group is None else (st.group,)

        def register(g: int, name: str) -> None:
            pool = latent[g] if name in latents else observed[g]
            if name not in pool:
                pool.append(name)

        # mention pass: fixes per-group variable order.  In a model with a
        # measurement part, covariance statements cannot introduce new names;
        # without one, they declare observed variables.
        for st in statements:
            for g in groups_of(st):
                if st.op == "=~":
                    register(g, st.lhs)
                    for t in st.terms:
                        if t.name not in latents:
                            register(g, t.name)
                else:
                    for name in [st.lhs] + [t.name for t in st.terms]:
                        if has_measurement and name not in latents \
                                and name not in observed[g]:
                            continue
                        register(g, name)

        entries: list[ParameterEntry] = []
        slots: dict[tuple, ParameterEntry] = {}
        # label -> [free, explicit value or None, default value]
        labels: dict[str, list] = {}

        def add_entry(g, matrix, row, col, free, label, explicit, default,
                      line, column):
            slot = (g, matrix, row, col)
            prior = slots.get(slot)
            if prior is not None:
                self.error(line, column, f"slot for {label!r} already declared "
                                         f"(as {prior.label!r})")
                return
            if label in labels:
                lfree, lexp, ldef = labels[label]
                if lfree != free:
                    self.error(line, column, f"label {label!r} is used as both "
                                             "free and fixed")
                    return
                if explicit is not None:
                    if lexp is not None and lexp != explicit:
                        kind = "fixed values" if not free else "start values"
                        self.error(line, column, f"label {label!r} has conflicting "
                                                 f"{kind} {lexp} and {explicit}")
                        return
                    labels[label][1] = explicit
            else:
                labels[label] = [free, explicit, default]
            e = ParameterEntry(label=label, group=g, matrix=matrix,
                               row=row, col=col, free=free, value=0.0)
            slots[slot] = e
            entries.append(e)

        reported: set[tuple] = set()

        def report_once(line, column, message):
            if (line, column, message) not in reported:
                reported.add((line, column, message))
                self.error(line, column, message)

        for st in statements:
            for g in groups_of(st):
                auto_prefix = "" if st.group is None else f"g{g + 1}:"
                if st.op == "=~":
                    col = latent[g].index(st.lhs)
                    for t in st.terms:
                        if t.name in latents:
                            report_once(t.line, t.column,
                                        f"{t.name!r} is a latent variable; "
                                        "loadings on latents are not supported")
                            continue
                        row = observed[g].index(t.name)
                        free = t.fixed is None
                        label = t.label or f"{auto_prefix}{st.lhs}=~{t.name}"
                        add_entry(g, LOADING, row, col, free, label,
                                  t.fixed if not free else t.start,
                                  DEFAULT_LOADING_START, t.line, t.column)
                else:
                    lhs_latent = st.lhs in latents
                    if has_measurement and not lhs_latent \
                            and st.lhs not in observed[g]:
                        report_once(st.line, st.column,
                                    f"unknown variable name {st.lhs!r}")
                        continue
                    for t in st.terms:
                        if has_measurement and t.name not in latents \
                                and t.name not in observed[g]:
                            report_once(t.line, t.column,
                                        f"unknown variable name {t.name!r}")
                            continue
                        rhs_latent = t.name in latents
                        if lhs_latent != rhs_latent:
                            report_once(t.line, t.column,
                                        "covariance between a latent and an "
                                        "observed variable is not supported")
                            continue
                        names = latent[g] if lhs_latent else observed[g]
                        matrix = FACTOR_COV if lhs_latent else RESIDUAL_COV
                        i, j = names.index(st.lhs), names.index(t.name)
                        free = t.fixed is None
                        label = t.label or f"{auto_prefix}{st.lhs}~~{t.name}"
                        default = (DEFAULT_VARIANCE_START if i == j
                                   else DEFAULT_COVARIANCE_START)
                        if not free and i == j and t.fixed < 0:
                            self.warn(t.line, t.column,
                                      f"variance of {t.name!r} fixed to a "
                                      f"negative value {t.fixed}")
                        add_entry(g, matrix, i, j, free, label,
                                  t.fixed if not free else t.start,
                                  default, t.line, t.column)
                        if i != j:
                            add_entry(g, matrix, j, i, free, label,
                                      t.fixed if not free else t.start,
                                      default, t.line, t.column)

        # auto-added free variances (observed residuals and latent variances)
        for g in range(G):
            for names, matrix in ((observed[g], RESIDUAL_COV),
                                  (latent[g], FACTOR_COV)):
                for i, name in enumerate(names):
                    if (g, matrix, i, i) not in slots:
                        add_entry(g, matrix, i, i, True, f"{name}~~{name}",
                                  None, DEFAULT_VARIANCE_START, 0, 0)

        if any(d.severity == ERROR for d in self.diagnostics):
            return None

        resolved = {lab: (exp if exp is not None else dflt)
                    for lab, (free, exp, dflt) in labels.items()}
        entries = [ParameterEntry(e.label, e.group, e.matrix, e.row, e.col,
                                  e.free, resolved[e.label]) for e in entries]
        free_order: list[str] = []
        for e in entries:
            if e.free and e.label not in free_order:
                free_order.append(e.label)

        spec = ModelSpec(groups=tuple(GroupDef(tuple(observed[g]), tuple(latent[g]))
                                      for g in range(G)),
                         entries=tuple(entries),
                         free_labels=tuple(free_order))
        for issue in validate(spec):
            self.error(0, 0, f"inconsistent model: {issue}")
        if any(d.severity == ERROR for d in self.diagnostics):
            return None
        return spec


def parse_model(src: ModelSource | str, n_groups: int | None = None) -> ParseResult:
    """Parse model text into a validated ModelSpec.

    Returns a ParseResult whose ``spec`` is None when errors were found; all
    errors and warnings are reported with line/column positions.
    """
    if isinstance(src, str):
        src = ModelSource(src, n_groups or 1)
    elif n_groups is not None and n_groups != src.n_groups:
        raise ValueError("conflicting group counts")
    parser = _Parser(src)
    spec = parser.build()
    return ParseResult(spec, parser.diagnostics)


def _sanitize_label(label: str, taken: set[str]) -> str:
    if _IDENT_RE.fullmatch(label):
        return label
    cand = (label.replace("=~", "_BY_").replace("~~", "_WITH_")
            .replace(":", "_"))
    cand = re.sub(r"[^A-Za-z0-9_]", "_", cand)
    if not re.match(r"[A-Za-z_]", cand):
        cand = "p_" + cand
    base, k = cand, 2
    while cand in taken:
        cand = f"{base}_{k}"
        k += 1
    return cand


def format_spec(spec: ModelSpec) -> str:
    """Render a ModelSpec as model text that parses back to an equivalent spec.

    Every cell is written explicitly with its label and value, so the only
    difference on round-trip is the renaming of auto-generated labels to
    identifier-safe forms.
    """
    taken: set[str] = set()
    renames: dict[str, str] = {}
    for e in spec.entries:
        if e.label not in renames:
            renames[e.label] = _sanitize_label(e.label, taken)
            taken.add(renames[e.label])

    def term(e: ParameterEntry, name: str) -> str:
        if e.free:
            return f"{renames[e.label]}*start({e.value!r})*{name}"
        return f"{e.value!r}*{name}"

    by_slot = {(e.group, e.matrix, e.row, e.col): e for e in spec.entries}
    lines: list[str] = []
    for g, gdef in enumerate(spec.groups):
        if spec.n_groups > 1:
            lines.append(f"group: {g + 1}")
        for j, lname in enumerate(gdef.latent):
            terms = [term(by_slot[(g, LOADING, i, j)], v)
                     for i, v in enumerate(gdef.observed)
                     if (g, LOADING, i, j) in by_slot]
            if terms:
                lines.append(f"{lname} =~ " + " + ".join(terms))
        for names, matrix in ((gdef.latent, FACTOR_COV),
                              (gdef.observed, RESIDUAL_COV)):
            for j in range(len(names)):
                for i in range(j, len(names)):
                    e = by_slot.get((g, matrix, i, j))
                    if e is not None:
                        lines.append(f"{names[i]} ~~ {term(e, names[j])}")
    return "\n".join(lines) + "\n"
