"""Human decision rules: parsing, the aggregated guideline function, compliance.

Rules files are UTF-8 text, one rule per line:

    rule <name> : if <clause> { (and|or) <clause> }* then predict <0|1>
    clause := <feature_name> (< | <= | > | >= | =) <number>

Lines starting with '#' are comments; blank lines are ignored. 'and' binds
tighter than 'or' (no parentheses), so an antecedent is a disjunction of
conjunction groups. Rules that avoid an outcome are written as rules that
predict the complementary label.

Antecedents are evaluated on RAW feature values (the units the rules were
authored in), never on standardized ones. Conflicts between rules resolve by
first match in authored order; if no antecedent holds the guideline returns
the not-applicable flag -1.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import RuleParseError, SchemaError

EQ_TOLERANCE = 1e-9

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<op><=|>=|<|>|=|:)"
    r"|(?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<word>[A-Za-z_][A-Za-z0-9_]*))"
)

_COMPARATORS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    # exact for integer-coded features, tolerant for reals
    "=": lambda a, b: np.abs(a - b) <= EQ_TOLERANCE,
}


@dataclass(frozen=True)
class Clause:
    feature: str
    op: str
    value: float


@dataclass(frozen=True)
class Rule:
    """One implication rule: antecedent in disjunctive normal form, consequent label."""

    name: str
    antecedent: tuple[tuple[Clause, ...], ...]   # OR over AND-groups
    label: int

    def features(self) -> set[str]:
        return {c.feature for group in self.antecedent for c in group}


@dataclass(frozen=True)
class RuleSet:
    """Ordered rules plus the (fixed) first-match conflict policy."""

    rules: tuple[Rule, ...]
    conflict_policy: str = "first-match"

    def __post_init__(self):
        if self.conflict_policy != "first-match":
            raise ValueError("only first-match conflict resolution is supported")
        names = [r.name for r in self.rules]
        if len(set(names)) != len(names):
            raise ValueError("rule names must be unique within a rule set")

    def bind(self, columns: list[str]) -> "BoundRuleSet":
        return BoundRuleSet(self, columns)


def _tokenize(line: str, lineno: int) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None or m.end() == pos:
            if line[pos:].strip() == "":
                break
            raise RuleParseError(f"unexpected character {line[pos:].strip()[0]!r}", lineno)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens, lineno):
        self.tokens = tokens
        self.lineno = lineno
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self, kind=None, value=None, what=""):
        k, v = self.peek()
        if k is None:
            raise RuleParseError(f"unexpected end of rule, expected {what or value or kind}",
                                 self.lineno)
        if (kind is not None and k != kind) or (value is not None and v != value):
            raise RuleParseError(f"expected {what or value or kind}, found {v!r}", self.lineno)
        self.i += 1
        return v

    def clause(self) -> Clause:
        feature = self.take("word", what="feature name")
        if feature in ("and", "or", "then"):
            raise RuleParseError(f"expected feature name, found keyword {feature!r}", self.lineno)
        op = self.take("op", what="comparison operator")
        if op == ":":
            raise RuleParseError("':' is not a comparison operator", self.lineno)
        value = float(self.take("number", what="numeric threshold"))
        return Clause(feature, op, value)

    def antecedent(self) -> tuple[tuple[Clause, ...], ...]:
        groups: list[list[Clause]] = [[self.clause()]]
        while True:
            k, v = self.peek()
            if k == "word" and v == "and":
                self.i += 1
                groups[-1].append(self.clause())
            elif k == "word" and v == "or":
                self.i += 1
                groups.append([self.clause()])
            else:
                break
        return tuple(tuple(g) for g in groups)


def parse_rule_line(line: str, lineno: int = 0) -> Rule:
    p = _Parser(_tokenize(line, lineno), lineno)
    p.take("word", "rule")
    name = p.take("word", what="rule name")
    p.take("op", ":", what="':'")
    p.take("word", "if")
    antecedent = p.antecedent()
    p.take("word", "then")
    p.take("word", "predict")
    label_tok = p.take("number", what="label 0 or 1")
    if label_tok not in ("0", "1"):
        raise RuleParseError(f"consequent label must be 0 or 1, found {label_tok!r}", lineno)
    if p.peek()[0] is not None:
        raise RuleParseError(f"trailing tokens after rule: {p.peek()[1]!r}", lineno)
    return Rule(name=name, antecedent=antecedent, label=int(label_tok))


def parse_rules_text(text: str) -> RuleSet:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rules.append(parse_rule_line(line, lineno))
    return RuleSet(tuple(rules))


def parse_rules_file(path) -> RuleSet:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_rules_text(fh.read())


def format_rules(rs: RuleSet) -> str:
    """Render a RuleSet back into the rules-file grammar."""
    lines = []
    for rule in rs.rules:
        groups = [" and ".join(f"{c.feature} {c.op} {_fmt_num(c.value)}" for c in group)
                  for group in rule.antecedent]
        lines.append(f"rule {rule.name} : if {' or '.join(groups)} then predict {rule.label}")
    return "\n".join(lines) + "\n"


def _fmt_num(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() else repr(float(v))


class BoundRuleSet:
    """A RuleSet compiled against a dataset schema; immutable after binding."""

    def __init__(self, ruleset: RuleSet, columns: list[str]):
        index = {name: j for j, name in enumerate(columns)}
        for rule in ruleset.rules:
            for feat in sorted(rule.features()):
                if feat not in index:
                    raise SchemaError(
                        f"rule {rule.name!r} references unknown feature {feat!r}")
        self.ruleset = ruleset
        self.columns = list(columns)
        self._index = index

    @property
    def rules(self) -> tuple[Rule, ...]:
        return self.ruleset.rules

    def antecedent_matrix(self, X_raw: np.ndarray) -> np.ndarray:
        """(N, K) boolean matrix: antecedent of rule k holds on row n."""
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
        n = X_raw.shape[0]
        out = np.empty((n, len(self.rules)), dtype=bool)
        for k, rule in enumerate(self.rules):
            fired = np.zeros(n, dtype=bool)
            for group in rule.antecedent:
                holds = np.ones(n, dtype=bool)
                for c in group:
                    holds &= _COMPARATORS[c.op](X_raw[:, self._index[c.feature]], c.value)
                fired |= holds
            out[:, k] = fired
        return out

    def guideline(self, X_raw: np.ndarray) -> np.ndarray:
        """Aggregated guideline values in {1, 0, -1}, first match wins."""
        ant = self.antecedent_matrix(X_raw)
        out = np.full(ant.shape[0], -1, dtype=int)
        decided = np.zeros(ant.shape[0], dtype=bool)
        for k, rule in enumerate(self.rules):
            hit = ant[:, k] & ~decided
            out[hit] = rule.label
            decided |= ant[:, k]
        return out


def evaluate_guideline(rs: RuleSet, x_raw: np.ndarray, columns: list[str]) -> int:
    """Guideline output for a single raw feature vector."""
    return int(rs.bind(columns).guideline(np.asarray(x_raw, dtype=float)[None, :])[0])


def compliance_matrix(bound: BoundRuleSet, X_raw: np.ndarray, yhat: np.ndarray,
                      tau: float = 0.5) -> np.ndarray:
    """Per-(row, rule) compliance codes for predictions thresholded at tau.

    +1: antecedent holds and the predicted label equals the rule's consequent;
     0: antecedent holds but the prediction disagrees;
    -1: antecedent does not hold (rule not applicable).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("threshold tau must lie in (0, 1)")
    ant = bound.antecedent_matrix(X_raw)
    pred = (np.asarray(yhat) >= tau).astype(int)
    labels = np.array([r.label for r in bound.rules])
    followed = pred[:, None] == labels[None, :]
    return np.where(~ant, -1, np.where(followed, 1, 0))


def rule_report(bound: BoundRuleSet, X_raw: np.ndarray, y: np.ndarray,
                yhat: np.ndarray, tau: float = 0.5) -> list[dict]:
    """Per-rule applicability, compliance among applicable rows, and rule accuracy.

    Rates are percentages. A rule applicable to zero rows reports compliance
    and accuracy as None rather than 0.
    """
    ant = bound.antecedent_matrix(X_raw)
    codes = compliance_matrix(bound, X_raw, yhat, tau)
    y = np.asarray(y)
    report = []
    n = ant.shape[0]
    for k, rule in enumerate(bound.rules):
        mask = ant[:, k]
        n_app = int(mask.sum())
        entry = {
            "name": rule.name,
            "applicability_pct": 100.0 * n_app / n,
            "compliance_pct": None,
            "rule_accuracy_pct": None,
        }
        if n_app > 0:
            entry["compliance_pct"] = 100.0 * float(np.mean(codes[mask, k] == 1))
            entry["rule_accuracy_pct"] = 100.0 * float(np.mean(y[mask] == rule.label))
        report.append(entry)
    return report
