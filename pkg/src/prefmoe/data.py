"""Dataset ingestion, standardization, splitting, synthesis, model persistence.

CSV files carry a header row, numeric feature columns, and a final column
named "label" with values in {0, 1}. Model files are a versioned UTF-8 text
format with every real serialized as lossless hexadecimal floating point, so
save/load round trips are bit-exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataFormatError, ModelFormatError
from .model import Dataset, MoEModel, Standardization
from .rules import Clause, Rule, RuleSet

MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv(path) -> Dataset:
    """Parse a dataset CSV; row order preserved, no standardization applied."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataFormatError(f"{path}: need at least one feature column and a label column",
                                  row=1)
        if header[-1] != "label":
            raise DataFormatError(f"{path}: final column must be named 'label', found "
                                  f"{header[-1]!r}", row=1, column=len(header))
        columns = header[:-1]
        rows, labels = [], []
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(header):
                raise DataFormatError(f"{path}: expected {len(header)} cells, found {len(cells)}",
                                      row=lineno)
            values = []
            for j, cell in enumerate(cells[:-1], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(f"{path}: non-numeric cell {cell!r}",
                                          row=lineno, column=j) from None
                if not math.isfinite(v):
                    raise DataFormatError(f"{path}: non-finite cell {cell!r}",
                                          row=lineno, column=j)
                values.append(v)
            label_cell = cells[-1]
            try:
                label = float(label_cell)
            except ValueError:
                raise DataFormatError(f"{path}: non-numeric label {label_cell!r}",
                                      row=lineno, column=len(header)) from None
            if label not in (0.0, 1.0):
                raise DataFormatError(f"{path}: label must be 0 or 1, found {label_cell!r}",
                                      row=lineno, column=len(header))
            rows.append(values)
            labels.append(int(label))
        if not rows:
            raise DataFormatError(f"{path}: no data rows")
    return Dataset(np.array(rows, dtype=float), np.array(labels, dtype=int), columns)


def write_csv(data: Dataset, path) -> None:
    """Write a dataset CSV; floats use repr so a reload is value-exact."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.columns) + ["label"])
        for i in range(data.n_rows):
            writer.writerow([repr(float(v)) for v in data.X[i]] + [int(data.y[i])])


# ---------------------------------------------------------------------------
# Standardization and splitting
# ---------------------------------------------------------------------------

def standardize(data: Dataset) -> tuple[Dataset, Standardization]:
    """Map non-binary columns to zero mean / unit variance (population std).

    Binary 0/1 indicator columns pass through untouched; constant columns map
    to 0 with std recorded as 1. The returned record reproduces the transform
    exactly when applied to the raw data again.
    """
    mean = np.zeros(data.n_features)
    std = np.ones(data.n_features)
    for j in range(data.n_features):
        col = data.X[:, j]
        if np.all(np.isin(col, (0.0, 1.0))):
            continue                      # binary indicator: keep natural units
        s = float(np.std(col))            # population (1/N) convention
        mean[j] = float(np.mean(col))
        std[j] = s if s > 0 else 1.0      # constant column maps to 0
    record = Standardization(mean, std)
    return Dataset(record.apply(data.X), data.y, list(data.columns), record), record


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test fractions (sum to 1) plus the shuffle seed."""

    train: float
    val: float
    test: float
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or self.train <= 0:
            raise ValueError("fractions must be nonnegative with train > 0")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass
class Split:
    train: Dataset
    val: Dataset | None
    test: Dataset | None
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


def split_dataset(data: Dataset, spec: SplitSpec) -> Split:
    """Seeded shuffle then contiguous slicing; fractions realized within one row."""
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(data.n_rows)
    n_train = int(round(spec.train * data.n_rows))
    n_val = int(round(spec.val * data.n_rows))
    n_train = max(1, min(n_train, data.n_rows))
    idx_train = order[:n_train]
    idx_val = order[n_train:n_train + n_val]
    idx_test = order[n_train + n_val:]
    return Split(
        train=data.subset(np.sort(idx_train)),
        val=data.subset(np.sort(idx_val)) if idx_val.size else None,
        test=data.subset(np.sort(idx_test)) if idx_test.size else None,
        train_idx=np.sort(idx_train),
        val_idx=np.sort(idx_val),
        test_idx=np.sort(idx_test),
    )


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned box: (feature index, lower, upper) per constrained axis.

    Either bound may be None for a half-open side.
    """

    bounds: tuple[tuple[int, float | None, float | None], ...]

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        inside = np.ones(X.shape[0], dtype=bool)
        for j, lo, hi in self.bounds:
            if lo is not None:
                inside &= X[:, j] >= lo
            if hi is not None:
                inside &= X[:, j] <= hi
        return inside

    def to_rule(self, columns: list[str], name: str = "synthetic_region",
                label: int = 1) -> Rule:
        clauses = []
        for j, lo, hi in self.bounds:
            if lo is not None:
                clauses.append(Clause(columns[j], ">=", float(lo)))
            if hi is not None:
                clauses.append(Clause(columns[j], "<=", float(hi)))
        if not clauses:
            raise ValueError("box must constrain at least one axis")
        return Rule(name=name, antecedent=(tuple(clauses),), label=label)


@dataclass(frozen=True)
class SynthConfig:
    n_rows: int
    n_features: int
    rule_region: Box
    alpha: float           # probability an in-region label follows the rule consequent
    class_balance: float = 0.5
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rows < 1 or self.n_features < 1:
            raise ValueError("n_rows and n_features must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError("class_balance must lie in (0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass
class SynthGroundTruth:
    """Sidecar record of how a synthetic dataset was generated."""

    beta: np.ndarray
    intercept: float
    alpha: float
    class_balance_target: float
    realized_positive_rate: float
    in_region_rows: int
    in_region_positive_rate: float | None
    empty_region_warning: bool
    seed: int

    def to_text(self) -> str:
        lines = [
            "synthetic_ground_truth: 1",
            f"seed: {self.seed}",
            f"alpha: {self.alpha!r}",
            f"intercept: {self.intercept!r}",
            "beta: " + ",".join(repr(float(b)) for b in self.beta),
            f"class_balance_target: {self.class_balance_target!r}",
            f"realized_positive_rate: {self.realized_positive_rate!r}",
            f"in_region_rows: {self.in_region_rows}",
            f"in_region_positive_rate: "
            f"{'none' if self.in_region_positive_rate is None else repr(self.in_region_positive_rate)}",
            f"empty_region_warning: {self.empty_region_warning}",
        ]
        return "\n".join(lines) + "\n"


def _calibrate_intercept(logits: np.ndarray, target: float) -> float:
    """Bisect the intercept so the mean Bernoulli parameter hits the target rate."""
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(np.mean(expit(logits + mid))) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_synthetic(cfg: SynthConfig) -> tuple[Dataset, RuleSet, SynthGroundTruth]:
    """Gaussian features, latent logistic labels, and one promote rule on a box.

    Inside the rule region each label is replaced by the rule consequent (1)
    with probability alpha; alpha = 1 makes the rule perfectly predictive
    in-region, alpha = 0 leaves labels independent of it.
    """
    rng = np.random.default_rng(cfg.seed)
    X = rng.standard_normal((cfg.n_rows, cfg.n_features))
    beta = rng.standard_normal(cfg.n_features) * (2.0 / np.sqrt(cfg.n_features))
    # Region membership must not leak outcome signal: only alpha couples the
    # rule to the labels, so region-constrained axes carry no latent weight.
    for j, _, _ in cfg.rule_region.bounds:
        beta[j] = 0.0
    noise = rng.standard_normal(cfg.n_rows) * cfg.noise_sigma
    logits = X @ beta + noise
    intercept = _calibrate_intercept(logits, cfg.class_balance)
    y = (rng.random(cfg.n_rows) < expit(logits + intercept)).astype(int)

    in_region = cfg.rule_region.contains(X)
    follow = rng.random(cfg.n_rows) < cfg.alpha
    y = np.where(in_region & follow, 1, y)

    columns = [f"x{j}" for j in range(cfg.n_features)]
    ruleset = RuleSet((cfg.rule_region.to_rule(columns),))
    n_in = int(in_region.sum())
    truth = SynthGroundTruth(
        beta=beta,
        intercept=intercept,
        alpha=cfg.alpha,
        class_balance_target=cfg.class_balance,
        realized_positive_rate=float(np.mean(y)),
        in_region_rows=n_in,
        in_region_positive_rate=float(np.mean(y[in_region])) if n_in else None,
        empty_region_warning=n_in == 0,
        seed=cfg.seed,
    )
    return Dataset(X, y, columns), ruleset, truth


# ---------------------------------------------------------------------------
# Model persistence
# ---------------------------------------------------------------------------

def _hex(v: float) -> str:
    return float(v).hex()


def _from_hex(token: str, what: str) -> float:
    try:
        v = float.fromhex(token)
    except ValueError:
        raise ModelFormatError(f"bad float token {token!r} in {what}") from None
    if not math.isfinite(v):
        raise ModelFormatError(f"non-finite value {token!r} in {what}")
    return v


def save_model(model: MoEModel, path) -> None:
    """Write the versioned text model format; load_model(save) is bit-exact."""
    lines = [
        "[meta]",
        f"format_version = {MODEL_FORMAT_VERSION}",
        f"d = {model.n_features}",
        f"gamma = {_hex(model.gamma)}",
        f"epsilon = {_hex(model.epsilon)}",
        f"delta = {_hex(model.delta)}",
        "reference_loss = " + ("none" if model.reference_loss is None
                               else _hex(model.reference_loss)),
        "[standardization]",
    ]
    if model.standardization is None:
        lines.append("none")
    else:
        names = model.columns or [f"x{j}" for j in range(model.n_features)]
        for name, m, s in zip(names, model.standardization.mean, model.standardization.std):
            lines.append(f"{name} {_hex(m)} {_hex(s)}")
    lines.append("[theta]")
    lines.extend(_hex(v) for v in model.theta)
    lines.append("[w]")
    lines.extend(_hex(v) for v in model.w)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _expect(lines: list[str], i: int, wanted: str) -> int:
    if i >= len(lines):
        raise ModelFormatError(f"truncated model file: expected {wanted}")
    if lines[i] != wanted:
        raise ModelFormatError(f"expected {wanted!r}, found {lines[i]!r}")
    return i + 1


def load_model(path) -> MoEModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    i = _expect(lines, 0, "[meta]")
    meta = {}
    while i < len(lines) and not lines[i].startswith("["):
        key, _, value = lines[i].partition("=")
        meta[key.strip()] = value.strip()
        i += 1
    for key in ("format_version", "d", "gamma", "epsilon", "delta", "reference_loss"):
        if key not in meta:
            raise ModelFormatError(f"missing meta entry {key!r}")
    if meta["format_version"] != str(MODEL_FORMAT_VERSION):
        raise ModelFormatError(
            f"unsupported format_version {meta['format_version']!r} "
            f"(expected {MODEL_FORMAT_VERSION})")
    try:
        d = int(meta["d"])
    except ValueError:
        raise ModelFormatError(f"bad dimension {meta['d']!r}") from None

    i = _expect(lines, i, "[standardization]")
    standardization = None
    columns: list[str] = []
    if i < len(lines) and lines[i] == "none":
        i += 1
    else:
        mean, std = np.zeros(d), np.ones(d)
        for j in range(d):
            if i >= len(lines) or lines[i].startswith("["):
                raise ModelFormatError("truncated standardization section")
            parts = lines[i].split()
            if len(parts) != 3:
                raise ModelFormatError(f"bad standardization line {lines[i]!r}")
            columns.append(parts[0])
            mean[j] = _from_hex(parts[1], "standardization mean")
            std[j] = _from_hex(parts[2], "standardization std")
            i += 1
        standardization = Standardization(mean, std)

    vectors = {}
    for section in ("theta", "w"):
        i = _expect(lines, i, f"[{section}]")
        vals = []
        for _ in range(d + 1):
            if i >= len(lines) or lines[i].startswith("["):
                raise ModelFormatError(f"truncated [{section}] section")
            vals.append(_from_hex(lines[i], section))
            i += 1
        vectors[section] = np.array(vals)
    if i != len(lines):
        raise ModelFormatError(f"trailing content after [w]: {lines[i]!r}")

    return MoEModel(
        theta=vectors["theta"],
        w=vectors["w"],
        gamma=_from_hex(meta["gamma"], "gamma"),
        epsilon=_from_hex(meta["epsilon"], "epsilon"),
        reference_loss=None if meta["reference_loss"] == "none"
        else _from_hex(meta["reference_loss"], "reference_loss"),
        standardization=standardization,
        columns=columns,
    )
