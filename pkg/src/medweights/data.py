"""Dataset representation, CSV ingestion, and basis-function construction.

A :class:`Dataset` is a validated view of one mediation sample: outcome
``y``, binary treatment ``d``, a mediator block ``m`` (n x q), and a
covariate block ``x`` (n x p).  :class:`BasisSpec` describes an ordered list
of term descriptors (raw columns, powers, interactions, constant) which
:func:`build_basis` evaluates into an immutable :class:`DesignMatrix`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "DataError",
    "Dataset",
    "BasisTerm",
    "BasisSpec",
    "DesignMatrix",
    "ColumnRoles",
    "load_csv",
    "write_csv",
    "build_basis",
    "raw_spec",
    "polynomial_spec",
]


class DataError(ValueError):
    """Raised for malformed input data, with row/column context attached."""


@dataclass(frozen=True)
class Dataset:
    """Row-aligned mediation sample with a binary treatment.

    All columns have length ``n``; treatment is 0/1 with both groups
    nonempty; no missing values survive validation.  Instances are immutable
    and safe to share across parallel workers.
    """

    y: np.ndarray
    d: np.ndarray
    m: np.ndarray
    x: np.ndarray
    mediator_names: tuple[str, ...] = ("m",)
    covariate_names: tuple[str, ...] = ()
    outcome_name: str = "y"
    treatment_name: str = "d"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        d = np.asarray(self.d)
        m = np.atleast_2d(np.asarray(self.m, dtype=float))
        x = np.asarray(self.x, dtype=float)
        if m.shape[0] == 1 and y.shape[0] != 1:
            m = m.T
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.size == 0:
            x = x.reshape(len(y), 0)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "x", x)
        n = y.shape[0]
        for name, arr in (("d", d), ("m", m), ("x", x)):
            if arr.shape[0] != n:
                raise DataError(f"column block {name!r} has {arr.shape[0]} rows, expected {n}")
        vals = np.unique(d)
        if not np.all(np.isin(vals, (0, 1))):
            raise DataError(f"non-binary treatment: values {vals.tolist()}")
        d = np.asarray(d, dtype=int)
        object.__setattr__(self, "d", d)
        if d.sum() == 0 or d.sum() == n:
            raise DataError("one treatment group is empty")
        for label, arr in ((self.outcome_name, y), ("mediators", m), ("covariates", x)):
            if arr.size and not np.all(np.isfinite(arr)):
                rows = np.unique(np.nonzero(~np.isfinite(np.atleast_2d(arr.T)))[-1])
                raise DataError(f"missing/non-finite values in {label} at rows {rows[:5].tolist()}")
        if len(self.mediator_names) != m.shape[1]:
            object.__setattr__(self, "mediator_names",
                               tuple(f"m{i+1}" for i in range(m.shape[1]))
                               if m.shape[1] != 1 else ("m",))
        if len(self.covariate_names) != x.shape[1]:
            object.__setattr__(self, "covariate_names",
                               tuple(f"x{i+1}" for i in range(x.shape[1])))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_treated(self) -> int:
        return int(self.d.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def column(self, name: str, allow_mediators: bool = True) -> np.ndarray:
        if name in self.covariate_names:
            return self.x[:, self.covariate_names.index(name)]
        if name in self.mediator_names:
            if not allow_mediators:
                raise DataError(f"mediator column {name!r} not allowed in a covariates-only basis")
            return self.m[:, self.mediator_names.index(name)]
        raise DataError(f"unknown column {name!r}")

    def is_dummy(self, name: str) -> bool:
        """A column with at most two distinct values is treated as a dummy."""
        return len(np.unique(self.column(name))) <= 2

    def to_frame(self) -> pd.DataFrame:
        cols = {self.outcome_name: self.y, self.treatment_name: self.d}
        for j, name in enumerate(self.mediator_names):
            cols[name] = self.m[:, j]
        for j, name in enumerate(self.covariate_names):
            cols[name] = self.x[:, j]
        return pd.DataFrame(cols)


@dataclass(frozen=True)
class ColumnRoles:
    outcome: str
    treatment: str
    mediators: tuple[str, ...]
    covariates: tuple[str, ...] = ()
    treatment_reference: str | None = None


def load_csv(path, roles: ColumnRoles | dict) -> Dataset:
    """Load and validate a mediation dataset from an RFC-4180 CSV file.

    The role map names the outcome, treatment, at least one mediator, and
    any covariates.  A two-level factor treatment is coerced to 0/1 using
    ``treatment_reference`` as the zero level.
    """
    if isinstance(roles, dict):
        roles = ColumnRoles(
            outcome=roles["outcome"],
            treatment=roles["treatment"],
            mediators=tuple(roles["mediators"]),
            covariates=tuple(roles.get("covariates", ())),
            treatment_reference=roles.get("treatment_reference"),
        )
    if not roles.mediators:
        raise DataError("role map must name at least one mediator")
    df = pd.read_csv(path, float_precision="round_trip")
    wanted = [roles.outcome, roles.treatment, *roles.mediators, *roles.covariates]
    missing = [c for c in wanted if c not in df.columns]
    if missing:
        raise DataError(f"missing column(s) {missing} in {path}")
    sub = df[wanted]
    na_mask = sub.isna()
    if na_mask.to_numpy().any():
        bad_rows = list(np.nonzero(na_mask.any(axis=1).to_numpy())[0][:5])
        bad_cols = [c for c in wanted if na_mask[c].any()]
        raise DataError(f"missing values in columns {bad_cols} at rows {bad_rows}")

    traw = df[roles.treatment]
    if traw.dtype == object or str(traw.dtype) == "category":
        levels = sorted(traw.astype(str).unique())
        if len(levels) != 2:
            raise DataError(
                f"non-binary treatment: column {roles.treatment!r} has levels {levels}"
            )
        ref = roles.treatment_reference
        if ref is None:
            raise DataError(
                f"treatment {roles.treatment!r} is a factor with levels {levels}; "
                "declare treatment_reference for the zero level"
            )
        if str(ref) not in levels:
            raise DataError(f"treatment_reference {ref!r} not among levels {levels}")
        d = (traw.astype(str) != str(ref)).astype(int).to_numpy()
    else:
        d = traw.to_numpy()
        vals = np.unique(d)
        if not np.all(np.isin(vals, (0, 1))):
            raise DataError(
                f"non-binary treatment: column {roles.treatment!r} contains {vals.tolist()}"
            )
        d = d.astype(int)

    return Dataset(
        y=df[roles.outcome].to_numpy(dtype=float),
        d=d,
        m=df[list(roles.mediators)].to_numpy(dtype=float),
        x=df[list(roles.covariates)].to_numpy(dtype=float) if roles.covariates
        else np.zeros((len(df), 0)),
        mediator_names=tuple(roles.mediators),
        covariate_names=tuple(roles.covariates),
        outcome_name=roles.outcome,
        treatment_name=roles.treatment,
    )


def write_csv(data: Dataset, path) -> None:
    """Write the dataset back to CSV; finite doubles round-trip bitwise."""
    data.to_frame().to_csv(path, index=False)


# ---------------------------------------------------------------------------
# basis construction
# ---------------------------------------------------------------------------

_KINDS = ("raw", "power", "interaction", "constant")


@dataclass(frozen=True)
class BasisTerm:
    kind: str
    columns: tuple[str, ...] = ()
    power: int = 1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DataError(f"unknown term kind {self.kind!r}")
        if self.kind in ("raw", "power") and len(self.columns) != 1:
            raise DataError("raw/power terms take exactly one column")
        if self.kind == "interaction" and not 2 <= len(self.columns) <= 3:
            raise DataError("interactions are pairwise or three-way")
        if self.kind == "constant" and self.columns:
            raise DataError("constant term takes no columns")
        if self.kind == "power" and self.power < 2:
            raise DataError("power terms need power >= 2")

    @property
    def name(self) -> str:
        if self.kind == "constant":
            return "const"
        if self.kind == "power":
            return f"{self.columns[0]}^{self.power}"
        return "*".join(self.columns)


@dataclass(frozen=True)
class BasisSpec:
    """Ordered, duplicate-free list of basis terms.

    ``standardize`` centers/scales each referenced raw column by its
    full-sample mean and standard deviation before powers and interactions
    are formed.  Evaluation is deterministic: identical spec and data give
    an identical matrix.
    """

    terms: tuple[BasisTerm, ...]
    include_constant: bool = False
    standardize: bool = False

    def __post_init__(self):
        terms = tuple(self.terms)
        names = [t.name for t in terms]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate basis terms: {dupes}")
        const_idx = [i for i, t in enumerate(terms) if t.kind == "constant"]
        if len(const_idx) > 1:
            raise DataError("constant term may appear at most once")
        if const_idx and const_idx[0] != len(terms) - 1:
            raise DataError("constant term must be the last column")
        if self.include_constant and not const_idx:
            terms = terms + (BasisTerm(kind="constant"),)
        object.__setattr__(self, "terms", terms)

    @property
    def has_constant(self) -> bool:
        return bool(self.terms) and self.terms[-1].kind == "constant"

    def referenced_columns(self) -> tuple[str, ...]:
        seen: list[str] = []
        for t in self.terms:
            for c in t.columns:
                if c not in seen:
                    seen.append(c)
        return tuple(seen)


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    column_names: tuple[str, ...]
    spec: BasisSpec
    standardization: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape[1] != len(self.column_names):
            raise DataError("column_names length must match matrix width")
        if not np.all(np.isfinite(vals)):
            raise DataError("design matrix contains non-finite entries")

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @property
    def constant_index(self) -> int | None:
        return self.k - 1 if self.spec.has_constant else None

    def nonconstant_count(self) -> int:
        return self.k - (1 if self.spec.has_constant else 0)


def raw_spec(columns, include_constant: bool = True, standardize: bool = False) -> BasisSpec:
    """Basis of raw columns, optionally with a trailing constant."""
    terms = tuple(BasisTerm(kind="raw", columns=(c,)) for c in columns)
    return BasisSpec(terms=terms, include_constant=include_constant,
                     standardize=standardize)


def interaction_terms(pairs) -> tuple[BasisTerm, ...]:
    return tuple(BasisTerm(kind="interaction", columns=tuple(p)) for p in pairs)


def polynomial_spec(data: Dataset, columns, max_power: int = 3,
                    interaction_order: int = 3, include_constant: bool = True,
                    standardize: bool = False) -> BasisSpec:
    """Raw columns, powers up to ``max_power`` (continuous columns only),
    then all pairwise/three-way interactions.

    Columns with at most two distinct values are treated as dummies and get
    no higher powers.
    """
    from itertools import combinations

    columns = list(columns)
    terms = [BasisTerm(kind="raw", columns=(c,)) for c in columns]
    for p in range(2, max_power + 1):
        for c in columns:
            if not data.is_dummy(c):
                terms.append(BasisTerm(kind="power", columns=(c,), power=p))
    if interaction_order >= 2:
        for pair in combinations(columns, 2):
            terms.append(BasisTerm(kind="interaction", columns=pair))
    if interaction_order >= 3:
        for trip in combinations(columns, 3):
            terms.append(BasisTerm(kind="interaction", columns=trip))
    return BasisSpec(terms=tuple(terms), include_constant=include_constant,
                     standardize=standardize)


def build_basis(data: Dataset, spec: BasisSpec, scope: str = "covariates+mediators",
                stats: dict | None = None) -> DesignMatrix:
    """Evaluate a basis spec on a dataset.

    ``scope`` is ``"covariates"`` for covariate-only bases or
    ``"covariates+mediators"`` when mediator terms are admitted.  When
    ``stats`` is given, those frozen (mean, sd) pairs are reused instead of
    recomputing them, so resampled evaluations share one transform.
    """
    if scope not in ("covariates", "covariates+mediators"):
        raise DataError(f"unknown scope {scope!r}")
    allow_m = scope == "covariates+mediators"

    raw: dict[str, np.ndarray] = {}
    used_stats: dict[str, tuple[float, float]] = {}
    for name in spec.referenced_columns():
        col = data.column(name, allow_mediators=allow_m)
        if spec.standardize:
            if stats is not None and name in stats:
                mean, sd = stats[name]
            else:
                mean, sd = float(col.mean()), float(col.std(ddof=0))
            if sd == 0.0:
                raise DataError(f"zero-variance column {name!r} under standardization")
            col = (col - mean) / sd
            used_stats[name] = (mean, sd)
        raw[name] = col

    cols, names = [], []
    for t in spec.terms:
        if t.kind == "constant":
            cols.append(np.ones(data.n))
        elif t.kind in ("raw", "power"):
            cols.append(raw[t.columns[0]] ** t.power)
        else:
            prod = raw[t.columns[0]].copy()
            for c in t.columns[1:]:
                prod = prod * raw[c]
            cols.append(prod)
        names.append(t.name)
    values = np.column_stack(cols) if cols else np.zeros((data.n, 0))
    return DesignMatrix(values=values, column_names=tuple(names), spec=spec,
                        standardization=used_stats)
