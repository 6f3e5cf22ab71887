"""Logistic regression of prediction correctness on socio-demographic
dummies, with per-question intercepts and optional interaction terms.

Fitting is plain maximum likelihood via iteratively reweighted least
squares (Newton steps).  Standard errors come from the inverse observed
information; p-values are two-sided Wald tests against the normal, starred
at the 0.01 / 0.05 / 0.1 levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import CollinearColumn, EmptyDesign, Separation, Singular
from .gateway import Prediction

SEPARATION_BETA = 30.0


@dataclass(frozen=True)
class ModelSpec:
    """Which attributes enter the model, and which pairs interact."""

    main_effects: tuple[str, ...]
    interactions: tuple[tuple[str, str], ...] = ()
    question_fixed_effects: bool = True
    name: str = "model"

    def __post_init__(self):
        mains = set(self.main_effects)
        for a, b in self.interactions:
            if a not in mains or b not in mains:
                raise ValueError(
                    f"interaction ({a!r}, {b!r}) names an attribute outside "
                    f"the main effects"
                )


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    rows: tuple[tuple[str, str], ...]  # (respondent_id, question_id)
    references: dict[str, str]


@dataclass
class FitResult:
    columns: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    stars: tuple[str, ...]
    log_likelihood: float
    iterations: int
    converged: bool

    def coef(self, column: str) -> float:
        return float(self.beta[self.columns.index(column)])

    def se_of(self, column: str) -> float:
        return float(self.se[self.columns.index(column)])


def stars_for(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def build_design(
    dataset: Dataset,
    predictions: Sequence[Prediction],
    spec: ModelSpec,
    policy: str = "incorrect",
) -> DesignMatrix:
    """Assemble the dummy-coded design over all (respondent, question) rows.

    Reference categories get no column.  Question dummies span every
    question present and replace the global intercept when fixed effects
    are on.  Interaction columns are elementwise products of the two
    non-reference dummies.
    """
    case_by_id = {c.question_id: c for c in dataset.cases}
    rows = []
    for p in predictions:
        case = case_by_id[p.question_id]
        if p.parsed is None and policy == "exclude":
            continue
        correct = int(p.parsed is not None and p.parsed == case.answers[p.respondent_id])
        rows.append((p.respondent_id, p.question_id, correct))
    if not rows:
        raise EmptyDesign("no usable prediction rows")

    questions = [c.question_id for c in dataset.cases
                 if any(r[1] == c.question_id for r in rows)]
    columns: list[str] = []
    col_data: list[np.ndarray] = []
    n = len(rows)

    if spec.question_fixed_effects:
        for qid in questions:
            columns.append(f"question[{qid}]")
            col_data.append(
                np.array([1.0 if r[1] == qid else 0.0 for r in rows])
            )
    else:
        columns.append("intercept")
        col_data.append(np.ones(n))

    references: dict[str, str] = {}
    dummy_cols: dict[tuple[str, str], np.ndarray] = {}
    for attr_name in spec.main_effects:
        attr = dataset.schema.attribute(attr_name)
        references[attr_name] = attr.reference
        for cat in attr.categories:
            if cat == attr.reference:
                continue
            col = np.array(
                [
                    1.0 if dataset.profile(r[0]).values[attr_name] == cat else 0.0
                    for r in rows
                ]
            )
            dummy_cols[(attr_name, cat)] = col
            columns.append(f"{attr_name}={cat}")
            col_data.append(col)

    for a, b in spec.interactions:
        attr_a = dataset.schema.attribute(a)
        attr_b = dataset.schema.attribute(b)
        for ca in attr_a.categories:
            if ca == attr_a.reference:
                continue
            for cb in attr_b.categories:
                if cb == attr_b.reference:
                    continue
                columns.append(f"{a}={ca} x {b}={cb}")
                col_data.append(dummy_cols[(a, ca)] * dummy_cols[(b, cb)])

    X = np.column_stack(col_data)
    y = np.array([r[2] for r in rows], dtype=float)

    zero = [columns[j] for j in range(X.shape[1]) if not X[:, j].any()]
    if zero:
        raise CollinearColumn(f"all-zero column(s): {zero}")
    for j in range(X.shape[1]):
        for k in range(j + 1, X.shape[1]):
            if np.array_equal(X[:, j], X[:, k]):
                raise CollinearColumn(
                    f"column {columns[k]!r} duplicates {columns[j]!r}"
                )
    if np.linalg.matrix_rank(X) < X.shape[1]:
        # name one column involved in the dependency via QR diagonal
        _, R = np.linalg.qr(X)
        bad = [columns[j] for j in range(X.shape[1]) if abs(R[j, j]) < 1e-8]
        raise CollinearColumn(f"collinear column(s): {bad or columns}")

    return DesignMatrix(
        X=X,
        y=y,
        columns=tuple(columns),
        rows=tuple((r[0], r[1]) for r in rows),
        references=references,
    )


def _log_likelihood(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X @ beta
    # log(1 + e^eta) computed stably
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def fit_logit(
    design: DesignMatrix,
    max_iter: int = 100,
    tol: float = 1e-8,
    ridge: float = 0.0,
) -> FitResult:
    """Newton/IRLS maximum-likelihood fit.

    ridge > 0 adds an epsilon penalty for diagnostics only; default is the
    plain unpenalized logit.
    """
    X, y = design.X, design.y
    n, p = X.shape
    if n < p:
        raise EmptyDesign(f"{n} rows for {p} columns")
    if y.min() == y.max():
        raise Separation(
            "outcome is single-class; the logit is unidentified", design.columns
        )

    beta = np.zeros(p)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eta = X @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu)
        grad = X.T @ (y - mu) - ridge * beta
        hess = X.T @ (X * w[:, None]) + ridge * np.eye(p)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise Singular(f"information matrix not invertible: {exc}") from exc
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            raise Separation("diverging coefficients", design.columns)
        if np.abs(beta).max() > SEPARATION_BETA:
            offenders = tuple(
                design.columns[j]
                for j in np.flatnonzero(np.abs(beta) > SEPARATION_BETA)
            )
            raise Separation(
                f"coefficient magnitude exceeds {SEPARATION_BETA}; likely "
                f"separation in {offenders}",
                offenders,
            )
        if np.abs(step).max() < tol:
            converged = True
            break

    ll = _log_likelihood(X, y, beta)
    if not math.isfinite(ll):
        raise Separation("non-finite log-likelihood", design.columns)

    eta = X @ beta
    mu = 1.0 / (1.0 + np.exp(-eta))
    w = mu * (1.0 - mu)
    info = X.T @ (X * w[:, None]) + ridge * np.eye(p)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise Singular(f"information matrix not invertible: {exc}") from exc
    se = np.sqrt(np.diag(cov))
    z = beta / se
    p_values = np.array([math.erfc(abs(v) / math.sqrt(2.0)) for v in z])
    return FitResult(
        columns=design.columns,
        beta=beta,
        se=se,
        z=z,
        p_values=p_values,
        stars=tuple(stars_for(pv) for pv in p_values),
        log_likelihood=ll,
        iterations=iterations,
        converged=converged,
    )


def predicted_probabilities(design: DesignMatrix, fit: FitResult) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-(design.X @ fit.beta)))


def _format_cell(beta: float, p: float) -> str:
    return f"{beta:.2f} ({p:.3f}){stars_for(p)}"


def summarize(fit: FitResult, spec: ModelSpec, design: DesignMatrix) -> str:
    """Markdown regression table grouped by attribute, with references
    noted and the interaction block separated."""
    lines = [
        f"| Term | Coefficient (p-value) | SE |",
        f"|---|---|---|",
    ]

    def row(col: str) -> str:
        j = fit.columns.index(col)
        cell = _format_cell(float(fit.beta[j]), float(fit.p_values[j]))
        return f"| {col} | {cell} | {fit.se[j]:.3f} |"

    question_cols = [c for c in fit.columns if c.startswith("question[")]
    if question_cols:
        lines.append("| **Question** | | |")
        lines.extend(row(c) for c in question_cols)
    if "intercept" in fit.columns:
        lines.append(row("intercept"))

    for attr in spec.main_effects:
        ref = design.references.get(attr, "?")
        lines.append(f"| **{attr} (ref = {ref})** | | |")
        prefix = f"{attr}="
        for c in fit.columns:
            if c.startswith(prefix) and " x " not in c:
                lines.append(row(c))

    inter_cols = [c for c in fit.columns if " x " in c]
    if inter_cols:
        lines.append("| **Interaction terms** | | |")
        lines.extend(row(c) for c in inter_cols)

    lines.append("")
    lines.append("***p < 0.01; **p < 0.05; *p < 0.1")
    if not fit.converged:
        lines.append("")
        lines.append("WARNING: fit did not converge")
    return "\n".join(lines)


def to_csv_rows(fit: FitResult) -> list[dict]:
    return [
        {
            "term": c,
            "estimate": float(fit.beta[j]),
            "se": float(fit.se[j]),
            "z": float(fit.z[j]),
            "p": float(fit.p_values[j]),
            "stars": fit.stars[j],
        }
        for j, c in enumerate(fit.columns)
    ]
