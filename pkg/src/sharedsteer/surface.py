"""Quadratic response surfaces: best-subsets least squares, Mallows Cp, optimum search."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import NoInteriorOptimumError, SingularDesignError, UndefinedCpError

log = logging.getLogger(__name__)

MAX_SUBSET_TERMS = 20
# residual variance below this fraction of sum(y^2) is treated as an exact fit
_EXACT_FIT_RTOL = 1e-20

# A term is a tuple of exponents, one per factor: (1, 0) is x1, (1, 1) is x1*x2,
# (0, 2) is x2^2.
Term = tuple


def term_name(term: Term, factor_names) -> str:
    parts = []
    for name, power in zip(factor_names, term):
        if power == 1:
            parts.append(name)
        elif power > 1:
            parts.append(f"{name}^{power}")
    return "*".join(parts) if parts else "intercept"


def parse_term(name: str, factor_names) -> Term:
    powers = [0] * len(factor_names)
    if name == "intercept":
        return tuple(powers)
    for part in name.split("*"):
        base, _, exp = part.partition("^")
        try:
            powers[list(factor_names).index(base.strip())] += int(exp) if exp else 1
        except ValueError:
            raise ValueError(f"unknown factor in term {name!r}") from None
    return tuple(powers)


@dataclass(frozen=True)
class TermBasis:
    """Ordered candidate terms over named factors (intercept implied, never listed)."""

    factor_names: tuple
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "factor_names", tuple(self.factor_names))
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("duplicate terms in basis")
        for t in self.terms:
            if len(t) != len(self.factor_names) or sum(t) == 0:
                raise ValueError(f"bad term {t} for factors {self.factor_names}")

    @classmethod
    def full_quadratic(cls, factor_names=("x1", "x2")) -> TermBasis:
        """Linear terms, then pairwise cross terms, then pure squares."""
        n = len(factor_names)

        def unit(*idx):
            powers = [0] * n
            for i in idx:
                powers[i] += 1
            return tuple(powers)

        linear = [unit(i) for i in range(n)]
        cross = [unit(i, j) for i, j in itertools.combinations(range(n), 2)]
        square = [unit(i, i) for i in range(n)]
        return cls(tuple(factor_names), tuple(linear + cross + square))

    @property
    def names(self) -> list[str]:
        return [term_name(t, self.factor_names) for t in self.terms]

    def subset(self, indices) -> TermBasis:
        return TermBasis(self.factor_names, tuple(self.terms[i] for i in indices))

    def design_matrix(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [np.ones(len(x))]
        for t in self.terms:
            col = np.ones(len(x))
            for j, power in enumerate(t):
                if power:
                    col = col * x[:, j] ** power
            cols.append(col)
        return np.column_stack(cols)


@dataclass(frozen=True)
class QuadraticSurface:
    """``y = intercept + sum(coef * term)`` over at most second-order terms."""

    basis: TermBasis
    intercept: float
    coefficients: tuple

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if len(self.coefficients) != len(self.basis.terms):
            raise ValueError("one coefficient per basis term required")
        if any(sum(t) > 2 for t in self.basis.terms):
            raise ValueError("only terms up to second order are supported")

    @property
    def factor_names(self):
        return self.basis.factor_names

    def coefficient(self, name: str) -> float:
        if name == "intercept":
            return self.intercept
        term = parse_term(name, self.factor_names)
        try:
            return self.coefficients[self.basis.terms.index(term)]
        except ValueError:
            return 0.0

    def __call__(self, *x):
        """Evaluate at scalars or broadcastable arrays, one argument per factor."""
        x = np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in x])
        y = np.full(x[0].shape, self.intercept)
        for term, c in zip(self.basis.terms, self.coefficients):
            value = np.ones(x[0].shape)
            for j, power in enumerate(term):
                if power:
                    value = value * x[j] ** power
            y = y + c * value
        return y if y.ndim else float(y)

    def gradient_system(self):
        """Return ``(H, g)`` with ``grad y(x) = H @ x + g``."""
        n = len(self.factor_names)
        hess = np.zeros((n, n))
        grad0 = np.zeros(n)
        for term, c in zip(self.basis.terms, self.coefficients):
            active = [j for j, p in enumerate(term) for _ in range(p)]
            if len(active) == 1:
                grad0[active[0]] += c
            elif active[0] == active[1]:
                hess[active[0], active[0]] += 2.0 * c
            else:
                i, j = active
                hess[i, j] += c
                hess[j, i] += c
        return hess, grad0


SATISFACTION_SURFACE = QuadraticSurface(
    basis=TermBasis(("TOR", "DEV"), ((1, 0), (0, 1), (2, 0), (0, 2))),
    intercept=-35.96,
    coefficients=(83.75, 28.01, -18.01, -50.93),
)


@dataclass(frozen=True)
class RegressionModel:
    basis: TermBasis
    coefficients: np.ndarray  # intercept first
    rss: float
    tss: float
    y_norm2: float
    n_obs: int
    mallows_cp: float | None = None
    mallows_cp_no_intercept: float | None = None
    notes: tuple = field(default=())

    @property
    def n_params(self) -> int:
        return len(self.basis.terms) + 1

    @property
    def n_terms(self) -> int:
        return len(self.basis.terms)

    @property
    def exact_fit(self) -> bool:
        return self.rss <= _EXACT_FIT_RTOL * max(self.y_norm2, np.finfo(float).tiny)

    @property
    def r2(self) -> float:
        if self.tss == 0:
            return 1.0 if self.exact_fit else math.nan
        return 1.0 - self.rss / self.tss

    @property
    def adjusted_r2(self) -> float:
        dof = self.n_obs - self.n_params
        if dof <= 0:
            return math.nan
        return 1.0 - (1.0 - self.r2) * (self.n_obs - 1) / dof

    @property
    def surface(self) -> QuadraticSurface:
        return QuadraticSurface(self.basis, float(self.coefficients[0]), tuple(self.coefficients[1:]))

    def coefficient_table(self) -> list[tuple[str, float]]:
        return list(zip(["intercept"] + self.basis.names, map(float, self.coefficients)))


def _collinear_columns(a: np.ndarray, names, tol: float) -> list[str]:
    # scale columns so the null space is not dominated by units
    norms = np.linalg.norm(a, axis=0)
    norms[norms == 0] = 1.0
    _, s, vt = np.linalg.svd(a / norms, full_matrices=True)
    s_full = np.zeros(vt.shape[0])
    s_full[: len(s)] = s
    null = vt[s_full <= tol * max(s_full.max(), 1.0)]
    involved = np.any(np.abs(null) > 1e-8, axis=0)
    return [name for name, hit in zip(names, involved) if hit]


def fit_ols(x, y, basis: TermBasis) -> RegressionModel:
    """Least-squares fit through a column-pivoted QR factorization."""
    y = np.asarray(y, dtype=float)
    a = basis.design_matrix(x)
    n, p = a.shape
    names = ["intercept"] + basis.names
    if len(y) != n:
        raise ValueError(f"{n} design rows but {len(y)} responses")
    if n < p:
        raise SingularDesignError(
            f"{n} observations cannot determine {p} parameters", names
        )
    q, r, perm = linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(n, p) * np.finfo(float).eps * diag[0] if diag[0] > 0 else 0.0
    rank = int(np.count_nonzero(diag > tol * 1e3))
    if rank < p:
        collinear = _collinear_columns(a, names, 1e-10)
        raise SingularDesignError(
            f"design matrix is rank deficient (rank {rank} < {p}); collinear terms: "
            + ", ".join(collinear),
            collinear,
        )
    z = linalg.solve_triangular(r, q.T @ y)
    coef = np.empty(p)
    coef[perm] = z
    resid = y - a @ coef
    rss = float(resid @ resid)
    centered = y - y.mean()
    return RegressionModel(
        basis=basis,
        coefficients=coef,
        rss=rss,
        tss=float(centered @ centered),
        y_norm2=float(y @ y),
        n_obs=n,
    )


def mallows_cp(model: RegressionModel, full_model: RegressionModel, count_intercept: bool = True) -> float:
    """``Cp = RSS_p / s^2 - n + 2p`` with ``s^2`` the full model's residual variance.

    With ``count_intercept=False`` the intercept is left out of ``p`` for both
    the penalty and the full model's degrees of freedom.
    """
    if model.n_obs != full_model.n_obs:
        raise ValueError("models were fit on different numbers of observations")
    n = model.n_obs
    shift = 0 if count_intercept else 1
    p = model.n_params - shift
    p_full = full_model.n_params - shift
    dof = n - p_full
    if dof <= 0:
        raise UndefinedCpError("full model is saturated (no residual degrees of freedom)")
    if full_model.exact_fit:
        raise UndefinedCpError("full model fits exactly; residual variance is zero")
    if model.rss == full_model.rss:
        ratio = 1.0
    else:
        ratio = model.rss / full_model.rss
    return dof * ratio - n + 2 * p


def _adequate(model: RegressionModel, slack: float) -> bool:
    if model.mallows_cp is None:
        return model.exact_fit
    return model.mallows_cp <= model.n_params + slack


def _cp_gap(model: RegressionModel) -> float:
    if model.mallows_cp is None:
        return model.rss
    return abs(model.mallows_cp - model.n_params)


def _adj_key(model: RegressionModel) -> float:
    adj = model.adjusted_r2
    return 0.0 if math.isnan(adj) else -round(adj, 12)


def _rank_key(model: RegressionModel, criterion: str, slack: float):
    canonical = tuple(sorted(model.basis.terms))
    if criterion == "parsimony":
        if _adequate(model, slack):
            return (0, model.n_terms, _adj_key(model), _cp_gap(model), canonical)
        return (1, _cp_gap(model), _adj_key(model), model.n_terms, canonical)
    if criterion == "closest":
        below = model.mallows_cp is None or model.mallows_cp <= model.n_params
        return (0 if below else 1, _cp_gap(model), _adj_key(model), model.n_terms, canonical)
    raise ValueError(f"unknown ranking criterion {criterion!r}")


def best_subsets(
    x,
    y,
    full_basis: TermBasis,
    criterion: str = "parsimony",
    cp_slack: float = 0.0,
) -> list[RegressionModel]:
    """Fit every non-empty subset of ``full_basis`` (intercept always kept) and rank them.

    ``criterion="parsimony"`` ranks adequate models (``Cp <= p + cp_slack``, or an
    exact fit when the data are noiseless) first, fewest terms first, then by
    adjusted R^2. ``criterion="closest"`` ranks by ``|Cp - p|`` alone, preferring
    models at or below ``p``; note that the full model always has ``Cp == p``.
    Subsets whose design is singular are skipped and logged.
    """
    k = len(full_basis.terms)
    if k == 0:
        raise ValueError("basis has no terms")
    if k > MAX_SUBSET_TERMS:
        raise ValueError(f"exhaustive search is limited to {MAX_SUBSET_TERMS} terms, got {k}")
    full = fit_ols(x, y, full_basis)

    models = []
    for size in range(1, k + 1):
        for idx in itertools.combinations(range(k), size):
            sub_basis = full_basis.subset(idx)
            try:
                model = full if size == k else fit_ols(x, y, sub_basis)
            except SingularDesignError as exc:
                log.warning("skipping subset %s: %s", sub_basis.names, exc)
                continue
            try:
                cp = mallows_cp(model, full)
                cp_alt = mallows_cp(model, full, count_intercept=False)
            except UndefinedCpError as exc:
                cp = cp_alt = None
                note = (str(exc),)
            else:
                note = ()
            models.append(replace(model, mallows_cp=cp, mallows_cp_no_intercept=cp_alt, notes=note))
    models.sort(key=lambda m: _rank_key(m, criterion, cp_slack))
    return models


@dataclass(frozen=True)
class StationaryPoint:
    location: tuple
    value: float
    nature: str  # "maximum", "minimum" or "saddle"

    @property
    def is_optimum(self) -> bool:
        return self.nature in ("maximum", "minimum")


def stationary_point(surface) -> StationaryPoint:
    """Closed-form solution of ``grad y = 0``, classified by the Hessian's eigenvalues."""
    if isinstance(surface, RegressionModel):
        surface = surface.surface
    hess, grad0 = surface.gradient_system()
    eig = np.linalg.eigvalsh(hess)
    scale = max(np.abs(eig).max(), 1.0)
    if np.any(np.abs(eig) <= 1e-12 * scale):
        raise NoInteriorOptimumError(
            f"Hessian is singular (eigenvalues {eig.tolist()}); the surface has no isolated stationary point"
        )
    x = np.linalg.solve(hess, -grad0)
    if np.all(eig < 0):
        nature = "maximum"
    elif np.all(eig > 0):
        nature = "minimum"
    else:
        nature = "saddle"
    return StationaryPoint(tuple(float(v) for v in x), float(surface(*x)), nature)


@dataclass(frozen=True, eq=False)
class ContourGrid:
    x1: np.ndarray
    x2: np.ndarray
    values: np.ndarray  # shape (len(x1), len(x2))

    def rows(self):
        """Row-major (x1 outer, x2 inner) triples."""
        for i, a in enumerate(self.x1):
            for j, b in enumerate(self.x2):
                yield float(a), float(b), float(self.values[i, j])

    def argmax(self) -> tuple[float, float]:
        i, j = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.x1[i]), float(self.x2[j])


def contour_grid(surface, x1_range, x2_range, resolution=41) -> ContourGrid:
    """Evaluate a two-factor surface on an inclusive rectangular grid."""
    if isinstance(surface, RegressionModel):
        surface = surface.surface
    if len(surface.factor_names) != 2:
        raise ValueError("contour grids need a two-factor surface")
    n1, n2 = (resolution, resolution) if np.isscalar(resolution) else resolution
    if n1 < 2 or n2 < 2:
        raise ValueError("resolution must be at least 2 per axis")
    x1 = np.linspace(x1_range[0], x1_range[1], int(n1))
    x2 = np.linspace(x2_range[0], x2_range[1], int(n2))
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    return ContourGrid(x1, x2, np.asarray(surface(g1, g2)))


def write_contour_csv(grid: ContourGrid, path, header=("tor_nm", "dev_m", "sat")) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in grid.rows():
            writer.writerow(repr(v) for v in row)


def write_coefficients_csv(surface: QuadraticSurface, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("term", "coefficient"))
        writer.writerow(("intercept", repr(surface.intercept)))
        for name, c in zip(surface.basis.names, surface.coefficients):
            writer.writerow((name, repr(c)))


def read_coefficients_csv(path, factor_names=("TOR", "DEV")) -> QuadraticSurface:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    intercept = 0.0
    terms, coefs = [], []
    for row in rows:
        name = row["term"].strip()
        value = float(row["coefficient"])
        if name == "intercept":
            intercept = value
        else:
            terms.append(parse_term(name, factor_names))
            coefs.append(value)
    return QuadraticSurface(TermBasis(factor_names, tuple(terms)), intercept, tuple(coefs))


def format_report(ranked: list[RegressionModel], response: str = "y", top: int = 10) -> str:
    """Plain-text summary: selected model, its coefficients, optimum, and the candidate table."""
    best = ranked[0]
    lines = [f"Best-subsets regression for {response} ({best.n_obs} observations, "
             f"{len(ranked)} candidate models)", ""]
    lines.append("Selected model: " + " + ".join(["intercept"] + best.basis.names))
    for name, c in best.coefficient_table():
        lines.append(f"  {name:<12s} {c: .6g}")
    lines.append(f"  R^2 = {best.r2:.6f}   adjusted R^2 = {best.adjusted_r2:.6f}")
    lines.append(f"  Mallows Cp = {_fmt_cp(best.mallows_cp)} (p = {best.n_params}); "
                 f"without intercept in p: {_fmt_cp(best.mallows_cp_no_intercept)} (p = {best.n_params - 1})")
    for note in best.notes:
        lines.append(f"  note: {note}")
    try:
        sp = stationary_point(best)
    except NoInteriorOptimumError as exc:
        lines.append(f"  stationary point: none ({exc})")
    else:
        loc = ", ".join(f"{n} = {v:.6g}" for n, v in zip(best.basis.factor_names, sp.location))
        lines.append(f"  stationary point ({sp.nature}): {loc}; {response} = {sp.value:.6g}")
    lines += ["", f"{'rank':>4s}  {'p':>2s}  {'Cp':>10s}  {'adj R^2':>9s}  terms"]
    for i, m in enumerate(ranked[:top], 1):
        lines.append(f"{i:>4d}  {m.n_params:>2d}  {_fmt_cp(m.mallows_cp):>10s}  "
                     f"{m.adjusted_r2:>9.5f}  {', '.join(m.basis.names)}")
    return "\n".join(lines) + "\n"


def _fmt_cp(cp) -> str:
    return "undefined" if cp is None else f"{cp:.4f}"
