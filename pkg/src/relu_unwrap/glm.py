"""Gaussian and binomial GLMs (plain, ridge, lasso) with Wald and bootstrap inference.

Coefficient vectors are ``[intercept, w_1, ..., w_d]``; the intercept is
never penalised.

Penalty strength conventions:

* gaussian ``l2``: minimise ``||y - b - Xw||^2 + strength * ||w||^2``
* gaussian ``l1``: minimise ``||y - b - Xw||^2 / (2n) + strength * ||w_std||_1``
  on standardised columns, reported on the raw scale
* binomial: ``strength`` is the inverse regularisation ``C``; the objective is
  ``-loglik + ||w||^2 / (2C)`` (``l2``) or ``-loglik + ||w||_1 / C`` (``l1``)
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import kernels
from ._runtime import parallel_map, stream
from .network import sigmoid

FAMILIES = ("gaussian", "binomial")
PENALTIES = ("none", "l1", "l2")

GRAD_TOL = 1e-8
MAX_IRLS = 100
LASSO_TOL = 1e-7
LASSO_SWEEPS = 10_000


class GlmError(ValueError):
    pass


class SingularDesignError(GlmError):
    def __init__(self, rank: int, p: int):
        super().__init__(
            f"design matrix (with intercept) has rank {rank} < {p} columns; "
            "use an l1 or l2 penalty to fit it")


class PenalizedInferenceError(GlmError):
    def __init__(self):
        super().__init__("Wald inference needs an unpenalized fit; use bootstrap_inference for penalized models")


@dataclass
class GlmFit:
    beta_hat: np.ndarray
    covariance: np.ndarray | None
    family: str
    penalty: str
    strength: float
    n_obs: int
    dof_resid: int
    sigma2: float | None = None
    converged: bool = True
    n_iter: int = 0
    warnings: tuple[str, ...] = ()

    @property
    def intercept(self) -> float:
        return float(self.beta_hat[0])

    @property
    def coef(self) -> np.ndarray:
        return self.beta_hat[1:]

    def eta(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return X @ self.beta_hat[1:] + self.beta_hat[0]

    def predict(self, X) -> np.ndarray:
        e = self.eta(X)
        return sigmoid(e) if self.family == "binomial" else e

    def to_dict(self) -> dict:
        return {
            "beta_hat": [float(v) for v in self.beta_hat],
            "covariance": None if self.covariance is None else [[float(v) for v in row] for row in self.covariance],
            "family": self.family,
            "penalty": self.penalty,
            "strength": self.strength,
            "n_obs": self.n_obs,
            "dof_resid": self.dof_resid,
            "sigma2": self.sigma2,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GlmFit":
        cov = obj.get("covariance")
        return cls(
            beta_hat=np.array(obj["beta_hat"], dtype=np.float64),
            covariance=None if cov is None else np.array(cov, dtype=np.float64),
            family=obj["family"], penalty=obj["penalty"], strength=float(obj["strength"]),
            n_obs=int(obj["n_obs"]), dof_resid=int(obj["dof_resid"]), sigma2=obj.get("sigma2"),
            converged=bool(obj.get("converged", True)), n_iter=int(obj.get("n_iter", 0)),
            warnings=tuple(obj.get("warnings", ())),
        )


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _check(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise GlmError("X and y have different numbers of rows")
    if X.shape[0] == 0:
        raise GlmError("cannot fit on zero observations")
    return X, y


def _check_penalty(penalty: str):
    if penalty not in PENALTIES:
        raise GlmError(f"penalty must be one of {PENALTIES}, got {penalty!r}")


def _standardized_lasso(X, y, weights, lam):
    """Lasso on standardised columns; returns raw-scale ``(intercept, w, sweeps)``."""
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    live = sd > 0
    Xs = np.zeros_like(X)
    Xs[:, live] = (X[:, live] - mean[live]) / sd[live]
    beta, b, sweeps = kernels.lasso_cd(Xs, y, weights, lam, np.zeros(X.shape[1]), float(np.average(y, weights=weights)),
                                       LASSO_TOL, LASSO_SWEEPS)
    w = np.zeros(X.shape[1])
    w[live] = beta[live] / sd[live]
    return b - float(mean @ w), w, sweeps


def fit_gaussian(X, y, penalty: str = "none", strength: float = 0.0) -> GlmFit:
    """Least squares, ridge or lasso; covariance only for the unpenalized fit."""
    X, y = _check(X, y)
    _check_penalty(penalty)
    n, d = X.shape
    if penalty == "none":
        Z = _design(X)
        rank = np.linalg.matrix_rank(Z)
        if rank < d + 1:
            raise SingularDesignError(int(rank), d + 1)
        beta, *_ = np.linalg.lstsq(Z, y, rcond=None)
        resid = y - Z @ beta
        dof = n - d - 1
        cov, sigma2 = None, None
        if dof > 0:
            sigma2 = float(resid @ resid) / dof
            cov = sigma2 * np.linalg.inv(Z.T @ Z)
            cov = 0.5 * (cov + cov.T)
        return GlmFit(beta, cov, "gaussian", "none", 0.0, n, dof, sigma2)
    if strength < 0:
        raise GlmError("penalty strength must be non-negative")
    if penalty == "l2":
        xm, ym = X.mean(axis=0), y.mean()
        Xc = X - xm
        w = np.linalg.solve(Xc.T @ Xc + strength * np.eye(d), Xc.T @ (y - ym))
        beta = np.r_[ym - xm @ w, w]
        return GlmFit(beta, None, "gaussian", "l2", float(strength), n, n - d - 1)
    b, w, sweeps = _standardized_lasso(X, y, np.full(n, 1.0 / n), float(strength))
    return GlmFit(np.r_[b, w], None, "gaussian", "l1", float(strength), n, n - d - 1,
                  converged=sweeps < LASSO_SWEEPS, n_iter=sweeps)


def _binomial_objective(Z, y, beta, ridge):
    eta = Z @ beta
    nll = float(np.sum(np.logaddexp(0.0, eta) - y * eta))
    return nll + 0.5 * ridge * float(beta[1:] @ beta[1:])


def _newton(Z, y, ridge: float):
    p = Z.shape[1]
    beta = np.zeros(p)
    pen = np.full(p, ridge)
    pen[0] = 0.0
    converged = False
    it = 0
    obj = _binomial_objective(Z, y, beta, ridge)
    for it in range(1, MAX_IRLS + 1):
        mu = sigmoid(Z @ beta)
        grad = Z.T @ (y - mu) - pen * beta
        if np.linalg.norm(grad) <= GRAD_TOL:
            converged = True
            it -= 1
            break
        wts = mu * (1.0 - mu)
        H = (Z * wts[:, None]).T @ Z + np.diag(pen)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            new_obj = _binomial_objective(Z, y, cand, ridge)
            if new_obj <= obj or t < 1e-10:
                break
            t *= 0.5
        if new_obj > obj:
            break
        beta, obj = cand, new_obj
    mu = sigmoid(Z @ beta)
    grad = Z.T @ (y - mu) - pen * beta
    converged = converged or bool(np.linalg.norm(grad) <= GRAD_TOL)
    return beta, converged, it


def _irls_lasso(X, y, C: float):
    """Proximal Newton: weighted lasso on the IRLS working response each outer step."""
    n, d = X.shape
    lam = math.inf if C == 0 else 1.0 / C
    beta = np.zeros(d)
    b = 0.0
    converged = False
    it = 0
    for it in range(1, MAX_IRLS + 1):
        eta = X @ beta + b
        mu = sigmoid(eta)
        wts = np.maximum(mu * (1.0 - mu), 1e-10)
        z = eta + (y - mu) / wts
        new_beta, new_b, _ = kernels.lasso_cd(X, z, wts, lam, beta, b, LASSO_TOL * 1e-2, LASSO_SWEEPS)
        change = max(abs(new_b - b), float(np.max(np.abs(new_beta - beta))) if d else 0.0)
        beta, b = new_beta, new_b
        if change <= GRAD_TOL:
            converged = True
            break
    return np.r_[b, beta], converged, it


def fit_binomial(X, y, penalty: str = "none", strength: float = 1.0) -> GlmFit:
    """Logistic regression by IRLS; ``strength`` is ``C`` for penalized fits.

    Separable or single-class data do not raise: the fit stops at the gradient
    tolerance or the iteration cap and carries a warning.
    """
    X, y = _check(X, y)
    _check_penalty(penalty)
    if not np.isin(y, (0.0, 1.0)).all():
        raise GlmError("binomial responses must be 0 or 1")
    n, d = X.shape
    Z = _design(X)
    warns = []
    if y.min() == y.max():
        warns.append("single class: coefficients diverge")
    if penalty == "l1":
        if strength < 0:
            raise GlmError("C must be non-negative")
        beta, converged, it = _irls_lasso(X, y, float(strength))
        cov = None
    else:
        if penalty == "l2" and strength <= 0:
            raise GlmError("C must be positive for the l2 penalty")
        ridge = 0.0 if penalty == "none" else 1.0 / strength
        if penalty == "none" and np.linalg.matrix_rank(Z) < d + 1:
            raise SingularDesignError(int(np.linalg.matrix_rank(Z)), d + 1)
        beta, converged, it = _newton(Z, y, ridge)
        cov = None
        if penalty == "none":
            mu = sigmoid(Z @ beta)
            info = (Z * (mu * (1.0 - mu))[:, None]).T @ Z
            try:
                cov = np.linalg.inv(info)
                cov = 0.5 * (cov + cov.T)
                if not np.all(np.isfinite(cov)):
                    cov = None
            except np.linalg.LinAlgError:
                cov = None
    eta = Z @ beta
    if not converged:
        warns.append("IRLS did not reach the gradient tolerance")
    if np.max(np.abs(eta)) > 30.0:
        warns.append("possible perfect separation: fitted probabilities at 0 or 1")
    return GlmFit(beta, cov, "binomial", penalty, float(strength if penalty != "none" else 0.0), n, n - d - 1,
                  converged=converged, n_iter=it, warnings=tuple(warns))


def fit_glm(family: str, X, y, penalty: str = "none", strength: float | None = None) -> GlmFit:
    if family == "gaussian":
        return fit_gaussian(X, y, penalty, 0.0 if strength is None else strength)
    if family == "binomial":
        return fit_binomial(X, y, penalty, 1.0 if strength is None else strength)
    raise GlmError(f"family must be one of {FAMILIES}")


# -- inference ---------------------------------------------------------------

def t_two_sided_p(t, dof):
    """Two-sided Student-t tail probability via the regularized incomplete beta."""
    t = np.asarray(t, dtype=np.float64)
    return special.betainc(dof / 2.0, 0.5, dof / (dof + t * t))


def normal_two_sided_p(z):
    z = np.asarray(z, dtype=np.float64)
    return special.erfc(np.abs(z) / math.sqrt(2.0))


@dataclass
class InferenceRow:
    name: str
    coef: float
    std_err: float
    statistic: float
    p_value: float
    ci_lower: float
    ci_upper: float


@dataclass
class InferenceReport:
    rows: list[InferenceRow]
    level: float = 0.95
    stat_name: str = "z"

    @property
    def ci_labels(self) -> tuple[str, str]:
        alpha = 1.0 - self.level
        return f"[{alpha / 2:.3f}", f"{1 - alpha / 2:.3f}]"

    @property
    def columns(self) -> list[str]:
        return ["coef", "std_err", self.stat_name, "p-value", *self.ci_labels]

    def row(self, name: str) -> InferenceRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def table_rows(self, prefix=()) -> list[list[str]]:
        return [[*prefix, r.name, *(repr(float(v)) for v in
                                    (r.coef, r.std_err, r.statistic, r.p_value, r.ci_lower, r.ci_upper))]
                for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["term", *self.columns])
        w.writerows(self.table_rows())
        return buf.getvalue()

    def format(self, title: str = "") -> str:
        head = f"{title:<12}" + "".join(f"{c:>10}" for c in self.columns)
        lines = [head]
        for r in self.rows:
            vals = (r.coef, r.std_err, r.statistic, r.p_value, r.ci_lower, r.ci_upper)
            lines.append(f"{r.name:<12}" + "".join(f"{v:>10.4f}" for v in vals))
        return "\n".join(lines)


def wald_inference(fit: GlmFit, level: float = 0.95, names=None) -> InferenceReport:
    """Per-coefficient Wald tests: Student-t (gaussian) or standard normal (binomial)."""
    if fit.penalty != "none" or fit.covariance is None:
        raise PenalizedInferenceError()
    if not 0.0 < level < 1.0:
        raise GlmError("confidence level must lie in (0, 1)")
    p = fit.beta_hat.size
    names = ["intercept", *(names or [f"x{j}" for j in range(1, p)])]
    se = np.sqrt(np.clip(np.diag(fit.covariance), 0.0, None))
    coef = fit.beta_hat
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.sign(coef) * np.inf))
    q = 1.0 - (1.0 - level) / 2.0
    if fit.family == "gaussian":
        pval = t_two_sided_p(stat, fit.dof_resid)
        crit = float(special.stdtrit(fit.dof_resid, q))
        stat_name = "t"
    else:
        pval = normal_two_sided_p(stat)
        crit = float(special.ndtri(q))
        stat_name = "z"
    rows = [InferenceRow(names[j], float(coef[j]), float(se[j]), float(stat[j]), float(pval[j]),
                         float(coef[j] - crit * se[j]), float(coef[j] + crit * se[j])) for j in range(p)]
    return InferenceReport(rows, level, stat_name)


@dataclass
class BootstrapReport:
    names: list[str]
    mean: np.ndarray
    sd: np.ndarray
    zero_probability: np.ndarray
    samples: np.ndarray = field(repr=False)
    n_replicates: int = 0
    n_failed: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["term", "mean", "sd", "zero_probability"])
        for j, name in enumerate(self.names):
            w.writerow([name, repr(float(self.mean[j])), repr(float(self.sd[j])),
                        repr(float(self.zero_probability[j]))])
        return buf.getvalue()


def bootstrap_inference(X, y, family: str = "gaussian", penalty: str = "l1", strength: float | None = None,
                        replicates: int = 100, seed: int = 0, names=None) -> BootstrapReport:
    """Row-resampling bootstrap of a (typically lasso) fit.

    Each replicate draws from its own seeded stream, so the result does not
    depend on how replicates are scheduled. Replicates whose fit raises are
    skipped and counted in ``n_failed``.
    """
    if replicates < 2:
        raise GlmError("need at least 2 bootstrap replicates")
    X, y = _check(X, y)
    n, d = X.shape

    def one(r):
        idx = stream(seed, "bootstrap", r).integers(0, n, size=n)
        try:
            return fit_glm(family, X[idx], y[idx], penalty, strength).beta_hat
        except (GlmError, np.linalg.LinAlgError):
            return None

    fits = parallel_map(one, range(replicates))
    good = [b for b in fits if b is not None]
    if not good:
        raise GlmError("every bootstrap replicate failed")
    S = np.array(good)
    return BootstrapReport(
        names=["intercept", *(names or [f"x{j}" for j in range(1, d + 1)])],
        mean=S.mean(axis=0),
        sd=S.std(axis=0, ddof=1) if len(good) > 1 else np.zeros(d + 1),
        zero_probability=(S == 0.0).mean(axis=0),
        samples=S,
        n_replicates=len(good),
        n_failed=replicates - len(good),
    )
