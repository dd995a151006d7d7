"""Canonical rank-r surrogate of a multivariate response.

The model is a weighted sum of rank-one functions, each a product of
univariate orthonormal polynomial expansions. Fitting follows a sequential
correction-updating scheme: each correction step solves for a new rank-one
function by alternated least squares (one small OLS problem per dimension,
the others frozen), and each updating step refits all weights jointly.
Rank and degree are selected on a held-out validation split; the winner is
refit on the full design. Means and variances of the fitted model follow in
closed form from the coefficients.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .polybasis import PolyFamily, eval_basis, hermite

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentalDesign",
    "LraModel",
    "FitReport",
    "IllPosedFitError",
    "correction_step",
    "updating_step",
    "fit",
    "evaluate",
    "analytic_moments",
    "empirical_error",
    "model_to_json",
    "model_from_json",
]


class IllPosedFitError(RuntimeError):
    """Least-squares design is rank deficient (design too small/degenerate)."""


@dataclass
class ExperimentalDesign:
    """Standard-space samples with their exactly evaluated responses."""

    xi: np.ndarray  # (M, n)
    y: np.ndarray  # (M,)
    provenance: str = ""

    def __post_init__(self):
        self.xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        if self.xi.shape[0] != self.y.shape[0]:
            raise ValueError("xi rows and y entries must align")

    @property
    def size(self) -> int:
        return self.xi.shape[0]

    @property
    def dimension(self) -> int:
        return self.xi.shape[1]


@dataclass
class LraModel:
    """Rank-r model: weights b_l and per-dimension coefficient vectors."""

    weights: np.ndarray  # (r,)
    coeffs: list  # [l][i] -> ndarray of length degrees[i] + 1
    families: tuple  # per-dimension PolyFamily
    degrees: tuple  # per-dimension max degree

    @property
    def rank(self) -> int:
        return len(self.weights)

    @property
    def dimension(self) -> int:
        return len(self.families)

    @property
    def coefficient_count(self) -> int:
        """Polynomial coefficients plus weighting factors."""
        return sum(len(z) for zs in self.coeffs for z in zs) + self.rank


@dataclass
class FitReport:
    chosen_rank: int = 0
    chosen_degree: int = 0
    empirical_errors: list = field(default_factory=list)  # per rank, on the full design
    validation_errors: dict = field(default_factory=dict)  # (rank, degree) -> error
    validation_error: float = np.nan  # of the winner
    als_sweeps: list = field(default_factory=list)  # per correction step of the final fit
    ed_size: int = 0
    skipped_degrees: list = field(default_factory=list)


def _design_matrices(xi: np.ndarray, families, degrees) -> list:
    return [eval_basis(families[i].truncated(degrees[i]), xi[:, i]) for i in range(xi.shape[1])]


def correction_step(
    psi: list,
    residual: np.ndarray,
    als_tol: float = 1e-6,
    als_max_sweeps: int = 50,
    polish: bool = True,
):
    """One correction step: fit a rank-one function to the residual by ALS.

    `psi` holds the per-dimension design matrices on the experimental design.
    Every univariate factor starts at the constant one; each inner
    minimization is an ordinary least-squares solve with the other dimensions
    frozen. ALS stops on a small relative residual change or the sweep cap;
    a damped Gauss-Newton pass then polishes the same minimization, which
    guards against the slow tail ALS exhibits on long product chains.
    Returns (coefficient vectors, sweep count).
    """
    m = residual.shape[0]
    n = len(psi)
    v_vals = [np.ones(m) for _ in range(n)]
    z = [None] * n
    prev_norm = np.inf
    sweeps = 0
    for sweeps in range(1, als_max_sweeps + 1):
        for i in range(n):
            c = np.ones(m)
            for j in range(n):
                if j != i:
                    c = c * v_vals[j]
            if not np.any(c):
                # a previous factor collapsed to zero: the rank-one term is zero
                zero = [np.zeros(p.shape[1]) for p in psi]
                return zero, sweeps
            a = psi[i] * c[:, None]
            sol, _, rank, _ = np.linalg.lstsq(a, residual, rcond=None)
            if rank < psi[i].shape[1]:
                raise IllPosedFitError(
                    f"rank-deficient least squares in dimension {i} "
                    f"(rank {rank} < {psi[i].shape[1]}); enlarge the design"
                )
            z[i] = sol
            v_vals[i] = psi[i] @ sol
        w = np.ones(m)
        for i in range(n):
            w = w * v_vals[i]
        norm = np.linalg.norm(residual - w)
        if abs(prev_norm - norm) <= als_tol * max(norm, 1e-300):
            break
        prev_norm = norm
    if polish and n > 1:
        z = _gauss_newton_polish(psi, residual, z)
    return z, sweeps


def _gauss_newton_polish(psi: list, residual: np.ndarray, z: list) -> list:
    """Levenberg-Marquardt refinement of the rank-one least-squares problem,
    started from the ALS solution; kept only if it improves the residual."""
    from scipy.optimize import least_squares

    m = residual.shape[0]
    n = len(psi)
    sizes = [p.shape[1] for p in psi]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    if m < offs[-1]:
        return z

    def unpack(x):
        return [x[offs[i] : offs[i + 1]] for i in range(n)]

    def fun(x):
        w = np.ones(m)
        for i, zz in enumerate(unpack(x)):
            w = w * (psi[i] @ zz)
        return w - residual

    def jac(x):
        vv = [psi[i] @ zz for i, zz in enumerate(unpack(x))]
        total = np.ones(m)
        for v in vv:
            total = total * v
        J = np.empty((m, offs[-1]))
        for i in range(n):
            with np.errstate(divide="ignore", invalid="ignore"):
                c = np.where(vv[i] != 0.0, total / vv[i], 0.0)
            zero = vv[i] == 0.0
            if zero.any():
                cz = np.ones(int(zero.sum()))
                for j in range(n):
                    if j != i:
                        cz = cz * vv[j][zero]
                c[zero] = cz
            J[:, offs[i] : offs[i + 1]] = psi[i] * c[:, None]
        return J

    x0 = np.concatenate(z)
    try:
        res = least_squares(
            fun, x0, jac=jac, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=300
        )
    except Exception:  # singular trial steps: keep the ALS solution
        return z
    if np.linalg.norm(res.fun) < np.linalg.norm(fun(x0)):
        return unpack(res.x)
    return z


def updating_step(omega: np.ndarray, y: np.ndarray, prev_weights: np.ndarray | None = None):
    """Refit all weighting factors by least squares on the design.

    `omega` has one column per rank-one function evaluated at the design
    points. Collinear columns keep their previous weight (zero for a new
    function) and a warning is logged.
    """
    m, r = omega.shape
    q, rr, piv = linalg.qr(omega, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rr))
    tol = max(m, r) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank == r:
        b, *_ = np.linalg.lstsq(omega, y, rcond=None)
        return b
    keep = piv[:rank]
    drop = piv[rank:]
    log.warning("updating step: %d collinear rank-one function(s); keeping previous weights", len(drop))
    b = np.zeros(r)
    if prev_weights is not None:
        for k in drop:
            b[k] = prev_weights[k] if k < len(prev_weights) else 0.0
    rhs = y - omega[:, drop] @ b[drop]
    b_keep, *_ = np.linalg.lstsq(omega[:, keep], rhs, rcond=None)
    b[keep] = b_keep
    return b


def _eval_with(psi: list, coeffs: list, weights: np.ndarray) -> np.ndarray:
    m = psi[0].shape[0]
    out = np.zeros(m)
    for le in range(len(weights)):
        w = np.ones(m)
        for i in range(len(psi)):
            w = w * (psi[i] @ coeffs[le][i])
        out += weights[le] * w
    return out


def evaluate(model: LraModel, xi: np.ndarray) -> np.ndarray:
    """Model response at standard-space points (vectorized)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    psi = _design_matrices(xi, model.families, model.degrees)
    return _eval_with(psi, model.coeffs, model.weights)


def empirical_error(model: LraModel, ed: ExperimentalDesign) -> float:
    """Relative empirical error: residual sum of squares over the centered
    response sum of squares."""
    resid = ed.y - evaluate(model, ed.xi)
    denom = np.sum((ed.y - ed.y.mean()) ** 2)
    if denom == 0.0:
        return float(np.sum(resid**2))
    return float(np.sum(resid**2) / denom)


def _relative_sq_error(y_true: np.ndarray, y_hat: np.ndarray) -> float:
    denom = np.sum((y_true - y_true.mean()) ** 2)
    num = np.sum((y_true - y_hat) ** 2)
    return float(num / denom) if denom > 0.0 else float(num)


def _fit_sequence(
    psi_train: list,
    y_train: np.ndarray,
    max_rank: int,
    als_tol: float,
    als_max_sweeps: int,
):
    """Correction-updating steps up to max_rank, one snapshot per rank.

    Lazily yields (coeffs, weights, train error, sweeps); stops early when
    the residual is numerically exhausted.
    """
    residual = y_train.copy()
    denom = np.sum((y_train - y_train.mean()) ** 2)
    coeffs: list = []
    omega_cols: list = []
    weights = np.zeros(0)
    for _ in range(max_rank):
        if np.sum(residual**2) <= 1e-26 * max(denom, 1e-300):
            return
        z, sweeps = correction_step(psi_train, residual, als_tol, als_max_sweeps)
        coeffs.append(z)
        col = np.ones(y_train.shape[0])
        for i in range(len(psi_train)):
            col = col * (psi_train[i] @ z[i])
        omega_cols.append(col)
        omega = np.column_stack(omega_cols)
        weights = updating_step(omega, y_train, np.append(weights, 0.0))
        fitted = omega @ weights
        residual = y_train - fitted
        yield [list(zz) for zz in coeffs], weights.copy(), _relative_sq_error(y_train, fitted), sweeps


def fit(
    ed: ExperimentalDesign,
    families: tuple | None = None,
    rank_candidates=(1, 2, 3, 4, 5),
    degree_candidates=(2, 3, 4, 5),
    validation_fraction: float = 0.2,
    als_tol: float = 1e-6,
    als_max_sweeps: int = 50,
) -> tuple[LraModel, FitReport]:
    """Select rank and degree on a validation split, then refit on all data.

    The last `validation_fraction` of the design rows are held out; ranks are
    appended while the validation error keeps decreasing (per degree), and
    the (rank, degree) pair with the smallest validation error wins. Degrees
    whose correction step would be under-determined on the training split are
    skipped; if every candidate is skipped the design is too small.
    """
    n = ed.dimension
    if families is None:
        families = tuple(hermite(max(degree_candidates)) for _ in range(n))
    m_val = max(1, int(round(validation_fraction * ed.size)))
    m_train = ed.size - m_val
    if m_train < 1:
        raise IllPosedFitError("experimental design too small for a validation split")
    xi_tr, y_tr = ed.xi[:m_train], ed.y[:m_train]
    xi_va, y_va = ed.xi[m_train:], ed.y[m_train:]

    report = FitReport(ed_size=ed.size)
    best = None  # (val_err, degree, rank, )
    max_rank = max(rank_candidates)
    for p in sorted(degree_candidates):
        degrees = (p,) * n
        if sum(d + 1 for d in degrees) > m_train:
            report.skipped_degrees.append(p)
            continue
        psi_tr = _design_matrices(xi_tr, families, degrees)
        psi_va = _design_matrices(xi_va, families, degrees)
        prev_val = np.inf
        try:
            for r_idx, (coeffs, weights, _train_err, _sweeps) in enumerate(
                _fit_sequence(psi_tr, y_tr, max_rank, als_tol, als_max_sweeps), start=1
            ):
                y_hat = _eval_with(psi_va, coeffs, weights)
                val_err = _relative_sq_error(y_va, y_hat)
                if r_idx in rank_candidates:
                    report.validation_errors[(r_idx, p)] = val_err
                    # a more complex candidate must improve by a real margin
                    if best is None or val_err < best[0] * (1.0 - 1e-6):
                        best = (val_err, p, r_idx)
                if val_err > prev_val:
                    break  # adding ranks stopped helping
                prev_val = val_err
        except IllPosedFitError:
            report.skipped_degrees.append(p)
            continue
    if best is None:
        raise IllPosedFitError(
            "no (rank, degree) candidate is well-posed; enlarge the experimental design"
        )

    val_err, p_win, r_win = best
    degrees = (p_win,) * n
    psi_full = _design_matrices(ed.xi, families, degrees)
    coeffs, weights = [], np.zeros(0)
    for coeffs, weights, train_err, sweeps in _fit_sequence(
        psi_full, ed.y, r_win, als_tol, als_max_sweeps
    ):
        report.empirical_errors.append(train_err)
        report.als_sweeps.append(sweeps)
    model = LraModel(
        weights=weights,
        coeffs=coeffs,
        families=tuple(f.truncated(p_win) for f in families),
        degrees=degrees,
    )
    report.chosen_rank = len(weights)
    report.chosen_degree = p_win
    report.validation_error = val_err
    return model, report


def analytic_moments(model: LraModel) -> tuple[float, float]:
    """Closed-form mean and variance of the model response.

    Valid for orthonormal families with psi_0 = 1: the mean collects the
    constant coefficients; the variance is the second moment minus the
    squared mean, with the subtraction taken between the two full
    cross-products. Tiny negative variances are clipped to zero.
    """
    b = model.weights
    r = model.rank
    mean = 0.0
    for le in range(r):
        prod = 1.0
        for z in model.coeffs[le]:
            prod *= z[0]
        mean += b[le] * prod
    var = 0.0
    for le in range(r):
        for mo in range(r):
            full = 1.0
            const = 1.0
            for i in range(model.dimension):
                zl = model.coeffs[le][i]
                zm = model.coeffs[mo][i]
                full *= float(zl @ zm)
                const *= zl[0] * zm[0]
            var += b[le] * b[mo] * (full - const)
    if var < 0.0:
        if var < -1e-10:
            log.warning("analytic variance %.3e clipped to zero", var)
        var = 0.0
    return float(mean), float(var)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def model_to_json(model: LraModel, scenario_hash: str = "") -> str:
    payload = {
        "rank": model.rank,
        "degrees": list(model.degrees),
        "families": [{"kind": f.kind, "params": list(f.params)} for f in model.families],
        "weights": model.weights.tolist(),
        "coefficients": [[z.tolist() for z in zs] for zs in model.coeffs],
        "scenario_hash": scenario_hash,
    }
    return json.dumps(payload, indent=1)


def model_from_json(text: str) -> tuple[LraModel, str]:
    payload = json.loads(text)
    families = tuple(
        PolyFamily(f["kind"], tuple(f["params"]), max(payload["degrees"]))
        for f in payload["families"]
    )
    model = LraModel(
        weights=np.array(payload["weights"], dtype=float),
        coeffs=[[np.array(z, dtype=float) for z in zs] for zs in payload["coefficients"]],
        families=families,
        degrees=tuple(payload["degrees"]),
    )
    return model, payload.get("scenario_hash", "")
