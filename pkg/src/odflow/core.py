"""Domain types, margin identities, and the spectral decomposition machinery.

An OD (origin-destination) matrix is a square nonnegative matrix with a zero
diagonal; entry (i, j) counts (or gives the mean of) journeys from station i
to station j. The estimators in :mod:`odflow.estim` work on the eigensystem
of a symmetric OD matrix, so this module also owns the canonicalized
symmetric eigendecomposition and its inverse.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataInconsistencyError, NumericError, SchemaError

__all__ = [
    "ODMatrix",
    "SpectralForm",
    "ObservationSet",
    "CovariateDesign",
    "symmetrize",
    "spectral_decompose",
    "reconstruct",
    "row_col_margins",
    "residual_margins",
    "write_matrix_csv",
    "read_matrix_csv",
]

#: absolute slack allowed when validating nonnegativity / zero diagonals
_ATOL = 1e-9


def _default_ids(n: int) -> tuple[str, ...]:
    return tuple(f"s{i + 1}" for i in range(n))


@dataclass(frozen=True)
class ODMatrix:
    """Validated square OD matrix: nonnegative entries, zero diagonal.

    Entries may be integer counts or nonnegative means; tiny numerical
    violations (below 1e-9 relative) are snapped to the feasible set,
    material ones raise ValueError.
    """

    entries: np.ndarray
    station_ids: tuple[str, ...] = ()
    symmetric: bool = False

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"OD matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("OD matrix entries must be finite")
        scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
        if np.any(a < -_ATOL * scale):
            raise ValueError(f"OD matrix has negative entries (min {a.min():g})")
        np.clip(a, 0.0, None, out=a)
        d = np.abs(np.diagonal(a))
        if np.any(d > _ATOL * scale):
            raise ValueError("OD matrix diagonal must be zero (no self-journeys)")
        np.fill_diagonal(a, 0.0)
        if self.symmetric and not np.array_equal(a, a.T):
            raise ValueError("matrix flagged symmetric but entries[i][j] != entries[j][i]")
        ids = tuple(self.station_ids) or _default_ids(a.shape[0])
        if len(ids) != a.shape[0]:
            raise ValueError(f"{len(ids)} station ids for a {a.shape[0]}-station matrix")
        if len(set(ids)) != len(ids):
            raise ValueError("station ids must be unique")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "station_ids", ids)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def total(self) -> float:
        return float(self.entries.sum())


def as_matrix(x) -> np.ndarray:
    """Accept an ODMatrix or a bare array and return the ndarray view."""
    if isinstance(x, ODMatrix):
        return x.entries
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class SpectralForm:
    """Canonicalized eigensystem of a symmetric OD matrix.

    P holds orthonormal eigenvectors as columns, ordered by descending
    eigenvalue; each column is sign-fixed so its largest-magnitude entry is
    nonnegative. S[k] is the column sum of P[:, k], the quantity that maps
    eigenvalues to margin totals. ``degenerate`` flags (numerically) repeated
    eigenvalues, where eigenvectors are not unique and transferring them to
    another matrix is unreliable.
    """

    P: np.ndarray
    lam: np.ndarray
    S: np.ndarray
    degenerate: bool = False

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def S_d(self) -> np.ndarray:
        return np.diag(self.S)


@dataclass(frozen=True)
class ObservationSet:
    """Per-day departure/arrival margin vectors.

    y_dep[t, i] is the number of departures at station i on day t, y_arr the
    arrivals. For data generated from an OD matrix these are its row and
    column sums, so each day's departures and arrivals balance exactly;
    loaded real data may violate balance, which only warns.
    """

    y_dep: np.ndarray
    y_arr: np.ndarray
    n_rz: np.ndarray | None = None
    station_ids: tuple[str, ...] = ()

    def __post_init__(self):
        yd = np.atleast_2d(np.asarray(self.y_dep, dtype=float))
        ya = np.atleast_2d(np.asarray(self.y_arr, dtype=float))
        if yd.shape != ya.shape:
            raise ValueError(f"departure/arrival shapes differ: {yd.shape} vs {ya.shape}")
        imbalance = np.abs(yd.sum(axis=1) - ya.sum(axis=1))
        bad = int(np.sum(imbalance > _ATOL * max(1.0, float(yd.max(initial=1.0)))))
        if bad:
            warnings.warn(f"{bad} day(s) with unbalanced departure/arrival totals", stacklevel=2)
        nrz = None if self.n_rz is None else np.asarray(self.n_rz, dtype=float)
        if nrz is not None and nrz.shape != (yd.shape[0],):
            raise ValueError("n_rz must have one entry per day")
        ids = tuple(self.station_ids) or _default_ids(yd.shape[1])
        yd.setflags(write=False)
        ya.setflags(write=False)
        object.__setattr__(self, "y_dep", yd)
        object.__setattr__(self, "y_arr", ya)
        object.__setattr__(self, "n_rz", nrz)
        object.__setattr__(self, "station_ids", ids)

    @property
    def days(self) -> int:
        return self.y_dep.shape[0]

    @property
    def n(self) -> int:
        return self.y_dep.shape[1]

    @property
    def y_bar(self) -> np.ndarray:
        """Mean departures per station across days."""
        return self.y_dep.mean(axis=0)


@dataclass(frozen=True)
class CovariateDesign:
    """Exogenous day-level regressors; first column is the all-ones intercept."""

    X: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape[0] < X.shape[1]:
            raise ValueError(f"need at least as many days as covariates, got {X.shape}")
        if not np.allclose(X[:, 0], 1.0):
            raise ValueError("first design column must be the all-ones intercept")
        cond = np.linalg.cond(X)
        if not np.isfinite(cond) or cond > 1e12:
            raise NumericError(f"design matrix is rank-deficient (condition number {cond:.3g})")
        labels = tuple(self.labels) or tuple(
            ["intercept"] + [f"x{i}" for i in range(1, X.shape[1])]
        )
        if len(labels) != X.shape[1]:
            raise ValueError("one label per design column required")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)

    @property
    def days(self) -> int:
        return self.X.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]


def symmetrize(a, station_ids: tuple[str, ...] = ()) -> ODMatrix:
    """Return the symmetric part (A + A')/2 with the diagonal forced to zero.

    Observed survey tallies are rarely symmetric; the estimators assume a
    symmetric parameter matrix, and this is the realization of that
    assumption.
    """
    a = as_matrix(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cannot symmetrize non-square matrix of shape {a.shape}")
    if np.any(a < 0):
        raise ValueError("cannot symmetrize a matrix with negative entries")
    s = (a + a.T) / 2.0
    np.fill_diagonal(s, 0.0)
    if isinstance(station_ids, tuple) and not station_ids and hasattr(a, "station_ids"):
        station_ids = a.station_ids
    return ODMatrix(s, station_ids=station_ids, symmetric=True)


#: relative gap below which two eigenvalues count as repeated
_DEGENERACY_RTOL = 1e-9


def spectral_decompose(r, *, symmetry_tol: float = 1e-10) -> SpectralForm:
    """Eigendecompose a symmetric OD matrix into a canonical SpectralForm.

    The returned columns reconstruct the input as P @ diag(lam) @ P.T.
    Canonicalization (descending eigenvalues, nonnegative largest-magnitude
    entry per column) makes eigenvectors from a survey matrix comparable to
    those of the target matrix across runs.
    """
    a = as_matrix(r)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if np.max(np.abs(a - a.T)) > symmetry_tol * scale:
        raise ValueError("spectral_decompose requires a symmetric matrix")
    try:
        lam, P = np.linalg.eigh((a + a.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(a)) if a.size else float("nan")
        raise NumericError(f"eigensolver failed to converge (cond ~ {cond:.3g})") from exc
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    P = P[:, order]
    for k in range(P.shape[1]):
        j = int(np.argmax(np.abs(P[:, k])))
        if P[j, k] < 0:
            P[:, k] = -P[:, k]
    gap_tol = _DEGENERACY_RTOL * max(1.0, float(np.max(np.abs(lam))))
    degenerate = bool(np.any(np.abs(np.diff(lam)) < gap_tol))
    if degenerate:
        # within a repeated-eigenvalue block the order is arbitrary; fix it
        # by the canonical-sign first entry so runs stay comparable
        i = 0
        n = len(lam)
        while i < n:
            j = i
            while j + 1 < n and abs(lam[j + 1] - lam[i]) < gap_tol:
                j += 1
            if j > i:
                sub = np.argsort(P[0, i : j + 1], kind="stable")
                P[:, i : j + 1] = P[:, i : j + 1][:, sub]
                lam[i : j + 1] = lam[i : j + 1][sub]
            i = j + 1
    S = P.sum(axis=0)
    for arr in (P, lam, S):
        arr.setflags(write=False)
    return SpectralForm(P=P, lam=lam, S=S, degenerate=degenerate)


def reconstruct(P: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Recompose P @ diag(lam) @ P.T.

    The result is symmetric but otherwise unconstrained: it may carry
    negative entries or a nonzero diagonal. Feasibility is restored by
    :func:`odflow.estim.project_constraints`.
    """
    P = np.asarray(P, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"P must be square, got {P.shape}")
    if lam.shape != (P.shape[1],):
        raise ValueError(f"lam has shape {lam.shape}, expected ({P.shape[1]},)")
    return (P * lam) @ P.T


def row_col_margins(x) -> tuple[np.ndarray, np.ndarray]:
    """Departure (row-sum) and arrival (column-sum) vectors of an OD matrix."""
    a = as_matrix(x)
    return a.sum(axis=1), a.sum(axis=0)


def residual_margins(
    y_dep,
    y_arr,
    x_casual=None,
    x_specific=None,
    x_event=None,
    *,
    max_negative_fraction: float = 0.05,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Subtract the margins of the known component matrices from observed margins.

    Returns the residual (departures, arrivals) and the number of cells that
    had to be clamped at zero. Raises DataInconsistencyError when more than
    ``max_negative_fraction`` of the station-day cells go negative, which
    signals that the known components do not belong to these observations.
    """
    yd = np.atleast_2d(np.asarray(y_dep, dtype=float)).copy()
    ya = np.atleast_2d(np.asarray(y_arr, dtype=float)).copy()
    n = yd.shape[1]
    known = np.zeros((n, n))
    for part in (x_casual, x_specific, x_event):
        if part is not None:
            m = as_matrix(part)
            if m.shape != (n, n):
                raise ValueError(f"known component has shape {m.shape}, expected {(n, n)}")
            known += m
    dep_k, arr_k = known.sum(axis=1), known.sum(axis=0)
    yd -= dep_k
    ya -= arr_k
    neg = int(np.sum(yd < -_ATOL) + np.sum(ya < -_ATOL))
    total = yd.size + ya.size
    if neg > max_negative_fraction * total:
        raise DataInconsistencyError(
            f"{neg}/{total} residual margin cells negative; known components "
            "exceed the observed counts"
        )
    if neg:
        warnings.warn(f"{neg} residual margin cell(s) clamped at zero", stacklevel=2)
    np.clip(yd, 0.0, None, out=yd)
    np.clip(ya, 0.0, None, out=ya)
    return yd, ya, neg


# --- CSV serialization -----------------------------------------------------
#
# Matrix schema: one header row with the station ids, then one row of values
# per origin station, floats written with 12 significant digits.


def write_matrix_csv(path, matrix, station_ids: tuple[str, ...] = ()) -> None:
    a = as_matrix(matrix)
    ids = tuple(station_ids) or (
        matrix.station_ids if isinstance(matrix, ODMatrix) else _default_ids(a.shape[0])
    )
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ids)
        for row in a:
            w.writerow([f"{v:.12g}" for v in row])


def read_matrix_csv(path) -> ODMatrix:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SchemaError(f"cannot read matrix file {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"matrix file {path} is empty")
    ids = tuple(x.strip() for x in rows[0])
    data = rows[1:]
    if len(data) != len(ids):
        raise SchemaError(
            f"matrix file {path}: {len(ids)} columns but {len(data)} data rows"
        )
    try:
        a = np.array([[float(v) for v in row] for row in data])
    except ValueError as exc:
        raise SchemaError(f"matrix file {path}: non-numeric entry ({exc})") from exc
    if a.shape != (len(ids), len(ids)):
        raise SchemaError(f"matrix file {path}: ragged rows")
    try:
        return ODMatrix(a, station_ids=ids)
    except ValueError as exc:
        raise SchemaError(f"matrix file {path}: {exc}") from exc
