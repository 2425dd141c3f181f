"""Synthetic passenger-count generation and survey noise models.

All generators take an explicit integer seed (or a numpy Generator) and are
pure functions of it; replication harnesses derive per-replicate seeds as
``seed + replicate_index``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import CovariateDesign, ODMatrix, ObservationSet, as_matrix, read_matrix_csv
from .errors import ConfigError

__all__ = [
    "NBParams",
    "SimConfig",
    "sample_counts",
    "subsample_survey",
    "bias_survey_absolute",
    "bias_survey_proportional",
    "sample_regression_counts",
]


@dataclass(frozen=True)
class NBParams:
    """Negative binomial parameter pair; mean = r (1 - p) / p."""

    r: float
    p: float

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigError(f"nb_r must be positive, got {self.r}")
        if not 0 < self.p < 1:
            raise ConfigError(f"nb_p must lie in (0, 1), got {self.p}")

    @property
    def mean(self) -> float:
        return self.r * (1 - self.p) / self.p


_FAMILIES = ("poisson", "negbin")
_NOISE_KINDS = ("absolute", "proportional")
_SURVEY_KINDS = ("subsample", "absolute", "proportional")


@dataclass(frozen=True)
class SimConfig:
    """Full description of one synthetic-data world.

    ``truth`` is the matrix of daily journey means. ``survey_kind`` selects
    how the structural prior is produced: "subsample" draws survey_days
    Poisson subsample matrices at fraction survey_scale and averages them;
    "absolute"/"proportional" apply the corresponding contamination model at
    scale survey_scale and noise level noise_level.
    """

    truth: ODMatrix
    days: int = 100
    family: str = "poisson"
    nb_p: float | None = None
    seed: int = 0
    survey_scale: float = 1 / 6
    noise_level: float = 0.0
    noise_kind: str = "absolute"
    survey_kind: str = "subsample"
    survey_days: int = 200

    def validate(self) -> "SimConfig":
        if self.days < 1:
            raise ConfigError(f"days must be >= 1, got {self.days}")
        if self.family not in _FAMILIES:
            raise ConfigError(f"family must be one of {_FAMILIES}, got {self.family!r}")
        if self.family == "negbin":
            if self.nb_p is None or not 0 < self.nb_p < 1:
                raise ConfigError(f"nb_p must lie in (0, 1) for negbin, got {self.nb_p}")
        if not 0 <= self.survey_scale <= 1:
            raise ConfigError(f"survey_scale must lie in [0, 1], got {self.survey_scale}")
        if not 0 <= self.noise_level <= 1:
            raise ConfigError(f"noise_level must lie in [0, 1], got {self.noise_level}")
        if self.noise_kind not in _NOISE_KINDS:
            raise ConfigError(f"noise_kind must be one of {_NOISE_KINDS}, got {self.noise_kind!r}")
        if self.survey_kind not in _SURVEY_KINDS:
            raise ConfigError(
                f"survey_kind must be one of {_SURVEY_KINDS}, got {self.survey_kind!r}"
            )
        if self.survey_days < 1:
            raise ConfigError(f"survey_days must be >= 1, got {self.survey_days}")
        return self

    def to_file(self, path) -> None:
        """Write as a flat key=value config (truth inlined row per line)."""
        lines = []
        rows = ";".join(",".join(f"{v:.12g}" for v in row) for row in self.truth.entries)
        lines.append(f"truth_inline = {rows}")
        lines.append(f"station_ids = {','.join(self.truth.station_ids)}")
        for key in (
            "days",
            "family",
            "nb_p",
            "seed",
            "survey_scale",
            "noise_level",
            "noise_kind",
            "survey_kind",
            "survey_days",
        ):
            v = getattr(self, key)
            if v is not None:
                lines.append(f"{key} = {v}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_mapping(cls, kv: dict, base_dir: Path | None = None) -> "SimConfig":
        kv = dict(kv)
        if "truth_inline" in kv:
            rows = [
                [float(v) for v in row.split(",")]
                for row in kv.pop("truth_inline").split(";")
            ]
            ids = tuple(
                x.strip() for x in kv.pop("station_ids", "").split(",") if x.strip()
            )
            truth = ODMatrix(np.array(rows), station_ids=ids)
        elif "truth" in kv:
            p = Path(kv.pop("truth"))
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            truth = read_matrix_csv(p)
            kv.pop("station_ids", None)
        else:
            raise ConfigError("config must set truth (matrix csv path) or truth_inline")
        conv = {
            "days": int,
            "seed": int,
            "survey_days": int,
            "survey_scale": float,
            "noise_level": float,
            "nb_p": float,
            "family": str,
            "noise_kind": str,
            "survey_kind": str,
        }
        args = {}
        for key, value in kv.items():
            if key not in conv:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                args[key] = conv[key](value)
            except ValueError as exc:
                raise ConfigError(f"{key} must be a {conv[key].__name__}: {exc}") from exc
        return cls(truth=truth, **args).validate()

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        return cls.from_mapping(parse_kv_file(path), base_dir=Path(path).parent)


def parse_kv_file(path) -> dict:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_counts(
    truth,
    days: int,
    seed,
    family: str = "poisson",
    nb_p: float | None = None,
) -> tuple[np.ndarray, ObservationSet]:
    """Draw one integer count matrix per day around the truth means.

    Poisson draws use the truth entries as means directly. Negative binomial
    draws share a single success probability ``nb_p`` and solve the per-entry
    size from the mean identity mean = r (1 - p) / p, so the implied size
    matrix is truth * p / (1 - p). Zero-mean entries always draw zero.
    """
    rng = _rng(seed)
    m = as_matrix(truth)
    n = m.shape[0]
    counts = np.zeros((days, n, n), dtype=np.int64)
    mask = m > 0
    if family == "poisson":
        counts[:, mask] = rng.poisson(np.broadcast_to(m[mask], (days, int(mask.sum()))))
    elif family == "negbin":
        if nb_p is None or not 0 < nb_p < 1:
            raise ConfigError(f"nb_p must lie in (0, 1) for negbin sampling, got {nb_p}")
        r = m[mask] * nb_p / (1 - nb_p)
        counts[:, mask] = rng.negative_binomial(
            np.broadcast_to(r, (days, int(mask.sum()))), nb_p
        )
    else:
        raise ConfigError(f"unknown sampling family {family!r}")
    ids = truth.station_ids if isinstance(truth, ODMatrix) else ()
    obs = ObservationSet(
        y_dep=counts.sum(axis=2), y_arr=counts.sum(axis=1), station_ids=ids
    )
    return counts, obs


def subsample_survey(truth, pi: float, jitter: float = 0.0, seed=0) -> ODMatrix:
    """One day of survey responses: a Poisson draw around pi * truth.

    ``jitter`` adds independent Poisson(jitter) noise per off-diagonal entry
    on top of the subsample draw; the default 0 gives the bare Poisson
    subsample. The zero diagonal is preserved.
    """
    if not 0 < pi <= 1:
        raise ConfigError(f"survey fraction pi must lie in (0, 1], got {pi}")
    if jitter < 0:
        raise ConfigError(f"jitter must be nonnegative, got {jitter}")
    rng = _rng(seed)
    m = as_matrix(truth)
    out = rng.poisson(pi * m).astype(float)
    if jitter > 0:
        off = ~np.eye(m.shape[0], dtype=bool)
        out[off] += rng.poisson(jitter, size=int(off.sum()))
    np.fill_diagonal(out, 0.0)
    ids = truth.station_ids if isinstance(truth, ODMatrix) else ()
    return ODMatrix(out, station_ids=ids)


def bias_survey_absolute(r_z, alpha: float, eta: float, seed=0) -> ODMatrix:
    """Contaminate a survey parameter matrix with structure-destroying noise.

    Every off-diagonal entry receives an independent Poisson draw whose mean
    is the largest entry of alpha * r_z, scaled by eta: integer-valued noise
    added regardless of the entry's true size. Models badly designed surveys
    or respondents answering at random.
    """
    return _bias_survey(r_z, alpha, eta, seed, absolute=True)


def bias_survey_proportional(r_z, alpha: float, eta: float, seed=0) -> ODMatrix:
    """Contaminate a survey parameter matrix with structure-preserving noise.

    The Poisson noise mean for entry (i, j) is alpha * r_z[i, j], so the
    contamination keeps the shape of the matrix: the analogue of a classical
    measurement error.
    """
    return _bias_survey(r_z, alpha, eta, seed, absolute=False)


def _bias_survey(r_z, alpha: float, eta: float, seed, absolute: bool) -> ODMatrix:
    if not 0 <= alpha <= 1:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if not 0 <= eta <= 1:
        raise ConfigError(f"eta must lie in [0, 1], got {eta}")
    rng = _rng(seed)
    m = as_matrix(r_z)
    base = alpha * m
    out = base.copy()
    if eta > 0:
        off = ~np.eye(m.shape[0], dtype=bool)
        means = np.full(int(off.sum()), base.max()) if absolute else base[off]
        out[off] += eta * rng.poisson(means)
    np.fill_diagonal(out, 0.0)
    ids = r_z.station_ids if isinstance(r_z, ODMatrix) else ()
    return ODMatrix(out, station_ids=ids)


def sample_regression_counts(
    beta0,
    betas: list,
    design: CovariateDesign,
    seed=0,
) -> tuple[np.ndarray, ObservationSet]:
    """Poisson counts whose day-t mean matrix is beta0 + sum_m betas[m] * x[t, m+1].

    The design's first column is the intercept carrying beta0; the remaining
    columns pair with ``betas``. Days whose combined mean matrix goes
    negative are rejected with an error listing them.
    """
    rng = _rng(seed)
    b0 = as_matrix(beta0)
    n = b0.shape[0]
    effs = [as_matrix(b) for b in betas]
    if len(effs) != design.n_covariates - 1:
        raise ConfigError(
            f"{len(effs)} effect matrices for {design.n_covariates - 1} non-intercept columns"
        )
    for b in effs:
        if b.shape != (n, n):
            raise ConfigError("all effect matrices must match beta0's shape")
    days = design.days
    means = np.tile(b0, (days, 1, 1))
    for m, b in enumerate(effs):
        means += design.X[:, m + 1][:, None, None] * b
    tol = 1e-9 * max(1.0, float(np.max(np.abs(means))))
    bad = np.where(means.min(axis=(1, 2)) < -tol)[0]
    if bad.size:
        raise ConfigError(
            f"mean matrix negative on day(s) {bad[:10].tolist()}"
            + ("..." if bad.size > 10 else "")
        )
    np.clip(means, 0.0, None, out=means)
    counts = np.zeros((days, n, n), dtype=np.int64)
    pos = means > 0
    counts[pos] = rng.poisson(means[pos])
    diag = np.arange(n)
    counts[:, diag, diag] = 0
    ids = beta0.station_ids if isinstance(beta0, ODMatrix) else ()
    obs = ObservationSet(
        y_dep=counts.sum(axis=2), y_arr=counts.sum(axis=1), station_ids=ids
    )
    return counts, obs
