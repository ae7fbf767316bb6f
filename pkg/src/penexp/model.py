"""Problem instances and synthetic data generation.

Covariance models with cached square roots, group structures, sparse ground
truths, and the two observation models: Gaussian-noise linear regression and
binary labels with the flipped convention P(Y=1|x) = 1/(1+exp(x'beta)), under
which a large positive index x'beta makes the label 1 rare.

All generation is driven by counter-based Philox streams keyed by
(master_seed, stream ids), so draws do not depend on the order in which
parallel replications complete.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

# Sub-Gaussian scale of the standardized design rows, recorded per design
# kind and consumed by the penalty-level formulas.
DESIGN_SUBGAUSSIAN_L = {"gaussian": 1.0, "rademacher": 1.0}


def stream_rng(master_seed, *ids):
    """Return a Generator on an independent Philox stream.

    Parameters
    ----------
    master_seed : int
        Experiment-level seed.
    *ids : int
        Stream identifiers (grid point, replication, purpose). Distinct id
        tuples give statistically independent streams.
    """
    seq = np.random.SeedSequence((int(master_seed),) + tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(seq))


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Population covariance Sigma with cached square root and inverse.

    The square root is the symmetric one (from an eigendecomposition, not a
    Cholesky factor), so ||Sigma^{1/2} u|| norms read the same as in the
    analysis. Diagonal entries must not exceed 1 (normalized features) and
    the matrix must be positive definite.
    """

    kind: str
    p: int
    rho: float
    matrix: np.ndarray
    sqrt: np.ndarray
    inv: np.ndarray
    is_identity: bool

    @classmethod
    def identity(cls, p):
        eye = _readonly(np.eye(int(p)))
        # One shared buffer: matrix, sqrt and inverse coincide.
        return cls("identity", int(p), 0.0, eye, eye, eye, True)

    @classmethod
    def ar1(cls, p, rho):
        """AR(1) covariance, entry (i, j) = rho^|i-j|."""
        rho = float(rho)
        if not -1.0 < rho < 1.0:
            raise ValueError("ar1 correlation must lie in (-1, 1), got %g" % rho)
        idx = np.arange(int(p))
        matrix = rho ** np.abs(idx[:, None] - idx[None, :])
        return cls._build("ar1", rho, matrix)

    @classmethod
    def explicit(cls, matrix):
        return cls._build("explicit", 0.0, matrix)

    @classmethod
    def _build(cls, kind, rho, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("covariance must be a square matrix")
        p = matrix.shape[0]
        if np.abs(matrix - matrix.T).max() > 1e-10:
            raise ValueError("covariance must be symmetric")
        matrix = 0.5 * (matrix + matrix.T)
        if np.diag(matrix).max() > 1.0 + 1e-12:
            raise ValueError("diagonal entries must be <= 1 (normalized features)")
        if np.array_equal(matrix, np.eye(p)):
            # Exact-identity fast path; keeps ar1(0) draws bit-identical to
            # the identity model.
            eye = _readonly(np.eye(p))
            return cls(kind, p, rho, eye, eye, eye, True)
        w, vecs = np.linalg.eigh(matrix)
        if w.min() < 1e-10:
            raise ValueError(
                "covariance is not positive definite (min eigenvalue %.3e); "
                "supply a full-rank matrix" % w.min())
        sqrt = (vecs * np.sqrt(w)) @ vecs.T
        inv = (vecs / w) @ vecs.T
        return cls(kind, p, rho, _readonly(matrix),
                   _readonly(0.5 * (sqrt + sqrt.T)),
                   _readonly(0.5 * (inv + inv.T)), False)


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """Partition of {0, ..., p-1} into M disjoint groups of equal size d."""

    p: int
    M: int
    d: int
    groups: tuple

    @classmethod
    def contiguous(cls, M, d):
        """M consecutive blocks of size d."""
        M, d = int(M), int(d)
        groups = tuple(_readonly_idx(np.arange(k * d, (k + 1) * d)) for k in range(M))
        return cls(M * d, M, d, groups)

    @classmethod
    def from_indices(cls, groups, p=None):
        groups = tuple(_readonly_idx(np.asarray(g, dtype=np.intp)) for g in groups)
        sizes = {g.size for g in groups}
        if len(sizes) != 1:
            raise ValueError("all groups must have equal size")
        d = sizes.pop()
        allidx = np.concatenate(groups)
        if p is None:
            p = allidx.size
        if sorted(allidx.tolist()) != list(range(p)):
            raise ValueError("groups must partition {0, ..., p-1}")
        return cls(int(p), len(groups), int(d), groups)


def _readonly_idx(a):
    a = np.ascontiguousarray(a, dtype=np.intp)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Sparse coefficient vector with its support bookkeeping."""

    beta_star: np.ndarray
    support: np.ndarray
    sparsity: int
    group_support: np.ndarray | None
    group_sparsity: int | None

    @classmethod
    def from_vector(cls, beta_star, groups=None):
        beta_star = _readonly(np.asarray(beta_star, dtype=float))
        support = _readonly_idx(np.flatnonzero(beta_star))
        gsup = gs = None
        if groups is not None:
            nz = [k for k, g in enumerate(groups.groups)
                  if np.any(beta_star[g] != 0.0)]
            gsup = _readonly_idx(np.asarray(nz, dtype=np.intp))
            gs = len(nz)
        return cls(beta_star, support, int(support.size), gsup, gs)


def flat_signal(p, s, amplitude=1.0):
    """Coefficient vector with the first s coordinates set to amplitude."""
    if not 0 <= s <= p:
        raise ValueError("need 0 <= s <= p")
    beta = np.zeros(int(p))
    beta[: int(s)] = float(amplitude)
    return beta


@dataclass(frozen=True, eq=False)
class Dataset:
    """One simulated sample, with the noise realization kept for oracle use.

    For linear data y = X beta_star + noise holds exactly as generated.
    Logistic datasets store no noise vector (labels are 0/1 floats).
    """

    X: np.ndarray
    y: np.ndarray
    model_kind: str
    design_kind: str
    noise: np.ndarray | None
    noise_sd: float | None
    beta_star: np.ndarray
    covariance: CovarianceModel | None
    seed: int

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


def generate_design(cov, n, design_kind="gaussian", seed=0):
    """Draw n iid rows with covariance cov.

    Gaussian rows are Sigma^{1/2} times standard normals; rademacher rows are
    Sigma^{1/2} times iid signs. Both are sub-Gaussian with respect to their
    covariance with constant L = 1 (DESIGN_SUBGAUSSIAN_L).
    """
    n = int(n)
    if n < 1:
        raise ValueError("need n >= 1")
    return draw_rows(cov, n, design_kind, stream_rng(seed, 0))


def draw_rows(cov, n, design_kind, rng):
    """Draw n covariance-cov rows from an already-seeded generator."""
    if design_kind == "gaussian":
        raw = rng.standard_normal((n, cov.p))
    elif design_kind == "rademacher":
        raw = 2.0 * rng.integers(0, 2, size=(n, cov.p)).astype(float) - 1.0
    else:
        raise ValueError("unknown design kind %r" % (design_kind,))
    if cov.is_identity:
        return raw
    return raw @ cov.sqrt


def generate_linear(X, beta_star, noise_sd, seed, covariance=None,
                    design_kind="gaussian"):
    """Gaussian-noise linear responses y = X beta_star + eps.

    The noise vector is stored on the Dataset so oracle quantities (realized
    noise scale, expansion centers) can be computed downstream.
    """
    X = np.asarray(X, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    if X.shape[1] != beta_star.size:
        raise ValueError("design has %d columns but beta_star has %d entries"
                         % (X.shape[1], beta_star.size))
    rng = stream_rng(seed, 1)
    eps = float(noise_sd) * rng.standard_normal(X.shape[0])
    y = X @ beta_star + eps
    return Dataset(_readonly(X), _readonly(y), "linear", design_kind,
                   _readonly(eps), float(noise_sd), _readonly(beta_star),
                   covariance, int(seed))


def generate_logistic(X, beta_star, seed, covariance=None,
                      design_kind="gaussian"):
    """Binary labels with P(Y=1|x) = 1/(1+exp(x'beta_star)).

    Note the flipped convention: the larger x'beta_star, the rarer the label
    1. Downstream curvature constants assume ||Sigma^{1/2} beta_star|| <= 1;
    when a covariance is supplied and the bound fails, a warning is issued
    (generation itself is unaffected).
    """
    X = np.asarray(X, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    if X.shape[1] != beta_star.size:
        raise ValueError("design has %d columns but beta_star has %d entries"
                         % (X.shape[1], beta_star.size))
    if covariance is not None:
        sig_norm = float(np.linalg.norm(covariance.sqrt @ beta_star))
        if sig_norm > 1.0 + 1e-9:
            warnings.warn(
                "||Sigma^{1/2} beta_star|| = %.4f > 1; curvature constants "
                "derived for the unit ball may not apply" % sig_norm,
                stacklevel=2)
    rng = stream_rng(seed, 1)
    index = X @ beta_star
    # P(Y=1) = sigmoid(-index) under the flipped convention.
    p1 = 1.0 / (1.0 + np.exp(np.clip(index, -700, 700)))
    y = (rng.random(X.shape[0]) < p1).astype(float)
    return Dataset(_readonly(X), _readonly(y), "logistic", design_kind,
                   None, None, _readonly(beta_star), covariance, int(seed))


def noise_scale(dataset):
    """Root mean square of the stored noise realizations.

    This is an oracle quantity, available only because the simulation keeps
    the drawn noise. Raises on logistic data, which stores none.
    """
    if dataset.noise is None:
        raise ValueError("dataset has no stored noise "
                         "(noise scale is defined for linear data only)")
    eps = dataset.noise
    return float(np.sqrt(np.mean(eps * eps))) if eps.size else 0.0


def save_dataset(dataset, path):
    """Persist a dataset as meta.json plus little-endian float64 binaries."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "n": dataset.n,
        "p": dataset.p,
        "model_kind": dataset.model_kind,
        "design_kind": dataset.design_kind,
        "seed": dataset.seed,
        "beta_star": [float(b) for b in dataset.beta_star],
        "noise_sd": dataset.noise_sd,
        "covariance": _cov_meta(dataset.covariance),
    }
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    dataset.X.astype("<f8").tofile(os.path.join(path, "X.bin"))
    dataset.y.astype("<f8").tofile(os.path.join(path, "y.bin"))
    if dataset.noise is not None:
        dataset.noise.astype("<f8").tofile(os.path.join(path, "eps.bin"))
    if dataset.covariance is not None and dataset.covariance.kind == "explicit":
        dataset.covariance.matrix.astype("<f8").tofile(
            os.path.join(path, "Sigma.bin"))


def _cov_meta(cov):
    if cov is None:
        return None
    if cov.kind == "explicit":
        return {"kind": "explicit", "p": cov.p}
    return {"kind": cov.kind, "p": cov.p, "rho": cov.rho}


def load_dataset(path):
    with open(os.path.join(path, "meta.json")) as fh:
        meta = json.load(fh)
    n, p = meta["n"], meta["p"]
    X = np.fromfile(os.path.join(path, "X.bin"), dtype="<f8").reshape(n, p)
    y = np.fromfile(os.path.join(path, "y.bin"), dtype="<f8")
    eps_path = os.path.join(path, "eps.bin")
    noise = np.fromfile(eps_path, dtype="<f8") if os.path.exists(eps_path) else None
    cov = _cov_from_meta(meta["covariance"], path)
    return Dataset(_readonly(X), _readonly(y), meta["model_kind"],
                   meta["design_kind"],
                   _readonly(noise) if noise is not None else None,
                   meta["noise_sd"],
                   _readonly(np.asarray(meta["beta_star"], dtype=float)),
                   cov, int(meta["seed"]))


def _cov_from_meta(meta, path):
    if meta is None:
        return None
    if meta["kind"] == "identity":
        return CovarianceModel.identity(meta["p"])
    if meta["kind"] == "ar1":
        return CovarianceModel.ar1(meta["p"], meta["rho"])
    mat = np.fromfile(os.path.join(path, "Sigma.bin"),
                      dtype="<f8").reshape(meta["p"], meta["p"])
    return CovarianceModel.explicit(mat)
