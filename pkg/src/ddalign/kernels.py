"""Gaussian-kernel two-sample statistics: MMD and its class-conditional variant.

The marginal statistic compares two feature clouds through the biased
block-sum estimator

    mmd(X, Y) = S_xx / n^2 + S_yy / m^2 - 2 S_xy / (n m)

where S_ab sums the kernel k(u, v) = exp(-||u - v||^2 / sigma) over all pairs
of the respective blocks. The conditional variant applies the same estimator
per class and averages over classes present in both sides. Gradient helpers
return exact derivatives with respect to the input features so the training
loop can backpropagate through both statistics; the bandwidth is treated as a
constant of the evaluation even when it was chosen by the median heuristic.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import gaussian_kernel_matrix, pairwise_sq_dists
from .errors import ValidationError

SIGMA_FIXED = "fixed"
SIGMA_MEDIAN = "median_heuristic"

# float residue of mmd(X, X) may dip this far below zero before clamping
MMD_NEGATIVE_TOL = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth selection for the Gaussian kernel.

    ``sigma`` is the denominator of the squared-distance exponent. With
    ``sigma_mode="median_heuristic"`` it is recomputed from the pooled inputs
    of each statistic and ``sigma`` may stay None.
    """

    sigma: float | None = None
    sigma_mode: str = SIGMA_MEDIAN

    def __post_init__(self):
        if self.sigma_mode not in (SIGMA_FIXED, SIGMA_MEDIAN):
            raise ValidationError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.sigma_mode == SIGMA_FIXED:
            if self.sigma is None or not np.isfinite(self.sigma) or self.sigma <= 0:
                raise ValidationError("fixed sigma_mode needs sigma > 0")


@dataclass
class LabeledBatch:
    """Feature rows with integer class ids in [0, n_classes)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValidationError("features must be a non-empty [n, d] matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValidationError("labels length must match feature rows")
        if self.labels.min() < 0:
            raise ValidationError("negative class id")


def _as_matrix(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix, got ndim={X.ndim}")
    if not np.isfinite(X).all():
        raise ValidationError(f"{name} contains non-finite values")
    return X


def gaussian_kernel(u: np.ndarray, v: np.ndarray, cfg: KernelConfig) -> float:
    """k(u, v) = exp(-||u - v||^2 / sigma) for two single vectors."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if not (np.isfinite(u).all() and np.isfinite(v).all()):
        raise ValidationError("non-finite input")
    sigma = _require_sigma(cfg)
    d2 = float(np.dot(u - v, u - v))
    return float(np.exp(-d2 / sigma))


def kernel_matrix(X: np.ndarray, Y: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Kernel Gram block with entry (i, j) = k(X_i, Y_j)."""
    X = _as_matrix(X, "X")
    Y = _as_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ValidationError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return gaussian_kernel_matrix(X, Y, _require_sigma(cfg))


def median_bandwidth(Z: np.ndarray) -> float:
    """Median of pairwise squared distances over distinct rows; 1.0 if degenerate."""
    Z = _as_matrix(Z, "Z")
    n = Z.shape[0]
    if n < 2:
        raise ValidationError("median bandwidth needs at least 2 rows")
    d2 = pairwise_sq_dists(Z, Z)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(d2[iu]))
    return med if med > 0.0 else 1.0


def resolve_sigma(cfg: KernelConfig, pooled: np.ndarray | None = None) -> float:
    """Fixed sigma, or the median heuristic applied to ``pooled`` rows."""
    if cfg.sigma_mode == SIGMA_FIXED:
        return float(cfg.sigma)
    if pooled is None:
        raise ValidationError("median_heuristic sigma needs pooled features")
    return median_bandwidth(pooled)


def _require_sigma(cfg: KernelConfig) -> float:
    if cfg.sigma is None:
        raise ValidationError("sigma unresolved; call resolve_sigma first or use fixed mode")
    if cfg.sigma <= 0:
        raise ValidationError("sigma must be positive")
    return float(cfg.sigma)


def mmd_raw(Xs: np.ndarray, Xt: np.ndarray, sigma: float) -> float:
    """Unclamped block-sum estimator for a resolved bandwidth."""
    n, m = Xs.shape[0], Xt.shape[0]
    k_ss = gaussian_kernel_matrix(Xs, Xs, sigma)
    k_tt = gaussian_kernel_matrix(Xt, Xt, sigma)
    k_st = gaussian_kernel_matrix(Xs, Xt, sigma)
    return float(k_ss.sum() / n**2 + k_tt.sum() / m**2 - 2.0 * k_st.sum() / (n * m))


def cmmd_raw(
    Xs: np.ndarray, ys: np.ndarray, Xt: np.ndarray, yt: np.ndarray,
    sigma: float, n_classes: int,
) -> float:
    """Unclamped per-class average for a resolved bandwidth; 0.0 if no shared class."""
    total = 0.0
    shared = 0
    for c in range(n_classes):
        xs_c = Xs[ys == c]
        xt_c = Xt[yt == c]
        if xs_c.shape[0] == 0 or xt_c.shape[0] == 0:
            continue
        total += mmd_raw(xs_c, xt_c, sigma)
        shared += 1
    return total / shared if shared else 0.0


def mmd(Xs: np.ndarray, Xt: np.ndarray, cfg: KernelConfig) -> float:
    """Marginal discrepancy between two feature clouds, clamped to >= 0."""
    Xs = _as_matrix(Xs, "Xs")
    Xt = _as_matrix(Xt, "Xt")
    if Xs.shape[0] == 0 or Xt.shape[0] == 0:
        raise ValidationError("mmd needs at least one sample on each side")
    if Xs.shape[1] != Xt.shape[1]:
        raise ValidationError(f"dimension mismatch: {Xs.shape[1]} vs {Xt.shape[1]}")
    sigma = resolve_sigma(cfg, np.vstack([Xs, Xt]))
    return max(mmd_raw(Xs, Xt, sigma), 0.0)


def cmmd(src: LabeledBatch, tgt: LabeledBatch, cfg: KernelConfig, n_classes: int) -> float:
    """Class-conditional discrepancy averaged over classes present on both sides.

    Classes missing from either batch contribute nothing; the normalizer is
    the number of shared classes. Returns 0.0 when no class is shared.
    """
    if n_classes < 1:
        raise ValidationError("n_classes must be >= 1")
    for name, batch in (("src", src), ("tgt", tgt)):
        if batch.labels.max() >= n_classes:
            raise ValidationError(f"{name} label exceeds n_classes={n_classes}")
    if src.features.shape[1] != tgt.features.shape[1]:
        raise ValidationError("feature dimension mismatch between batches")
    sigma = resolve_sigma(cfg, np.vstack([src.features, tgt.features]))
    raw = cmmd_raw(src.features, src.labels, tgt.features, tgt.labels, sigma, n_classes)
    return max(raw, 0.0)


def mmd_with_grad(
    Xs: np.ndarray, Xt: np.ndarray, sigma: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Raw (unclamped) mmd value plus exact gradients w.r.t. both inputs.

    Sigma is a fixed constant here; the kernel Gram blocks are the only
    coupling between rows, so each gradient is a weighted combination of
    kernel row sums and kernel-matrix products.
    """
    n, m = Xs.shape[0], Xt.shape[0]
    k_ss = gaussian_kernel_matrix(Xs, Xs, sigma)
    k_tt = gaussian_kernel_matrix(Xt, Xt, sigma)
    k_st = gaussian_kernel_matrix(Xs, Xt, sigma)
    value = float(k_ss.sum() / n**2 + k_tt.sum() / m**2 - 2.0 * k_st.sum() / (n * m))

    # d/du exp(-||u-v||^2/sigma) = k(u,v) * (-2/sigma) (u - v); summing over
    # pair weights gives diag(row-sum) X - K Y combinations per block.
    c_ss = 4.0 / (sigma * n * n)
    c_tt = 4.0 / (sigma * m * m)
    c_st = 4.0 / (sigma * n * m)
    d_xs = -c_ss * (k_ss.sum(axis=1)[:, None] * Xs - k_ss @ Xs)
    d_xs += c_st * (k_st.sum(axis=1)[:, None] * Xs - k_st @ Xt)
    d_xt = -c_tt * (k_tt.sum(axis=1)[:, None] * Xt - k_tt @ Xt)
    d_xt += c_st * (k_st.sum(axis=0)[:, None] * Xt - k_st.T @ Xs)
    return value, d_xs, d_xt


def cmmd_with_grad(
    Xs: np.ndarray,
    ys: np.ndarray,
    Xt: np.ndarray,
    yt: np.ndarray,
    sigma: float,
    n_classes: int,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Raw class-conditional mmd plus exact gradients w.r.t. both feature sets.

    Rows whose class is absent on the other side receive zero gradient.
    """
    d_xs = np.zeros_like(Xs)
    d_xt = np.zeros_like(Xt)
    total = 0.0
    shared = 0
    for c in range(n_classes):
        s_idx = np.flatnonzero(ys == c)
        t_idx = np.flatnonzero(yt == c)
        if s_idx.size == 0 or t_idx.size == 0:
            continue
        val_c, g_s, g_t = mmd_with_grad(Xs[s_idx], Xt[t_idx], sigma)
        total += val_c
        d_xs[s_idx] += g_s
        d_xt[t_idx] += g_t
        shared += 1
    if shared == 0:
        return 0.0, d_xs, d_xt
    return total / shared, d_xs / shared, d_xt / shared
