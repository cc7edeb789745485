"""Gaussian mixture class models and coarse-to-fine MAP label refinement.

Per-block class log-likelihoods are summed up a quadtree; the coarsest
level is labelled by maximum likelihood and every finer level adds the log
of a parent-to-child transition probability before taking the argmax.
The transition probability (probability that a child keeps its parent's
class) is re-estimated at each level from the current agreement rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .imaging import BlockLabel

REG = 1e-6
THETA_MIN, THETA_MAX = 0.01, 0.99
# class index order used throughout this module
CLASSES = (BlockLabel.TEXT, BlockLabel.PICTURE)


@dataclass
class GmmModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    covariances: np.ndarray  # (k, d, d)
    fallback: bool = False
    converged: bool = False
    loglik_history: List[float] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_logpdf(self, x: np.ndarray) -> np.ndarray:
        """``log(w_j * N(x | mu_j, S_j))`` for every sample and component."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d = x.shape[1]
        out = np.empty((len(x), self.n_components))
        for j in range(self.n_components):
            cov = self.covariances[j]
            chol = np.linalg.cholesky(cov)
            diff = np.linalg.solve(chol, (x - self.means[j]).T)
            maha = (diff * diff).sum(axis=0)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            out[:, j] = (np.log(self.weights[j]) - 0.5 * (d * math.log(2 * math.pi)
                                                         + logdet + maha))
        return out

    def score_samples(self, x) -> np.ndarray:
        return logsumexp(self.component_logpdf(x), axis=1)


def _single_gaussian(x: np.ndarray, reg: float) -> GmmModel:
    d = x.shape[1]
    mean = x.mean(axis=0)
    cov = np.cov(x.T, bias=True).reshape(d, d) if len(x) > 1 else np.zeros((d, d))
    cov = cov + reg * np.eye(d)
    model = GmmModel(np.ones(1), mean[None, :], cov[None], fallback=True, converged=True)
    model.loglik_history.append(float(logsumexp(_penalised_logpdf(model, x, reg), axis=1).sum()))
    return model


def _penalised_logpdf(model: GmmModel, x: np.ndarray, reg: float) -> np.ndarray:
    """Component log-densities minus ``reg/2 * tr(S_j^-1)``.

    EM on this objective has ``S_j = scatter_j + reg * I`` as its exact
    M-step, so the regularised fit still ascends monotonically.
    """
    pen = np.array([np.trace(np.linalg.inv(c)) for c in model.covariances])
    return model.component_logpdf(x) - 0.5 * reg * pen[None, :]


def fit_gmm(features, n_components: int = 2, seed: int = 0, tol: float = 1e-6,
            max_iter: int = 200, reg: float = REG) -> GmmModel:
    """EM fit of a full-covariance mixture.

    Falls back to a single Gaussian (``fallback=True``) when there are
    fewer distinct samples than components. ``reg`` is added to every
    covariance diagonal; ``loglik_history`` tracks the matching penalised
    log-likelihood, which is what the iterations provably increase.
    """
    x = np.asarray(features, dtype=np.float64)
    x = x.reshape(len(x), -1)
    n, d = x.shape
    if n == 0:
        raise ValueError("cannot fit a mixture to zero samples")
    if n_components <= 1 or len(np.unique(x, axis=0)) < n_components:
        return _single_gaussian(x, reg)

    # k-means++ style seeding
    rng = np.random.default_rng(seed)
    centres = [x[rng.integers(n)]]
    for _ in range(1, n_components):
        d2 = np.min([((x - c) ** 2).sum(axis=1) for c in centres], axis=0)
        centres.append(x[rng.choice(n, p=d2 / d2.sum())])
    base_cov = np.cov(x.T, bias=True).reshape(d, d) + reg * np.eye(d)
    model = GmmModel(
        weights=np.full(n_components, 1.0 / n_components),
        means=np.array(centres),
        covariances=np.repeat(base_cov[None], n_components, axis=0),
    )

    for _ in range(max_iter):
        logp = _penalised_logpdf(model, x, reg)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        hist = model.loglik_history
        if hist and abs(ll - hist[-1]) < tol:
            hist.append(ll)
            model.converged = True
            break
        hist.append(ll)
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        keep = nk > 1e-10 * n
        resp, nk = resp[:, keep], nk[keep]
        means = (resp.T @ x) / nk[:, None]
        covs = np.empty((len(nk), d, d))
        for j in range(len(nk)):
            diff = x - means[j]
            covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j] + reg * np.eye(d)
        model.weights = nk / nk.sum()
        model.means = means
        model.covariances = covs
    return model


def class_loglikelihood(v, text_model: GmmModel, pic_model: GmmModel) -> Tuple[float, float]:
    x = v.as_array() if hasattr(v, "as_array") else np.asarray(v, dtype=np.float64)
    return (float(text_model.score_samples(x[None])[0]),
            float(pic_model.score_samples(x[None])[0]))


# ---------------------------------------------------------------------------
# multiscale refinement


@dataclass
class SmapParams:
    theta_init: float = 0.5
    epsilon: float = 1e-3
    levels: Optional[int] = None  # None -> floor(log2(min(rows, cols)))
    estimate: bool = True
    max_em_iter: int = 50
    classes: int = 2

    def __post_init__(self):
        if not 0 < self.theta_init < 1:
            raise ValueError("theta_init must lie in (0, 1)")
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be >= 1")


@dataclass
class LabelPyramid:
    labels: List[np.ndarray]  # labels[n] is level n; -1 marks holes
    thetas: List[float]  # agreement probability used at level n (NaN at the top)


def default_levels(rows: int, cols: int) -> int:
    m = min(rows, cols)
    return max(1, int(math.floor(math.log2(m)))) if m >= 1 else 1


def _coarsen(ll: np.ndarray, mask: np.ndarray):
    r, c, m = ll.shape
    pr, pc = -(-r // 2), -(-c // 2)
    llp = np.zeros((2 * pr, 2 * pc, m))
    mk = np.zeros((2 * pr, 2 * pc), dtype=bool)
    llp[:r, :c] = np.where(mask[..., None], ll, 0.0)
    mk[:r, :c] = mask
    llp = llp.reshape(pr, 2, pc, 2, m).sum(axis=(1, 3))
    mk = mk.reshape(pr, 2, pc, 2).any(axis=(1, 3))
    return llp, mk


def _parent_labels(parent: np.ndarray, shape) -> np.ndarray:
    up = np.repeat(np.repeat(parent, 2, axis=0), 2, axis=1)
    return up[: shape[0], : shape[1]]


def _log_transition(theta: float, m: int) -> Tuple[float, float]:
    return math.log(theta), math.log((1.0 - theta) / (m - 1))


def smap_pyramid(loglik: np.ndarray, mask: Optional[np.ndarray] = None,
                 params: Optional[SmapParams] = None) -> LabelPyramid:
    """Coarse-to-fine labelling from a ``(rows, cols, M)`` log-likelihood grid."""
    p = params or SmapParams()
    ll = np.asarray(loglik, dtype=np.float64)
    rows, cols, m = ll.shape
    mask = np.ones((rows, cols), dtype=bool) if mask is None else np.asarray(mask, bool)
    levels = p.levels or default_levels(rows, cols)

    lls, masks = [np.where(mask[..., None], ll, 0.0)], [mask]
    for _ in range(levels):
        a, b = _coarsen(lls[-1], masks[-1])
        lls.append(a)
        masks.append(b)

    top = np.where(masks[levels], np.argmax(lls[levels], axis=2), -1)
    labels: List[Optional[np.ndarray]] = [None] * (levels + 1)
    thetas = [float("nan")] * (levels + 1)
    labels[levels] = top
    theta = p.theta_init
    for n in range(levels - 1, -1, -1):
        parent = _parent_labels(labels[n + 1], masks[n].shape)
        onehot = parent[..., None] == np.arange(m)
        active = masks[n]
        for _ in range(p.max_em_iter if p.estimate else 1):
            log_same, log_diff = _log_transition(theta, m)
            score = lls[n] + np.where(onehot, log_same, log_diff)
            x = np.argmax(score, axis=2)
            if not p.estimate or not active.any():
                break
            agree = float(np.mean(x[active] == parent[active]))
            new_theta = min(max(agree, THETA_MIN), THETA_MAX)
            if abs(new_theta - theta) < p.epsilon:
                theta = new_theta
                break
            theta = new_theta
        # final labels use the settled theta
        log_same, log_diff = _log_transition(theta, m)
        x = np.argmax(lls[n] + np.where(onehot, log_same, log_diff), axis=2)
        labels[n] = np.where(active, x, -1)
        thetas[n] = theta
        if p.estimate:
            theta = min(max(theta * (1.0 - 10.0 * p.epsilon ** 2), THETA_MIN), THETA_MAX)
    return LabelPyramid(labels, thetas)


def smap_from_loglik(loglik, mask=None, params: Optional[SmapParams] = None) -> np.ndarray:
    """Finest-level class indices (``-1`` on holes)."""
    return smap_pyramid(loglik, mask, params).labels[0]


def smap_refine(features: np.ndarray, text_model: GmmModel, pic_model: GmmModel,
                params: Optional[SmapParams] = None,
                mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Refine a ``(rows, cols, 2)`` feature grid into Text / Picture block labels.

    Blocks outside ``mask`` (or whose features are NaN) are holes and come
    back as Background.
    """
    f = np.asarray(features, dtype=np.float64)
    rows, cols = f.shape[:2]
    if mask is None:
        mask = ~np.isnan(f).any(axis=2)
    out = np.full((rows, cols), int(BlockLabel.BACKGROUND), dtype=np.uint8)
    if not mask.any():
        return out
    idx = smap_from_loglik(_loglik_grid(f, mask, text_model, pic_model), mask, params)
    codes = np.array([int(c) for c in CLASSES], dtype=np.uint8)
    out[mask] = codes[idx[mask]]
    return out


def refine_labels(features: np.ndarray, labels: np.ndarray, params: SmapParams,
                  n_components: int = 2, seed: int = 0):
    """Fit one mixture per class from the current labels, then run SMAP.

    Returns ``(labels, info)``. Labels are returned unchanged when either
    class has no blocks, since there is nothing to contrast against.
    """
    text = labels == BlockLabel.TEXT
    pic = labels == BlockLabel.PICTURE
    info = {"applied": False}
    if not text.any() or not pic.any():
        return labels.copy(), info
    text_model = fit_gmm(features[text], n_components, seed)
    pic_model = fit_gmm(features[pic], n_components, seed)
    fg = text | pic
    pyr = smap_pyramid(_loglik_grid(features, fg, text_model, pic_model), fg, params)
    out = labels.copy()
    codes = np.array([int(c) for c in CLASSES], dtype=np.uint8)
    out[fg] = codes[pyr.labels[0][fg]]
    info.update(applied=True, levels=len(pyr.labels) - 1,
                thetas=[None if math.isnan(t) else t for t in pyr.thetas],
                changed=int(np.count_nonzero(out != labels)),
                text_fallback=text_model.fallback, picture_fallback=pic_model.fallback)
    return out, info


def _loglik_grid(features, mask, text_model, pic_model) -> np.ndarray:
    rows, cols = mask.shape
    ll = np.zeros((rows, cols, 2))
    pts = features[mask]
    ll[mask, 0] = text_model.score_samples(pts)
    ll[mask, 1] = pic_model.score_samples(pts)
    return ll
