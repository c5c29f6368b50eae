"""Belief-mass fusion across views and the multi-task objective.

Two opinions combine by redistributing the mass of their agreeing parts:
with conflict C = sum_{i != j} b_i^1 b_j^2,

    b_k = (b_k^1 b_k^2 + b_k^1 u^2 + b_k^2 u^1) / (1 - C)
    u   = u^1 u^2 / (1 - C)

The rule is commutative and associative, so a left fold over the views is
order-invariant. A fused opinion converts back to concentrations through
the strength S = K / u via alpha_k = b_k * S + 1.

Raw-array kernels (prefixed ``_``) carry caches and reverse-mode
vector-Jacobian products so gradients can flow from the fused objective
back into every per-view evidence head.
"""

from __future__ import annotations

import numpy as np

from evifuse.evidential import DirichletParams, SubjectiveOpinion, view_loss, view_loss_grad

_CONFLICT_EPS = 1e-12


class FusionConflictError(RuntimeError):
    """Raised when two opinions are in (near-)total conflict: 1 - C <= 1e-12."""

    def __init__(self, message: str, rows: np.ndarray | None = None):
        super().__init__(message)
        self.rows = rows


# -- raw-array kernels, batched over leading axes ---------------------------


def _opinion_arrays(alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    strength = alpha.sum(axis=-1, keepdims=True)
    return (alpha - 1.0) / strength, alpha.shape[-1] / strength[..., 0]


def _opinion_arrays_vjp(alpha, grad_b, grad_u) -> np.ndarray:
    strength = alpha.sum(axis=-1, keepdims=True)
    k = alpha.shape[-1]
    inner = (grad_b * (alpha - 1.0)).sum(axis=-1, keepdims=True)
    return grad_b / strength - (inner + k * grad_u[..., None]) / (strength * strength)


def _combine_pair(b1, u1, b2, u2) -> tuple[np.ndarray, np.ndarray]:
    s1 = b1.sum(axis=-1)
    s2 = b2.sum(axis=-1)
    conflict = s1 * s2 - (b1 * b2).sum(axis=-1)
    norm = 1.0 - conflict
    bad = norm <= _CONFLICT_EPS
    if np.any(bad):
        rows = np.nonzero(np.atleast_1d(bad))[0]
        raise FusionConflictError(
            f"total conflict between opinions (1 - C <= {_CONFLICT_EPS:g}) "
            f"at batch rows {rows[:8].tolist()}",
            rows=rows,
        )
    norm_col = norm[..., None]
    b = (b1 * b2 + b1 * u2[..., None] + b2 * u1[..., None]) / norm_col
    u = u1 * u2 / norm
    return b, u


def _combine_pair_vjp(b1, u1, b2, u2, b, u, grad_b, grad_u):
    """Gradients of one pair combination with respect to both inputs."""
    s1 = b1.sum(axis=-1, keepdims=True)
    s2 = b2.sum(axis=-1, keepdims=True)
    norm = (1.0 - (s1[..., 0] * s2[..., 0] - (b1 * b2).sum(axis=-1)))[..., None]
    # combined upstream mass flowing through the 1/(1-C) normalization
    through_norm = ((grad_b * b).sum(axis=-1) + grad_u * u)[..., None]
    gb1 = (grad_b * (b2 + u2[..., None]) + through_norm * (s2 - b2)) / norm
    gb2 = (grad_b * (b1 + u1[..., None]) + through_norm * (s1 - b1)) / norm
    gu1 = ((grad_b * b2).sum(axis=-1) + grad_u * u2) / norm[..., 0]
    gu2 = ((grad_b * b1).sum(axis=-1) + grad_u * u1) / norm[..., 0]
    return gb1, gu1, gb2, gu2


def _fold_opinions(beliefs: list, uncerts: list):
    """Left fold of the pair rule; returns the result and a cache for the VJP."""
    b, u = beliefs[0], uncerts[0]
    partials = [(b, u)]
    for bv, uv in zip(beliefs[1:], uncerts[1:]):
        b, u = _combine_pair(b, u, bv, uv)
        partials.append((b, u))
    return b, u, partials


def _fold_opinions_vjp(beliefs, uncerts, partials, grad_b, grad_u):
    """Distribute a gradient on the folded opinion back to every view."""
    n = len(beliefs)
    grads_b = [None] * n
    grads_u = [None] * n
    gb, gu = grad_b, grad_u
    for i in range(n - 1, 0, -1):
        left_b, left_u = partials[i - 1]
        out_b, out_u = partials[i]
        gb, gu, gbi, gui = _combine_pair_vjp(
            left_b, left_u, beliefs[i], uncerts[i], out_b, out_u, gb, gu
        )
        grads_b[i] = gbi
        grads_u[i] = gui
    grads_b[0] = gb
    grads_u[0] = gu
    return grads_b, grads_u


def _fused_alpha(b: np.ndarray, u: np.ndarray) -> np.ndarray:
    k = b.shape[-1]
    return b * (k / u)[..., None] + 1.0


def _fused_alpha_vjp(b, u, grad_alpha):
    k = b.shape[-1]
    grad_b = grad_alpha * (k / u)[..., None]
    grad_u = -(k / (u * u)) * (grad_alpha * b).sum(axis=-1)
    return grad_b, grad_u


def _fuse_alphas(alphas: list[np.ndarray]):
    """Per-view concentrations -> fused concentrations, with backward cache."""
    beliefs, uncerts = [], []
    for alpha in alphas:
        b, u = _opinion_arrays(alpha)
        beliefs.append(b)
        uncerts.append(u)
    b, u, partials = _fold_opinions(beliefs, uncerts)
    fused = _fused_alpha(b, u)
    return fused, (alphas, beliefs, uncerts, partials, b, u)


def _fuse_alphas_vjp(cache, grad_fused: np.ndarray) -> list[np.ndarray]:
    alphas, beliefs, uncerts, partials, b, u = cache
    gb, gu = _fused_alpha_vjp(b, u, grad_fused)
    grads_b, grads_u = _fold_opinions_vjp(beliefs, uncerts, partials, gb, gu)
    return [
        _opinion_arrays_vjp(alpha, gbv, guv)
        for alpha, gbv, guv in zip(alphas, grads_b, grads_u)
    ]


# -- public opinion-level API ------------------------------------------------


def ds_combine_pair(s1: SubjectiveOpinion, s2: SubjectiveOpinion) -> SubjectiveOpinion:
    """Combine two opinions over the same classes; raises on total conflict."""
    if s1.class_count != s2.class_count:
        raise ValueError("opinions must share the class count")
    b, u = _combine_pair(
        s1.beliefs, np.asarray(s1.uncertainty), s2.beliefs, np.asarray(s2.uncertainty)
    )
    return SubjectiveOpinion(b, u if u.ndim else float(u))


def ds_fold(opinions) -> SubjectiveOpinion:
    """Left fold of the pair rule over a nonempty sequence of opinions."""
    opinions = list(opinions)
    if not opinions:
        raise ValueError("need at least one opinion")
    k = opinions[0].class_count
    if any(s.class_count != k for s in opinions):
        raise ValueError("opinions must share the class count")
    b, u, _ = _fold_opinions(
        [s.beliefs for s in opinions], [np.asarray(s.uncertainty) for s in opinions]
    )
    return SubjectiveOpinion(b, u if u.ndim else float(u))


def fused_dirichlet(s: SubjectiveOpinion) -> DirichletParams:
    """Rebuild concentrations from a fused opinion via strength K / u."""
    u = np.asarray(s.uncertainty)
    if np.any(u <= 0.0):
        raise ValueError("fully certain fused opinion (u = 0) cannot be inverted")
    return DirichletParams(_fused_alpha(s.beliefs, u))


def total_loss(per_view, fused: DirichletParams, label, lam: float):
    """Multi-task objective: fused-head loss plus the sum of per-view losses."""
    out = view_loss(fused, label, lam)
    for d in per_view:
        out = out + view_loss(d, label, lam)
    return out


def total_loss_alpha_grads(view_alphas: list[np.ndarray], label, lam: float,
                           detach_fusion: bool = False):
    """Losses and d(total)/d(alpha^v) for every view, fusing internally.

    Returns (fused_term, view_terms, grads) where fused_term is the fused
    head's loss, view_terms is a list of per-view losses, and grads[v] is
    the gradient of the summed objective with respect to view v's
    concentrations. With ``detach_fusion`` the fused head still
    contributes to the loss value but not to the gradients of the
    per-view evidence.
    """
    label = np.asarray(label, dtype=np.float64)
    fused, cache = _fuse_alphas(view_alphas)
    fused_term = view_loss(DirichletParams(fused), label, lam)
    view_terms = [view_loss(DirichletParams(a), label, lam) for a in view_alphas]
    grads = [view_loss_grad(a, label, lam) for a in view_alphas]
    if not detach_fusion:
        fused_grad = view_loss_grad(fused, label, lam)
        for g, extra in zip(grads, _fuse_alphas_vjp(cache, fused_grad)):
            g += extra
    return fused_term, view_terms, grads
