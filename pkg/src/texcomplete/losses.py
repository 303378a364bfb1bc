"""Projection energy terms, their weighted total, and image metrics.

Each term returns ``(value, grad)`` where ``grad`` is the derivative with
respect to the generated-side argument.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ShapeMismatch, ValidationError, ZeroEmbedding

TERMS = ("photometric", "identity", "perceptual", "landmark")


@dataclass(frozen=True)
class LossWeights:
    # keeps the four gradient norms within ~2x of each other at encoder
    # initialization with the toy plugins
    lambda_p: float = 1.0
    lambda_id: float = 0.1
    lambda_per: float = 0.002
    lambda_lan: float = 0.005

    def __post_init__(self):
        vals = self.as_tuple()
        # all-zero is allowed here (a no-op projection); run configs reject it
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValidationError("loss weights must be finite and non-negative")

    def as_tuple(self):
        return (self.lambda_p, self.lambda_id, self.lambda_per, self.lambda_lan)

    def as_dict(self):
        return dict(zip(TERMS, self.as_tuple()))


@dataclass
class LossReport:
    total: float
    per_term: dict
    grad_latent: np.ndarray = field(repr=False)


def log_cosh(x):
    """log(cosh(x)) without overflow: |x| + log1p(exp(-2|x|)) - log 2.

    Below |x| = 1 that form cancels; log1p(2 sinh^2(x/2)) is used there.
    """
    a = np.abs(np.asarray(x, dtype=np.float64))
    small = np.minimum(a, 1.0)
    near = np.log1p(2.0 * np.sinh(0.5 * small) ** 2)
    far = a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
    return np.where(a < 1.0, near, far)


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")


def photometric(target, gen, mask):
    """Mean log-cosh of the masked residual over every image entry."""
    target = np.asarray(target, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    _same_shape(target, gen, "photometric")
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), target.shape)
    r = m * (target - gen)
    n = target.size
    return float(log_cosh(r).sum() / n), -m * np.tanh(r) / n


def identity(feat_input, feat_gen):
    """Cosine distance 1 - cos(a, b), in [0, 2]."""
    a = np.asarray(feat_input, dtype=np.float64).reshape(-1)
    b = np.asarray(feat_gen, dtype=np.float64).reshape(-1)
    _same_shape(a, b, "identity")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ZeroEmbedding("identity features have zero norm")
    cos = float(a @ b) / (na * nb)
    grad = -(a / (na * nb) - cos * b / (nb * nb))
    return float(1.0 - cos), grad


def pool_mask(mask, feat_shape):
    """Area-average an H x W (x 1|C) mask down to the feature grid."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3:
        m = m.mean(axis=2)
    fh, fw = feat_shape[:2]
    h, w = m.shape
    if h % fh or w % fw:
        raise ShapeMismatch(f"mask {m.shape} cannot be pooled to {feat_shape[:2]}")
    pooled = m.reshape(fh, h // fh, fw, w // fw).mean(axis=(1, 3))
    return pooled[:, :, None] if len(feat_shape) == 3 else pooled


def perceptual(feat_target, feat_gen, mask_pooled):
    """Summed log-cosh of the masked feature residual (no normalizer)."""
    ft = np.asarray(feat_target, dtype=np.float64)
    fg = np.asarray(feat_gen, dtype=np.float64)
    _same_shape(ft, fg, "perceptual")
    m = np.broadcast_to(np.asarray(mask_pooled, dtype=np.float64), ft.shape)
    r = m * (ft - fg)
    return float(log_cosh(r).sum()), -m * np.tanh(r)


def landmark(lm_gen, lm_target):
    """Mean Euclidean distance between corresponding landmarks."""
    g = np.asarray(lm_gen, dtype=np.float64)
    t = np.asarray(lm_target, dtype=np.float64)
    _same_shape(g, t, "landmark")
    diff = g - t
    dist = np.linalg.norm(diff, axis=1)
    n = len(g)
    unit = np.zeros_like(diff)
    nz = dist > 0.0
    unit[nz] = diff[nz] / dist[nz, None]
    return float(dist.sum() / n), unit / n


def total_loss(W, target, mask, lm_target, input_feat, plugins, weights: LossWeights, target_feat=None) -> LossReport:
    """Weighted energy of latent ``W`` and its gradient through the plugins.

    ``input_feat`` is the embedding of the original input photo, not of the
    current render. ``target_feat`` caches ``plugins.perceptual(target)``.
    """
    gen = plugins.generator.forward(W)
    if gen.shape != np.shape(target):
        raise ShapeMismatch(f"generator emits {gen.shape}, target is {np.shape(target)}")
    lp, lid, lper, llan = weights.as_tuple()
    grad_img = np.zeros_like(gen)

    vp, gp = photometric(target, gen, mask)
    grad_img += lp * gp

    feat = plugins.embedder.forward(gen)
    vid, gid = identity(input_feat, feat)
    if lid:
        grad_img += lid * plugins.embedder.vjp(gen, gid)

    ft = plugins.perceptual.forward(target) if target_feat is None else target_feat
    fg = plugins.perceptual.forward(gen)
    vper, gper = perceptual(ft, fg, pool_mask(mask, fg.shape))
    if lper:
        grad_img += lper * plugins.perceptual.vjp(gen, gper)

    if lm_target is not None:
        vlan, glan = landmark(plugins.landmarker.forward(gen), lm_target)
        if llan:
            grad_img += llan * plugins.landmarker.vjp(gen, glan)
    else:
        vlan = 0.0

    per_term = dict(zip(TERMS, (vp, vid, vper, vlan)))
    total = lp * vp + lid * vid + lper * vper + llan * vlan
    grad = plugins.generator.vjp(W, grad_img)
    return LossReport(float(total), per_term, np.asarray(grad, dtype=np.float64))


# --------------------------------------------------------------------------
# metrics

PSNR_CAP = 99.0


def psnr(a, b, peak=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b, "psnr")
    if peak <= 0:
        raise ValidationError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def ssim(a, b, peak=1.0, sigma=1.5, radius=5):
    """Gaussian-window SSIM (11 x 11, sigma 1.5), averaged over channels.

    Borders use reflected padding.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b, "ssim")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    trunc = radius / sigma

    def blur(x):
        return gaussian_filter(x, sigma=sigma, truncate=trunc, mode="reflect")

    vals = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mx, my = blur(x), blur(y)
        sxx = blur(x * x) - mx * mx
        syy = blur(y * y) - my * my
        sxy = blur(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))
