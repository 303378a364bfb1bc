"""Differentiable plugin contract and the analytic toy plugins.

Every plugin maps arrays to arrays and exposes ``forward(x)`` and
``vjp(x, cotangent)``. Nothing here depends on an autodiff framework; a real
image generator behind some bridge only has to honour the same two calls.

Images are H x W x 3 float arrays with pixel (i, j) centred at
(x, y) = (j + 0.5, i + 0.5).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import IllConditioned, ShapeMismatch, ValidationError

N_LANDMARKS = 68
EMBED_DIM = 512


class DiffModule:
    """Base class: subclasses set ``in_shape``/``out_shape`` and implement
    ``forward`` and ``vjp``."""

    in_shape: tuple
    out_shape: tuple

    def forward(self, x):
        raise NotImplementedError

    def vjp(self, x, cotangent):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def _check_in(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != tuple(self.in_shape):
            raise ShapeMismatch(f"{type(self).__name__} expects {self.in_shape}, got {x.shape}")
        return x


class AffineGenerator(DiffModule):
    """image = clip(A @ w + b, 0, 1), reshaped to ``image_shape``."""

    def __init__(self, A, b, image_shape, clamp=True):
        self.A = np.ascontiguousarray(A, dtype=np.float64)
        self.b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1)
        self.image_shape = tuple(int(s) for s in image_shape)
        if self.A.shape[0] != int(np.prod(self.image_shape)) or self.b.shape[0] != self.A.shape[0]:
            raise ShapeMismatch("basis rows, bias and image shape disagree")
        self.clamp = clamp
        self.in_shape = (self.A.shape[1],)
        self.out_shape = self.image_shape

    @property
    def latent_dim(self) -> int:
        return self.A.shape[1]

    def _pre(self, w):
        return self.A @ self._check_in(w) + self.b

    def forward(self, w):
        pre = self._pre(w)
        if self.clamp:
            pre = np.clip(pre, 0.0, 1.0)
        return pre.reshape(self.image_shape)

    def vjp(self, w, cotangent):
        ct = np.asarray(cotangent, dtype=np.float64).reshape(-1)
        if self.clamp:
            pre = self._pre(w)
            ct = np.where((pre > 0.0) & (pre < 1.0), ct, 0.0)
        return self.A.T @ ct


class LinearMap(DiffModule):
    """y = M @ x.ravel()."""

    def __init__(self, M, in_shape):
        self.M = np.ascontiguousarray(M, dtype=np.float64)
        self.in_shape = tuple(in_shape)
        self.out_shape = (self.M.shape[0],)

    def forward(self, x):
        return self.M @ self._check_in(x).reshape(-1)

    def vjp(self, x, cotangent):
        return (self.M.T @ np.asarray(cotangent, dtype=np.float64)).reshape(self.in_shape)


class AvgPool(DiffModule):
    """Non-overlapping k x k average pooling per channel."""

    def __init__(self, in_shape, k=4):
        h, w, c = in_shape
        if h % k or w % k:
            raise ShapeMismatch(f"image {h}x{w} not divisible by pool size {k}")
        self.k = k
        self.in_shape = tuple(in_shape)
        self.out_shape = (h // k, w // k, c)

    def forward(self, x):
        x = self._check_in(x)
        h, w, c = self.in_shape
        k = self.k
        return x.reshape(h // k, k, w // k, k, c).mean(axis=(1, 3))

    def vjp(self, x, cotangent):
        ct = np.asarray(cotangent, dtype=np.float64) / (self.k * self.k)
        return np.repeat(np.repeat(ct, self.k, axis=0), self.k, axis=1)


class SoftCentroidLandmarker(DiffModule):
    """68 heads, each the softmax-weighted mean pixel position.

    Head k scores pixel p by ``beta * <mix_k, rgb_p>`` plus a Gaussian log
    prior around ``centers[k]``; its output is the expectation of the
    pixel-centre coordinates (x, y) under the softmax of those scores.
    """

    def __init__(self, image_shape, mix, centers, beta=4.0, prior_sigma=None):
        h, w, c = image_shape
        self.in_shape = tuple(image_shape)
        self.mix = np.asarray(mix, dtype=np.float64)
        self.centers = np.asarray(centers, dtype=np.float64)
        self.out_shape = (len(self.centers), 2)
        self.beta = float(beta)
        sigma = float(prior_sigma if prior_sigma is not None else max(h, w) / 8.0)
        jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
        self.grid = np.stack([jj.ravel(), ii.ravel()], axis=1)  # P x 2, (x, y)
        d2 = ((self.grid[None, :, :] - self.centers[:, None, :]) ** 2).sum(-1)
        self.prior = -d2 / (2.0 * sigma * sigma)

    def _softmax(self, x):
        z = self.beta * (self.mix @ x.reshape(-1, self.in_shape[2]).T) + self.prior
        z -= z.max(axis=1, keepdims=True)
        s = np.exp(z)
        s /= s.sum(axis=1, keepdims=True)
        return s

    def forward(self, x):
        return self._softmax(self._check_in(x)) @ self.grid

    def vjp(self, x, cotangent):
        s = self._softmax(self._check_in(x))
        ct = np.asarray(cotangent, dtype=np.float64)
        lm = s @ self.grid
        g = s * (ct @ self.grid.T - (lm * ct).sum(axis=1, keepdims=True))
        return (self.beta * (g.T @ self.mix)).reshape(self.in_shape)


class LinearEncoder(DiffModule):
    """Latent regressor w = w_mean + B @ (x - x_mean)."""

    def __init__(self, B, x_mean, w_mean, image_shape):
        self.B = np.ascontiguousarray(B, dtype=np.float64)
        self.x_mean = np.asarray(x_mean, dtype=np.float64).reshape(-1)
        self.w_mean = np.asarray(w_mean, dtype=np.float64).reshape(-1)
        self.image_shape = tuple(image_shape)
        self.in_shape = self.image_shape
        self.out_shape = (self.B.shape[0],)

    def forward(self, image):
        x = np.asarray(image, dtype=np.float64).reshape(-1)
        return self.w_mean + self.B @ (x - self.x_mean)

    def vjp(self, image, cotangent):
        return (self.B.T @ np.asarray(cotangent, dtype=np.float64)).reshape(self.image_shape)

    def to_arrays(self) -> dict:
        return {
            "B": self.B,
            "x_mean": self.x_mean,
            "w_mean": self.w_mean,
            "image_shape": np.asarray(self.image_shape, dtype=np.float64),
        }

    @classmethod
    def from_arrays(cls, arrays) -> "LinearEncoder":
        shape = tuple(int(s) for s in arrays["image_shape"])
        return cls(arrays["B"], arrays["x_mean"], arrays["w_mean"], shape)

    def save(self, path):
        save_weights(path, self.to_arrays())

    @classmethod
    def load(cls, path) -> "LinearEncoder":
        return cls.from_arrays(load_weights(path))


@dataclass
class PluginSet:
    generator: DiffModule
    embedder: DiffModule
    perceptual: DiffModule
    landmarker: DiffModule
    encoder: object

    def __post_init__(self):
        img = tuple(self.generator.out_shape)
        for name in ("embedder", "perceptual", "landmarker"):
            mod = getattr(self, name)
            if tuple(mod.in_shape) != img:
                raise ShapeMismatch(f"{name} expects {mod.in_shape} but generator emits {img}")

    @property
    def image_shape(self) -> tuple:
        return tuple(self.generator.out_shape)

    @property
    def image_size(self) -> tuple:
        h, w = self.image_shape[:2]
        return (w, h)


# --------------------------------------------------------------------------
# constructors


def _half_plane_frequencies(count):
    """Integer frequency pairs, DC first, then by increasing radius."""
    r = 1
    while True:
        pairs = [(fx, fy) for fx in range(0, r + 1) for fy in range(-r, r + 1) if fx > 0 or fy >= 0]
        if len(pairs) >= count:
            break
        r += 1
    pairs.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, p[0], p[1]))
    return pairs[:count]


def cosine_atoms(d, img_size, seed, amplitude=0.08):
    """A (H*W*3) x d basis of smooth coloured cosine images.

    Two atoms share each frequency pair with independent phases and channel
    mixtures, so the basis is full rank. Atoms are scaled so a standard normal
    latent gives per-pixel standard deviation near ``amplitude``.
    """
    width, height = img_size
    rng = np.random.default_rng(seed)
    freqs = _half_plane_frequencies((d + 1) // 2)
    yy, xx = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width, indexing="ij")
    A = np.empty((height * width * 3, d))
    for k in range(d):
        fx, fy = freqs[k // 2]
        phase = rng.uniform(0.0, 2.0 * np.pi)
        mix = rng.normal(size=3)
        wave = np.cos(2.0 * np.pi * (fx * xx + fy * yy) + phase)
        atom = wave[:, :, None] * mix[None, None, :]
        atom /= np.sqrt(np.mean(atom * atom)) + 1e-12
        A[:, k] = atom.reshape(-1)
    return A * (amplitude / np.sqrt(d))


def toy_generator(basis_seed: int, d: int, img_size, amplitude=0.08) -> AffineGenerator:
    if d < 1:
        raise ValidationError("latent dimension must be >= 1")
    width, height = img_size
    A = cosine_atoms(d, img_size, basis_seed, amplitude)
    b = np.full(height * width * 3, 0.5)
    return AffineGenerator(A, b, (height, width, 3))


def toy_embedder(seed: int, image_shape, dim: int = EMBED_DIM) -> LinearMap:
    rng = np.random.default_rng(seed)
    p = int(np.prod(image_shape))
    return LinearMap(rng.normal(size=(dim, p)) / np.sqrt(p), image_shape)


def toy_perceptual(image_shape, k: int = 4) -> AvgPool:
    return AvgPool(image_shape, k)


def toy_landmarker(seed: int, image_shape, centers=None, beta=4.0, prior_sigma=None) -> SoftCentroidLandmarker:
    """Seeded soft-centroid landmarker.

    ``centers`` (68 x 2 pixel positions) anchor each head's spatial prior;
    without them the anchors are drawn uniformly in the central half of the
    frame.
    """
    h, w = image_shape[:2]
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(N_LANDMARKS, image_shape[2]))
    if centers is None:
        centers = rng.uniform(0.25, 0.75, size=(N_LANDMARKS, 2)) * np.array([w, h])
    return SoftCentroidLandmarker(image_shape, mix, centers, beta, prior_sigma)


def fit_encoder(generator: DiffModule, n_samples: int, seed: int, ridge: float = 1e-6) -> LinearEncoder:
    """Least-squares linear regressor from generated images back to latents.

    Latent samples are Gaussian, centred and whitened before rendering.

    Solved in the n x n sample space (dual ridge) so the cost does not grow
    with image size squared. The ridge is ``ridge * trace(K) / n`` on the
    centred Gram matrix K.
    """
    d = int(np.prod(generator.in_shape))
    if n_samples <= d:
        # centring costs one degree of freedom
        raise ValidationError(f"need n_samples > latent dim ({n_samples} <= {d})")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((n_samples, d))
    # whiten the centred latents (W^T W = n I) so that for an unclamped
    # affine generator the fit is exactly the pseudoinverse, whatever the rank
    q, _ = np.linalg.qr(W - W.mean(axis=0))
    W = q * np.sqrt(n_samples)
    X = np.stack([np.asarray(generator.forward(w), dtype=np.float64).reshape(-1) for w in W])
    x_mean = X.mean(axis=0)
    w_mean = W.mean(axis=0)
    Xc = X - x_mean
    Wc = W - w_mean
    K = Xc @ Xc.T
    lam = ridge * np.trace(K) / n_samples
    K[np.diag_indices_from(K)] += lam
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > 1e12:
        raise IllConditioned(f"normal equations condition number {cond:.3g} exceeds 1e12; increase ridge")
    alpha = np.linalg.solve(K, Wc)  # n x d
    B = alpha.T @ Xc
    return LinearEncoder(B, x_mean, w_mean, generator.out_shape)


def make_toy_plugins(seed: int = 0, d: int = 64, img_size=(64, 64), landmark_centers=None, n_encoder_samples=None, amplitude=0.08) -> PluginSet:
    gen = toy_generator(seed, d, img_size, amplitude)
    shape = gen.out_shape
    enc = fit_encoder(gen, n_encoder_samples or max(8 * d, 256), seed + 1)
    return PluginSet(
        generator=gen,
        embedder=toy_embedder(seed + 2, shape),
        perceptual=toy_perceptual(shape),
        landmarker=toy_landmarker(seed + 3, shape, landmark_centers),
        encoder=enc,
    )


# --------------------------------------------------------------------------
# gradient contract check


def vjp_check(module: DiffModule, x, n_probes=20, step=1e-4, seed=0):
    """Dot-product test of ``vjp`` against central finite differences.

    For a random unit-norm input direction u and output cotangent v, compares
    <v, (f(x + h u) - f(x - h u)) / 2h> with <vjp(x, v), u>. Returns the
    per-probe relative errors.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    errs = np.empty(n_probes)
    for i in range(n_probes):
        u = rng.standard_normal(x.shape)
        u /= np.linalg.norm(u)
        v = rng.standard_normal(module.out_shape)
        fd = np.sum(v * (module.forward(x + step * u) - module.forward(x - step * u))) / (2.0 * step)
        an = np.sum(np.asarray(module.vjp(x, v)) * u)
        errs[i] = abs(fd - an) / max(abs(fd), abs(an), 1e-12)
    return errs


# --------------------------------------------------------------------------
# weight container: b"TXCW", u32 version, u32 count, then per array
# u16 name length, utf-8 name, u32 ndim, u64 dims, little-endian f64 data

_MAGIC = b"TXCW"
_VERSION = 1


def save_weights(path, arrays: dict):
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_weights(path) -> dict:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _MAGIC:
        raise ValidationError(f"{path}: not a weight container")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != _VERSION:
        raise ValidationError(f"{path}: unsupported container version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        count_el = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=count_el, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count_el
    return out
