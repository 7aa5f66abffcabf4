"""Hermetic evaluation metrics: windowed SSIM, latent-feature Frechet distance,
palette-based mask consistency, and pixel-space diversity.

No pretrained third-party networks anywhere: the Frechet distance runs on this
package's own autoencoder features and the mask parser is a nearest-prototype
color classifier fitted on the toy training split. Reports label these
substitutions explicitly.
"""

import numpy as np
from scipy.ndimage import correlate

from .data import DatasetManifest, SemanticMask, load_pair

# BT.601 luminance weights, fixed by contract.
_LUMA = np.array([0.299, 0.587, 0.114])

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _to_gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return image @ _LUMA
    if image.ndim == 2:
        return image
    raise ValueError(f"expected HxW or HxWx3 image, got shape {image.shape}")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window on luminance.

    Local means/variances are window-weighted; the map is averaged over all
    fully-valid window positions. Dynamic range is 1 (images in [0, 1]).
    """
    ga, gb = _to_gray(a), _to_gray(b)
    if ga.shape != gb.shape:
        raise ValueError(f"image dims differ: {ga.shape} vs {gb.shape}")
    if min(ga.shape) < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW} pixels per side")
    w = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    half = _SSIM_WINDOW // 2
    crop = (slice(half, -half), slice(half, -half))

    mu_a = correlate(ga, w)[crop]
    mu_b = correlate(gb, w)[crop]
    e_aa = correlate(ga * ga, w)[crop]
    e_bb = correlate(gb * gb, w)[crop]
    e_ab = correlate(ga * gb, w)[crop]
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b

    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def toy_fid(real_features: np.ndarray, fake_features: np.ndarray, min_count: int = 32) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_r - mu_f||^2 + Tr(S_r + S_f - 2 (S_r S_f)^{1/2}), with the matrix
    square root taken through symmetric eigendecompositions (eigenvalues
    clamped at 0) and covariances regularized by 1e-6 I.
    """
    real = np.asarray(real_features, dtype=np.float64)
    fake = np.asarray(fake_features, dtype=np.float64)
    if real.ndim == 1:
        real = real[:, None]
    if fake.ndim == 1:
        fake = fake[:, None]
    if real.shape[0] < min_count or fake.shape[0] < min_count:
        raise ValueError(f"need at least {min_count} samples per side, got {real.shape[0]}/{fake.shape[0]}")
    if real.shape[1] != fake.shape[1]:
        raise ValueError("feature dimensions differ")

    mu_r, mu_f = real.mean(axis=0), fake.mean(axis=0)
    eps = 1e-6 * np.eye(real.shape[1])
    sigma_r = np.cov(real, rowvar=False) + eps
    sigma_f = np.cov(fake, rowvar=False) + eps

    sqrt_r = _sqrt_psd(sigma_r)
    inner = sqrt_r @ sigma_f @ sqrt_r
    vals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    trace_sqrt = float(np.sum(np.sqrt(vals)))
    dist = float(np.sum((mu_r - mu_f) ** 2) + np.trace(sigma_r) + np.trace(sigma_f) - 2 * trace_sqrt)
    return max(dist, 0.0)


def fit_palette(manifest: DatasetManifest, max_samples: int = 200) -> np.ndarray:
    """Per-class prototype colors: mean region color over (a subset of) a split."""
    count = min(manifest.count, max_samples)
    sums = np.zeros((manifest.num_classes, 3), dtype=np.float64)
    counts = np.zeros(manifest.num_classes, dtype=np.int64)
    for i in range(count):
        image, mask = load_pair(manifest.image_path(i), manifest.mask_path(i), manifest.num_classes)
        for cid in mask.present_classes():
            region = mask.classes == cid
            sums[cid] += image[region].sum(axis=0)
            counts[cid] += int(region.sum())
    if (counts == 0).all():
        raise RuntimeError("no labeled pixels found while fitting palette")
    palette = np.zeros_like(sums)
    seen = counts > 0
    palette[seen] = sums[seen] / counts[seen, None]
    return palette


def classify_by_palette(image: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Assign each pixel to the nearest prototype color (squared Euclidean)."""
    pixels = np.asarray(image, dtype=np.float64).reshape(-1, 3)
    d2 = ((pixels[:, None, :] - palette[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1).reshape(image.shape[:2])


def palette_miou(image: np.ndarray, mask: SemanticMask, palette: np.ndarray):
    """(mean IoU over classes present in mask, overall pixel accuracy)."""
    if palette is None or len(palette) == 0:
        raise RuntimeError("palette is empty; fit it from a training split first")
    pred = classify_by_palette(image, palette)
    truth = mask.classes
    ious = []
    for cid in mask.present_classes():
        inter = int(((pred == cid) & (truth == cid)).sum())
        union = int(((pred == cid) | (truth == cid)).sum())
        ious.append(inter / union if union else 0.0)
    accuracy = float((pred == truth).mean())
    return float(np.mean(ious)), accuracy


def diversity(images) -> float:
    """Mean over unordered pairs of the mean absolute pixel difference."""
    if len(images) < 2:
        raise ValueError("diversity needs at least 2 images")
    arrs = [np.asarray(im, dtype=np.float64) for im in images]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValueError("all images must share one shape")
    total, pairs = 0.0, 0
    for i in range(len(arrs)):
        for j in range(i + 1, len(arrs)):
            total += float(np.mean(np.abs(arrs[i] - arrs[j])))
            pairs += 1
    return total / pairs


def region_mean_color(image: np.ndarray, mask: SemanticMask, cid: int) -> np.ndarray:
    region = mask.classes == cid
    if not region.any():
        raise ValueError(f"class {cid} not present in mask")
    return np.asarray(image, dtype=np.float64)[region].mean(axis=0)


def delta_rgb(a, b) -> float:
    """Max per-channel absolute difference between two mean colors."""
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
