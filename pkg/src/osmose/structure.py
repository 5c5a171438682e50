"""Local orientation estimation: structure tensors and stick tensor voting.

Tensor fields are arrays of shape ``(M, N, 3)`` holding ``(a11, a12, a22)``
of a symmetric 2x2 matrix per pixel.  Inside this module all geometry uses
the x-right / y-up frame (``x = j``, ``y = -i``); :func:`estimate_directions`
converts its result to the image frame at the very end.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage, signal

from .grid_image import ImageBuffer, MaskField

# vote decay below this value is truncated
VOTE_CUTOFF = 1e-6
N_ORIENTATION_BINS = 32


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at +-ceil(4 sigma), normalised to unit mass."""
    radius = int(math.ceil(4.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (k / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_convolve(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with half-sample reflective boundaries."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    field = np.asarray(field, dtype=float)
    if sigma == 0:
        return field.copy()
    kernel = gaussian_kernel(sigma)
    out = ndimage.correlate1d(field, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(out, kernel, axis=1, mode="reflect")


def _eig_sym(a11, a12, a22):
    """Closed-form eigen-system of symmetric 2x2 matrices (broadcasting).

    Returns ``(lam1, lam2, angle)`` with ``lam1 >= lam2`` and ``angle`` the
    direction of the leading eigenvector in ``[0, pi)``.  Near-isotropic
    tensors get angle 0, i.e. ``e1 = (1, 0)``.
    """
    a11, a12, a22 = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a11, a12, a22)))
    half_tr = 0.5 * (a11 + a22)
    half_diff = 0.5 * (a11 - a22)
    rad = np.hypot(half_diff, a12)
    lam1 = half_tr + rad
    lam2 = half_tr - rad
    angle = 0.5 * np.arctan2(a12, half_diff)
    isotropic = (lam1 - lam2) < 1e-12 * (np.abs(lam1) + np.abs(lam2) + 1e-300)
    angle = np.where(isotropic, 0.0, np.mod(angle, np.pi))
    # pi itself can come back from mod after rounding
    angle = np.where(angle >= np.pi, 0.0, angle)
    return lam1, lam2, angle


def eigen_decompose_2x2(t):
    """Eigen-decomposition of one symmetric 2x2 matrix.

    Returns ``(lam1, lam2, e1, e2)`` with ``lam1 >= lam2`` and ``e2`` equal to
    ``e1`` rotated by +90 degrees.  Isotropic input yields ``e1 = (1, 0)``.
    """
    t = np.asarray(t, dtype=float)
    lam1, lam2, angle = _eig_sym(t[0, 0], 0.5 * (t[0, 1] + t[1, 0]), t[1, 1])
    angle = float(angle)
    c, s = math.cos(angle), math.sin(angle)
    if angle == 0.0:
        c, s = 1.0, 0.0
    return float(lam1), float(lam2), np.array([c, s]), np.array([-s, c])


def tensor_eigen_field(tensor: np.ndarray):
    """Vectorised :func:`eigen_decompose_2x2` over an ``(M, N, 3)`` field."""
    return _eig_sym(tensor[..., 0], tensor[..., 1], tensor[..., 2])


def gradient_xy(u: np.ndarray):
    """Central-difference gradient (one-sided at borders) in the x/y-up frame."""
    gi, gj = np.gradient(np.asarray(u, dtype=float))
    return gj, -gi


def structure_tensor(channel: np.ndarray, sigma: float, rho: float) -> np.ndarray:
    """``K_rho * (grad u_sigma outer grad u_sigma)`` as an ``(M, N, 3)`` field."""
    if sigma < 0 or rho < 0:
        raise ValueError("sigma and rho must be >= 0")
    gx, gy = gradient_xy(gaussian_convolve(channel, sigma))
    comps = (gx * gx, gx * gy, gy * gy)
    return np.stack([gaussian_convolve(c, rho) for c in comps], axis=-1)


def encode(channel: np.ndarray, sigma: float):
    """Pointwise tensor encoding of a channel.

    The pointwise tensor ``grad u_sigma outer grad u_sigma`` is rank one, so
    its saliency is ``|grad u_sigma|^2``, its ballness is zero and its second
    eigenvector is the tangent ``(-g_y, g_x) / |g|``.  Returns
    ``(saliency, ballness, orientation)`` with orientation in ``[0, 2 pi)``.
    Flat pixels get the isotropic fallback tangent ``(0, 1)``.
    """
    gx, gy = gradient_xy(gaussian_convolve(channel, sigma))
    saliency = gx * gx + gy * gy
    ballness = np.zeros_like(saliency)
    orientation = np.mod(np.arctan2(gx, -gy), 2.0 * np.pi)
    orientation = np.where(saliency > 0, orientation, 0.5 * np.pi)
    orientation = np.where(orientation >= 2.0 * np.pi, 0.0, orientation)
    return saliency, ballness, orientation


def vote_radius(scale: float) -> int:
    """Window half-width beyond which the straight-line decay is below the cutoff."""
    return int(math.ceil(scale * math.sqrt(-math.log(VOTE_CUTOFF))))


def curvature_weight(scale: float) -> float:
    return max(0.0, -16.0 * math.log(0.1) * (scale - 1.0) / math.pi**2)


def stick_vote_kernel(alpha: float, scale: float, radius: int | None = None) -> np.ndarray:
    """Votes cast by a unit-saliency voter with tangent angle ``alpha``.

    Returns a ``(2R+1, 2R+1, 3)`` array indexed by the receiver offset
    ``(di, dj)`` relative to the voter at the centre.
    """
    if radius is None:
        radius = vote_radius(scale)
    di, dj = np.mgrid[-radius:radius + 1, -radius:radius + 1].astype(float)
    dx, dy = dj, -di
    ca, sa = math.cos(alpha), math.sin(alpha)
    lx = dx * ca + dy * sa
    ly = -dx * sa + dy * ca
    dist = np.hypot(lx, ly)
    beta = np.arctan2(ly, lx)
    phi = np.abs(beta)
    phi = np.minimum(phi, np.pi - phi)

    with np.errstate(divide="ignore", invalid="ignore"):
        sin_phi = np.sin(phi)
        arc = np.where(phi > 0, dist * phi / np.where(sin_phi > 0, sin_phi, 1.0), dist)
        curv = np.where(dist > 0, 2.0 * sin_phi / np.where(dist > 0, dist, 1.0), 0.0)
    decay = np.exp(-(arc**2 + curvature_weight(scale) * curv**2) / scale**2)
    # the small slack keeps lattice points exactly on the aperture edge inside,
    # independent of rounding in the rotation
    decay = np.where((phi <= np.pi / 4 + 1e-9) & (decay >= VOTE_CUTOFF), decay, 0.0)

    gamma = alpha + 2.0 * beta
    cg, sg = np.cos(gamma), np.sin(gamma)
    kernel = np.stack([decay * cg * cg, decay * cg * sg, decay * sg * sg], axis=-1)
    kernel[radius, radius] = [ca * ca, ca * sa, sa * sa]
    return kernel


def orientation_bins(orientation: np.ndarray, n_bins: int = N_ORIENTATION_BINS):
    """Split each orientation between its two nearest bin centres ``b * pi / n_bins``.

    Returns ``(lower, upper, frac)``: the lower bin gets weight ``1 - frac``,
    the upper bin weight ``frac``.
    """
    pos = np.mod(np.asarray(orientation, dtype=float), np.pi) / (np.pi / n_bins)
    base = np.floor(pos)
    frac = pos - base
    lower = base.astype(int) % n_bins
    return lower, (lower + 1) % n_bins, frac


def stick_vote(saliency: np.ndarray, orientation: np.ndarray, scale: float,
               n_bins: int = N_ORIENTATION_BINS) -> np.ndarray:
    """Accumulate stick votes from every salient pixel.

    Votes are linear in the voter saliency, so each voter is shared between
    the two orientation bins around its tangent and every bin is convolved
    with one precomputed vote kernel.
    """
    if not scale > 0:
        raise ValueError(f"vote scale must be positive, got {scale}")
    saliency = np.asarray(saliency, dtype=float)
    out = np.zeros(saliency.shape + (3,))
    if not np.any(saliency > 0):
        return out
    lower, upper, frac = orientation_bins(orientation, n_bins)
    weights = np.zeros((n_bins,) + saliency.shape)
    rows, cols = np.indices(saliency.shape)
    np.add.at(weights, (lower, rows, cols), saliency * (1.0 - frac))
    np.add.at(weights, (upper, rows, cols), saliency * frac)
    radius = vote_radius(scale)
    for b in range(n_bins):
        source = weights[b]
        if not np.any(source > 0):
            continue
        kernel = stick_vote_kernel(b * np.pi / n_bins, scale, radius)
        for c in range(3):
            out[..., c] += signal.fftconvolve(source, kernel[..., c], mode="same")
    return out


def voting_field(img: ImageBuffer, mask: MaskField, scales, sigma: float,
                 seed: int = 0, n_bins: int = N_ORIENTATION_BINS) -> np.ndarray:
    """Multi-scale, multi-channel vote accumulator with the mask treated as bias.

    On the shadow-boundary band the encoded saliency is zeroed and the
    orientation replaced by seeded uniform noise, so false shadow edges cast
    no votes.
    """
    scales = list(scales)
    if not scales:
        raise ValueError("at least one voting scale is required")
    if mask.shape != (img.height, img.width):
        raise ValueError(f"mask shape {mask.shape} differs from image {(img.height, img.width)}")
    rng = np.random.default_rng(seed)
    band = mask.as_bool()
    acc = np.zeros((img.height, img.width, 3))
    for c in range(img.channels):
        saliency, _, orientation = encode(img.channel(c), sigma)
        saliency = np.where(band, 0.0, saliency)
        noise = rng.uniform(0.0, 2.0 * np.pi, size=saliency.shape)
        orientation = np.where(band, noise, orientation)
        for s in scales:
            # the vote tensor equals eigen_to_tensor of its own eigen-system
            acc += stick_vote(saliency, orientation, s, n_bins)
    return acc


def estimate_directions(img: ImageBuffer, mask: MaskField, scales=(5, 10, 15),
                        sigma: float = 0.5, seed: int = 0,
                        n_bins: int = N_ORIENTATION_BINS) -> np.ndarray:
    """Per-pixel structure direction in the image frame, values in ``[0, 2 pi)``.

    The structure direction is the leading axis of the vote accumulator,
    since stick votes carry tangents.
    """
    acc = voting_field(img, mask, scales, sigma, seed, n_bins)
    _, _, theta_xy = tensor_eigen_field(acc)
    return xy_to_ij(theta_xy)


def xy_to_ij(theta_xy: np.ndarray) -> np.ndarray:
    """Convert angles from the y-up frame to the image (row-down) frame."""
    out = np.mod(-np.asarray(theta_xy, dtype=float), 2.0 * np.pi)
    return np.where(out >= 2.0 * np.pi, 0.0, out)
