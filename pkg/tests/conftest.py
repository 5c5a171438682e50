import numpy as np
import pytest
from scipy import ndimage

from osmose.anisotropy import build_weight_field
from osmose.grid_image import MaskField
from osmose.operator import assemble

STRIPE_ANGLE_DEG = 65.0
SHADOW_FACTOR = 0.4


def stripe_scene(n=128, angle_deg=STRIPE_ANGLE_DEG, period=12.0, factor=SHADOW_FACTOR,
                 radius=36.0):
    """Sinusoidal stripes with a disk-shaped multiplicative shadow.

    Returns ``(truth, shadowed, band)``: the shadow-free image, the shadowed
    image and a 7 px wide boolean band straddling the shadow boundary.  The
    stripe tangent makes ``angle_deg`` with the x axis (x right, y up).
    """
    i, j = np.mgrid[0:n, 0:n].astype(float)
    a = np.deg2rad(angle_deg)
    s = -j * np.sin(a) - i * np.cos(a)
    truth = 0.5 + 0.35 * np.sin(2 * np.pi * s / period)
    c = (n - 1) / 2
    shadow = (i - c) ** 2 + (j - c) ** 2 < radius**2
    band = ndimage.binary_dilation(shadow, iterations=4) & ~ndimage.binary_erosion(shadow, iterations=3)
    return truth, np.where(shadow, factor * truth, truth), band


def angular_error_deg(theta, reference):
    """Unsigned angle between orientations, modulo pi, in degrees."""
    d = np.mod(np.asarray(theta) - reference + np.pi / 2, np.pi) - np.pi / 2
    return np.rad2deg(np.abs(d))


def smooth_random_field(rng, shape, sigma=3.0):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.min()) / (np.ptp(f) + 1e-300)


def random_weight_field(rng, shape, kappa_max=10.0):
    """Smooth random SPD field with anisotropy ratio at most ``kappa_max``."""
    theta = 2 * np.pi * smooth_random_field(rng, shape)
    eps = 1.0 / kappa_max**2 + (1 - 1.0 / kappa_max**2) * smooth_random_field(rng, shape)
    c, s = np.cos(theta), np.sin(theta)
    w = np.empty(shape + (3,))
    w[..., 0] = c * c + eps * s * s
    w[..., 1] = (1 - eps) * c * s
    w[..., 2] = s * s + eps * c * c
    return w


def random_generator(rng, m, n, eps=None, mask_fraction=0.3):
    """Assembled operator from random positive guidance, orientations and mask."""
    v = rng.uniform(0.05, 1.0, (m, n))
    mask = MaskField((rng.random((m, n)) < mask_fraction).astype(np.uint8))
    if eps is None:
        eps = float(rng.choice([1.0, 0.5, 0.05]))
    w = build_weight_field(rng.uniform(0, 2 * np.pi, (m, n)), eps, mask)
    return assemble(v, w, mask), v, w, mask


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
