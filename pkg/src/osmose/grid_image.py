"""Image and mask I/O, positivity lifting and the pixel indexing convention.

Arrays are stored row-major as ``(M, N, C)``: row ``i`` counts downward,
column ``j`` to the right.  The linear index of pixel ``(i, j)`` is
``k = i * N + j``.  Geometric quantities (angles, 2x2 tensors, stencil
offsets) live in the *image frame* whose first axis points along ``j`` and
whose second axis points along ``i`` (downward).  Angles measured in the
usual x-right / y-up frame convert with ``theta_ij = -theta_xy``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

DEFAULT_OFFSET = 1.0 / 255.0


class ImageDecodeError(ValueError):
    """Raised when a raster cannot be read or has an unsupported layout."""


@dataclass
class ImageBuffer:
    """Positive multi-channel raster.

    ``data`` has shape ``(M, N, C)`` with ``C`` in ``{1, 3}``.  ``offset`` is
    the constant added by :func:`lift_positive`; :func:`save_image` removes it.
    """

    data: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"expected (M, N, 1|3) data, got shape {data.shape}")
        if data.shape[0] < 2 or data.shape[1] < 2:
            raise ValueError("image must be at least 2x2")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def channel(self, c: int) -> np.ndarray:
        return self.data[:, :, c]


@dataclass
class MaskField:
    """Binary indicator of the shadow-boundary band (1 inside, 0 outside)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise ValueError("mask values must be exactly 0 or 1")
        self.data = data.astype(np.uint8)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def is_empty(self) -> bool:
        return not self.data.any()

    def as_bool(self) -> np.ndarray:
        return self.data.astype(bool)


def linear_index(i, j, width: int):
    """Row-major linear index of pixel ``(i, j)``."""
    return np.asarray(i) * width + np.asarray(j)


def grid_position(k, width: int):
    """Inverse of :func:`linear_index`; returns ``(i, j)``."""
    return np.divmod(np.asarray(k), width)


def _read_raster(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("1", "L", "P", "LA", "RGBA", "RGB"):
                if mode == "P":
                    im = im.convert("RGB")
                elif mode == "LA":
                    im = im.convert("L")
                elif mode == "RGBA":
                    im = im.convert("RGB")
                elif mode == "1":
                    im = im.convert("L")
                arr = np.asarray(im, dtype=float) / 255.0
            elif mode in ("I;16", "I;16B", "I;16L", "I"):
                raw = np.asarray(im)
                if raw.max(initial=0) > 65535 or raw.min(initial=0) < 0:
                    raise ImageDecodeError(f"{path}: unsupported integer range")
                arr = raw.astype(float) / 65535.0
            else:
                raise ImageDecodeError(f"{path}: unsupported image mode {mode!r}")
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise ImageDecodeError(f"{path}: cannot decode image ({exc})") from exc
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr
    if arr.ndim == 2:
        return arr[:, :, None]
    raise ImageDecodeError(f"{path}: unsupported channel layout {arr.shape}")


def load_image(path) -> ImageBuffer:
    """Read an 8/16-bit greyscale or RGB PNG, PGM or PPM scaled to [0, 1]."""
    return ImageBuffer(_read_raster(path))


def lift_positive(img: ImageBuffer, offset: float = DEFAULT_OFFSET) -> ImageBuffer:
    """Add ``offset`` to every intensity so that ``log`` of the image is finite."""
    if not offset > 0:
        raise ValueError(f"lift offset must be positive, got {offset}")
    return replace(img, data=img.data + offset, offset=img.offset + offset)


def to_uint8(img: ImageBuffer) -> np.ndarray:
    """Undo the lift, clamp to [0, 1] and quantise to 8 bits."""
    values = np.clip(img.data - img.offset, 0.0, 1.0)
    return np.rint(values * 255.0).astype(np.uint8)


def save_image(img: ImageBuffer, path) -> None:
    """Write ``img`` as an 8-bit PNG."""
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    try:
        Image.fromarray(arr).save(Path(path), format="PNG")
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def load_mask(path, threshold: float = 0.5) -> MaskField:
    """Read a mask raster; a pixel is marked iff its grey value is >= threshold.

    Colour masks are reduced to grey by averaging the channels.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    grey = _read_raster(path).mean(axis=2)
    return MaskField((grey >= threshold).astype(np.uint8))


def dilate_mask(mask: MaskField, radius: int) -> MaskField:
    """Dilate with a ``(2 * radius + 1)`` square structuring element."""
    if radius < 0:
        raise ValueError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0:
        return MaskField(mask.data.copy())
    size = 2 * radius + 1
    grown = ndimage.maximum_filter(mask.data, size=size, mode="constant", cval=0)
    return MaskField(grown)
