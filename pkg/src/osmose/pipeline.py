"""Shadow removal by osmosis: orientation estimate, weight field, per-channel evolution."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .anisotropy import build_weight_field, identity_field
from .expm import StepperConfig, evolve, write_trace_csv
from .grid_image import (DEFAULT_OFFSET, ImageBuffer, MaskField, dilate_mask, lift_positive,
                         load_image, load_mask, save_image)
from .operator import assemble, validate_generator
from .structure import estimate_directions

MODES = ("anisotropic", "isotropic")


class PipelineError(RuntimeError):
    """Failure of one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    input: str
    mask: str
    output: str
    mode: str = "anisotropic"
    tau: float = 1000.0
    T: float = 100000.0
    epsilon: float = 0.05
    sigma: float = 0.5
    scales: tuple = (5.0, 10.0, 15.0)
    seed: int = 0
    offset: float = DEFAULT_OFFSET
    threshold: float = 0.5
    dilate: int = 0
    theta_map: str | None = None
    trace: str | None = None
    validate: bool = False
    steady_tol: float = 1e-8

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.T < self.tau:
            raise ValueError(f"T must be >= tau, got T={self.T}, tau={self.tau}")
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.mode == "anisotropic" and not self.scales:
            raise ValueError("anisotropic mode needs at least one voting scale")
        if any(s <= 0 for s in self.scales):
            raise ValueError("voting scales must be positive")
        if self.dilate < 0:
            raise ValueError("dilation radius must be >= 0")

    @property
    def steps(self) -> int:
        return max(1, round(self.T / self.tau))


@dataclass
class RemovalResult:
    image: ImageBuffer
    theta: np.ndarray
    weights: np.ndarray
    traces: list = field(default_factory=list)
    reports: list = field(default_factory=list)


def remove_shadow(img: ImageBuffer, mask: MaskField, mode: str = "anisotropic",
                  tau: float = 1000.0, steps: int = 100, epsilon: float = 0.05,
                  sigma: float = 0.5, scales=(5, 10, 15), seed: int = 0,
                  steady_tol: float = 1e-8, validate: bool = False,
                  workers: int | None = None, theta: np.ndarray | None = None) -> RemovalResult:
    """Evolve every channel of the (already lifted) ``img`` with the mask's drift switched off.

    The orientation field (image frame, radians) is estimated once by tensor
    voting and shared by all channels, unless a known ``theta`` is passed.
    Errors are re-raised as :class:`PipelineError` tagged with their stage.
    """
    if mode not in MODES:
        raise PipelineError("config", f"unknown mode {mode!r}")
    if mask.shape != (img.height, img.width):
        raise PipelineError("input", f"mask shape {mask.shape} differs from image "
                                     f"{(img.height, img.width)}")
    shape = (img.height, img.width)
    try:
        if mode == "isotropic" or mask.is_empty:
            theta = np.zeros(shape)
            w = identity_field(shape)
        elif theta is not None:
            theta = np.asarray(theta, dtype=float)
            if theta.shape != shape:
                raise ValueError(f"theta shape {theta.shape} differs from image {shape}")
            w = build_weight_field(theta, epsilon, mask)
        else:
            theta = estimate_directions(img, mask, scales, sigma, seed)
            w = build_weight_field(theta, epsilon, mask)
    except (ValueError, ArithmeticError) as exc:
        raise PipelineError("orientation", str(exc)) from exc

    try:
        cfg = StepperConfig(tau=tau, max_steps=steps, steady_tol=steady_tol)
    except ValueError as exc:
        raise PipelineError("config", str(exc)) from exc

    def run_channel(c):
        v = img.channel(c)
        try:
            a = assemble(v, w, mask)
        except ValueError as exc:
            raise PipelineError("assembly", f"channel {c}: {exc}") from exc
        report = validate_generator(a) if validate else None
        try:
            u, trace = evolve(a, v.ravel(), cfg)
        except (ValueError, RuntimeError) as exc:
            raise PipelineError("evolution", f"channel {c}: {exc}") from exc
        return u.reshape(shape), trace, report

    with ThreadPoolExecutor(max_workers=workers or img.channels) as pool:
        results = list(pool.map(run_channel, range(img.channels)))

    data = np.stack([r[0] for r in results], axis=-1)
    return RemovalResult(image=ImageBuffer(data, offset=img.offset), theta=theta, weights=w,
                         traces=[r[1] for r in results],
                         reports=[r[2] for r in results if r[2] is not None])


def run_shadow_removal(cfg: PipelineConfig) -> RemovalResult:
    """Load, process and save according to ``cfg``."""
    try:
        img = load_image(cfg.input)
        mask = load_mask(cfg.mask, cfg.threshold)
    except (OSError, ValueError) as exc:
        raise PipelineError("input", str(exc)) from exc
    if mask.shape != (img.height, img.width):
        raise PipelineError("input", f"mask {mask.shape} and image "
                                     f"{(img.height, img.width)} dimensions differ")
    mask = dilate_mask(mask, cfg.dilate)
    lifted = lift_positive(img, cfg.offset)
    result = remove_shadow(lifted, mask, cfg.mode, cfg.tau, cfg.steps, cfg.epsilon,
                           cfg.sigma, cfg.scales, cfg.seed, cfg.steady_tol, cfg.validate)
    try:
        save_image(result.image, cfg.output)
        if cfg.theta_map:
            render_theta_map(result.theta, mask, img.data.mean(axis=2), cfg.theta_map)
        if cfg.trace:
            write_trace_csv(result.traces, cfg.trace)
    except OSError as exc:
        raise PipelineError("output", str(exc)) from exc
    return result


def hsv_to_rgb(h, s, v):
    """Vectorised HSV to RGB, all inputs in [0, 1]."""
    h, s, v = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (h, s, v)))
    h6 = np.mod(h, 1.0) * 6.0
    sector = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(table):
        sel = sector == k
        rgb[sel] = np.stack([r[sel], g[sel], b[sel]], axis=-1)
    return rgb


def theta_map_rgb(theta: np.ndarray, mask: MaskField, grey: np.ndarray) -> np.ndarray:
    """Orientation overlay as float RGB: hue ``(theta mod pi) / pi`` on the mask, grey elsewhere."""
    theta = np.asarray(theta, dtype=float)
    grey = np.clip(np.asarray(grey, dtype=float), 0.0, 1.0)
    if theta.shape != mask.shape or grey.shape != mask.shape:
        raise ValueError("theta, mask and grey image dimensions disagree")
    hue = np.mod(theta, np.pi) / np.pi
    colour = hsv_to_rgb(hue, 1.0, 1.0)
    return np.where(mask.as_bool()[..., None], colour, grey[..., None])


def render_theta_map(theta: np.ndarray, mask: MaskField, grey: np.ndarray, path) -> None:
    rgb = np.rint(theta_map_rgb(theta, mask, grey) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(rgb).save(Path(path), format="PNG")
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
