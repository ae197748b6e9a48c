"""GUI/overworld scene detection by template matching on UI corner widgets."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .mouse import GUI, OVERWORLD

DEFAULT_THRESHOLD = 0.8
TEMPLATE_SIZE = 48


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class UITemplate:
    name: str
    patch: np.ndarray  # (h, w) float grayscale, 0..255
    x: int
    y: int
    search: int = 6


def close_button_patch(size: int = TEMPLATE_SIZE) -> np.ndarray:
    """A ringed cross, the shape of the close button in the top-right corner of menus."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    c = (size - 1) / 2
    r = np.hypot(xx - c, yy - c)
    patch = np.full((size, size), 40.0)
    patch[(r > size * 0.36) & (r < size * 0.46)] = 230.0
    d1 = np.abs(xx - yy) < size * 0.07
    d2 = np.abs(xx + yy - (size - 1)) < size * 0.07
    patch[(d1 | d2) & (r < size * 0.3)] = 230.0
    return patch


def default_templates(width: int = 1280, height: int = 720) -> list[UITemplate]:
    return [UITemplate("close-button", close_button_patch(), width - TEMPLATE_SIZE - 24, 24)]


def to_gray(frame: Union[np.ndarray, bytes]) -> np.ndarray:
    if isinstance(frame, (bytes, bytearray)):
        try:
            with Image.open(io.BytesIO(frame)) as im:
                frame = np.asarray(im.convert("RGB"))
        except (OSError, ValueError) as exc:
            raise DecodeError(f"cannot decode frame: {exc}") from exc
    arr = np.asarray(frame, dtype=float)
    if arr.ndim == 3:
        arr = arr[..., :3] @ np.array([0.299, 0.587, 0.114])
    if arr.ndim != 2:
        raise DecodeError(f"unsupported frame shape {arr.shape}")
    return arr


def match_score(gray: np.ndarray, template: UITemplate) -> float:
    """Best zero-mean normalized cross-correlation near the template's anchor."""
    h, w = template.patch.shape
    s = template.search
    y0, x0 = max(template.y - s, 0), max(template.x - s, 0)
    y1 = min(template.y + s + h, gray.shape[0])
    x1 = min(template.x + s + w, gray.shape[1])
    region = gray[y0:y1, x0:x1]
    if region.shape[0] < h or region.shape[1] < w:
        return 0.0
    t = template.patch - template.patch.mean()
    t_norm = np.sqrt((t * t).sum())
    windows = sliding_window_view(region, (h, w))
    means = windows.mean(axis=(2, 3), keepdims=True)
    centered = windows - means
    num = np.einsum("ijkl,kl->ij", centered, t)
    den = np.sqrt((centered * centered).sum(axis=(2, 3))) * t_norm
    with np.errstate(invalid="ignore", divide="ignore"):
        ncc = np.where(den > 0, num / den, 0.0)
    return float(ncc.max())


def classify_scene(frame: Union[np.ndarray, bytes],
                   templates: Optional[Sequence[UITemplate]] = None,
                   threshold: float = DEFAULT_THRESHOLD) -> str:
    gray = to_gray(frame)
    templates = default_templates(gray.shape[1], gray.shape[0]) if templates is None else templates
    for template in templates:
        if match_score(gray, template) >= threshold:
            return GUI
    return OVERWORLD


def stamp_template(image: np.ndarray, template: UITemplate, opacity: float = 1.0) -> np.ndarray:
    """Alpha-blend the template (as gray RGB) onto ``image`` at its anchor."""
    out = np.array(image, dtype=float, copy=True)
    h, w = template.patch.shape
    region = out[template.y:template.y + h, template.x:template.x + w]
    patch = template.patch[..., None] if out.ndim == 3 else template.patch
    region[...] = opacity * patch + (1.0 - opacity) * region
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
