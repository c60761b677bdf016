"""Motion models: constant-velocity prediction and camera-motion compensation.

Warp convention
---------------
A :class:`Warp` returned by :func:`ecc_align` maps coordinates of ``image``
back onto coordinates of ``template``::

    p_template = R(theta) @ (p_image - center) + center + (tx, ty)

So if ``image`` is ``template`` with its content shifted by ``(+3, +2)`` px,
the recovered warp is the translation ``(-3, -2)``.  Moving a box from the
template frame into the image frame therefore uses ``warp.inverse()``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from .core import BoundingBox

__all__ = [
    "Warp",
    "GrayImage",
    "EccResult",
    "DegenerateTemplateError",
    "cva_predict",
    "ecc_align",
    "ecc_register",
    "ecc_rho",
    "cmc_apply",
]

TRANSLATION = "translation"
EUCLIDEAN = "euclidean"


class DegenerateTemplateError(ValueError):
    pass


@dataclass(frozen=True)
class Warp:
    kind: str = TRANSLATION
    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.kind not in (TRANSLATION, EUCLIDEAN):
            raise ValueError(f"unknown warp kind {self.kind!r}")
        if not all(math.isfinite(v) for v in (self.tx, self.ty, self.theta)):
            raise ValueError("warp parameters must be finite")
        if self.kind == TRANSLATION and self.theta != 0.0:
            raise ValueError("a translation warp cannot carry a rotation")

    @classmethod
    def identity(cls, kind: str = TRANSLATION, center: tuple[float, float] = (0.0, 0.0)) -> "Warp":
        return cls(kind, 0.0, 0.0, 0.0, center)

    @property
    def is_identity(self) -> bool:
        return self.tx == 0.0 and self.ty == 0.0 and self.theta == 0.0

    def apply(self, x, y):
        """Map point(s) ``(x, y)`` through the warp."""
        cx, cy = self.center
        if self.theta == 0.0:
            return x + self.tx, y + self.ty
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = x - cx, y - cy
        return c * dx - s * dy + cx + self.tx, s * dx + c * dy + cy + self.ty

    def inverse(self) -> "Warp":
        if self.theta == 0.0:
            return Warp(self.kind, -self.tx, -self.ty, 0.0, self.center)
        c, s = math.cos(self.theta), math.sin(self.theta)
        # R(-theta) @ t
        itx = -(c * self.tx + s * self.ty)
        ity = -(-s * self.tx + c * self.ty)
        return Warp(self.kind, itx, ity, -self.theta, self.center)

    def scaled(self, factor: float) -> "Warp":
        """Same warp expressed in a pixel grid ``factor`` times finer."""
        cx, cy = self.center
        return Warp(self.kind, self.tx * factor, self.ty * factor, self.theta, (cx * factor, cy * factor))


@dataclass(frozen=True)
class GrayImage:
    """Grayscale image, intensities in [0, 1].

    ``scale`` is the number of full-resolution image pixels covered by one
    pixel of this image; warps estimated on it are multiplied by ``scale``
    before being applied to boxes.
    """

    width: int
    height: int
    pixels: np.ndarray = field(repr=False)
    scale: float = 1.0

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=float)
        if px.size != self.width * self.height:
            raise ValueError("pixel count does not match width x height")
        px = px.reshape(self.height, self.width)
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, arr: np.ndarray, scale: float = 1.0) -> "GrayImage":
        arr = np.asarray(arr, dtype=float)
        return cls(arr.shape[1], arr.shape[0], arr, scale)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)


def cva_predict(history: Sequence[BoundingBox]) -> BoundingBox:
    if not history:
        raise ValueError("cva_predict needs at least one box")
    last = history[-1]
    if len(history) == 1:
        return last
    prev = history[-2]
    (lx, ly), (px, py) = last.center, prev.center
    return last.translated(lx - px, ly - py)


def cmc_apply(warp: Warp, box: BoundingBox) -> BoundingBox:
    cx, cy = box.center
    nx, ny = warp.apply(cx, cy)
    return BoundingBox.from_center(nx, ny, box.w, box.h)


@dataclass(frozen=True)
class EccResult:
    warp: Warp
    rho: float
    rho_identity: float
    iterations: int
    converged: bool


def _check_pair(template: GrayImage, image: GrayImage) -> None:
    if (template.width, template.height) != (image.width, image.height):
        raise ValueError("template and image must have the same dimensions")
    if template.width < 16 or template.height < 16:
        raise ValueError("images must be at least 16x16")


def _forward_coords(params: np.ndarray, kind: str, xs: np.ndarray, ys: np.ndarray, center):
    # template -> image mapping being optimised (inverse of the returned warp)
    if kind == TRANSLATION:
        return xs + params[0], ys + params[1]
    c, s = math.cos(params[2]), math.sin(params[2])
    dx, dy = xs - center[0], ys - center[1]
    return c * dx - s * dy + center[0] + params[0], s * dx + c * dy + center[1] + params[1]


def _zero_mean_rho(t: np.ndarray, i: np.ndarray) -> float:
    tz = t - t.mean()
    iz = i - i.mean()
    den = math.sqrt(float(tz @ tz) * float(iz @ iz))
    return float(tz @ iz) / den if den > 0 else 0.0


def _sample(img: np.ndarray, wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
    return map_coordinates(img, [wy, wx], order=1, mode="nearest")


def _rho_at(template: GrayImage, image: GrayImage, kind: str, params: np.ndarray) -> float:
    h, w = template.height, template.width
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    wx, wy = _forward_coords(params, kind, xs, ys, template.center)
    mask = (wx >= 0) & (wx <= w - 1) & (wy >= 0) & (wy <= h - 1)
    if mask.sum() < 3:
        return 0.0
    warped = _sample(image.pixels, wx[mask], wy[mask])
    return _zero_mean_rho(template.pixels[mask], warped)


def _params_to_returned_warp(params: np.ndarray, kind: str, center) -> Warp:
    theta = float(params[2]) if kind == EUCLIDEAN else 0.0
    fwd = Warp(kind, float(params[0]), float(params[1]), theta, center)
    return fwd.inverse()


def ecc_rho(template: GrayImage, image: GrayImage, warp: Warp) -> float:
    """Correlation coefficient between ``template`` and ``image`` aligned by ``warp``."""
    _check_pair(template, image)
    fwd = warp.inverse()
    params = np.array([fwd.tx, fwd.ty, fwd.theta])
    return _rho_at(template, image, warp.kind, params)


def ecc_register(
    template: GrayImage,
    image: GrayImage,
    kind: str = TRANSLATION,
    max_iter: int = 50,
    tol: float = 1e-5,
) -> EccResult:
    """Estimate the warp aligning ``image`` to ``template`` by ECC maximisation.

    Forward-additive Gauss-Newton iterations with bilinear sampling; samples
    falling outside ``image`` are excluded from the correlation.
    """
    _check_pair(template, image)
    if kind not in (TRANSLATION, EUCLIDEAN):
        raise ValueError(f"unsupported warp kind {kind!r}")
    tpl = template.pixels
    if float(np.var(tpl)) <= 1e-12:
        raise DegenerateTemplateError("degenerate template")

    h, w = template.height, template.width
    center = template.center
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    xs, ys = xs.ravel(), ys.ravel()
    tflat = tpl.ravel()
    img = image.pixels
    gy_img, gx_img = np.gradient(img)

    n_par = 2 if kind == TRANSLATION else 3
    params = np.zeros(3)
    best_params = params.copy()
    best_rho = -np.inf
    rho_identity = None
    prev_rho = None
    drops = 0
    converged = False
    it = 0

    for it in range(1, max_iter + 1):
        wx, wy = _forward_coords(params, kind, xs, ys, center)
        mask = (wx >= 0) & (wx <= w - 1) & (wy >= 0) & (wy <= h - 1)
        if mask.sum() <= n_par + 1:
            break
        wx, wy = wx[mask], wy[mask]
        iw = _sample(img, wx, wy)
        gx = _sample(gx_img, wx, wy)
        gy = _sample(gy_img, wx, wy)
        tz = tflat[mask] - tflat[mask].mean()
        iz = iw - iw.mean()
        tnorm2 = float(tz @ tz)
        inorm2 = float(iz @ iz)
        corr = float(tz @ iz)
        rho = corr / math.sqrt(tnorm2 * inorm2) if tnorm2 > 0 and inorm2 > 0 else 0.0
        if rho_identity is None:
            rho_identity = rho

        if rho > best_rho:
            best_rho, best_params = rho, params.copy()
        if prev_rho is not None:
            if rho < prev_rho:
                drops += 1
                if drops >= 2:
                    break
            else:
                drops = 0
            if abs(rho - prev_rho) < tol:
                converged = True
                break
        prev_rho = rho

        if kind == TRANSLATION:
            jac = np.stack([gx, gy], axis=1)
        else:
            c, s = math.cos(params[2]), math.sin(params[2])
            dx, dy = xs[mask] - center[0], ys[mask] - center[1]
            dwx = -s * dx - c * dy
            dwy = c * dx - s * dy
            jac = np.stack([gx, gy, gx * dwx + gy * dwy], axis=1)
        hess = jac.T @ jac
        try:
            hinv = np.linalg.inv(hess)
        except np.linalg.LinAlgError:
            break
        iproj = jac.T @ iz
        tproj = jac.T @ tz
        lam_n = inorm2 - float(iproj @ hinv @ iproj)
        lam_d = corr - float(tproj @ hinv @ iproj)
        if lam_d <= 0:
            break
        lam = lam_n / lam_d
        err = lam * tz - iz
        delta = hinv @ (jac.T @ err)
        params[:n_par] += delta

    return EccResult(
        warp=_params_to_returned_warp(best_params, kind, center),
        rho=float(best_rho),
        rho_identity=float(rho_identity if rho_identity is not None else best_rho),
        iterations=it,
        converged=converged,
    )


def ecc_align(
    template: GrayImage,
    image: GrayImage,
    kind: str = TRANSLATION,
    max_iter: int = 50,
    tol: float = 1e-5,
) -> Warp:
    return ecc_register(template, image, kind, max_iter, tol).warp
