"""Tip-angle measurement from binarized images of the rod.

Pixel coordinates are ``(u, v)`` with ``u`` the column and ``v`` the row
(growing downwards). Angles reported to callers use the upward ``y`` axis,
so an image slope ``dv/du`` maps to ``-arctan(dv/du)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .elastica import Shape

DEFAULT_THRESHOLD = 0.02
ALPHA_STEP = 0.1


class VisionError(ValueError):
    pass


class FitError(VisionError):
    pass


@dataclass
class BinaryImage:
    pixels: np.ndarray  # bool, shape (height, width), row-major
    pitch: float | None = None  # m / pixel for synthetic frames

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=bool)
        if self.pixels.ndim != 2:
            raise VisionError("image must be two-dimensional")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def foreground(self) -> tuple[np.ndarray, np.ndarray]:
        v, u = np.nonzero(self.pixels)
        if u.size == 0:
            raise VisionError("image has no foreground pixels")
        return u.astype(float), v.astype(float)

    def neighborhood(self, u: float, v: float) -> int:
        """Foreground count in the 3x3 block around the nearest pixel (0 outside)."""
        iu, iv = int(round(u)), int(round(v))
        if iu < -1 or iv < -1 or iu > self.width or iv > self.height:
            return 0
        block = self.pixels[max(iv - 1, 0): iv + 2, max(iu - 1, 0): iu + 2]
        return int(np.count_nonzero(block))

    def shifted(self, du: int, dv: int) -> "BinaryImage":
        out = np.zeros_like(self.pixels)
        h, w = out.shape
        src = self.pixels[max(0, -dv): h - max(0, dv), max(0, -du): w - max(0, du)]
        out[max(0, dv): max(0, dv) + src.shape[0], max(0, du): max(0, du) + src.shape[1]] = src
        return BinaryImage(out, self.pitch)


@dataclass
class ConicFit:
    kind: str  # quadratic | ellipse
    origin: tuple[float, float]  # coordinates are relative to this point
    coeffs: np.ndarray  # (a, b, c) or conic (A, B, C, D, E, F)
    residual: float
    center: tuple[float, float] | None = None  # absolute pixel coordinates
    axes: tuple[float, float] | None = None
    orientation: float | None = None

    @property
    def Q(self) -> np.ndarray:
        """Homogeneous symmetric conic matrix in origin-relative coordinates."""
        if self.kind != "ellipse":
            raise VisionError("Q is defined for ellipse fits")
        A, B, C, D, E, F = self.coeffs
        return np.array([[A, B / 2, D / 2], [B / 2, C, E / 2], [D / 2, E / 2, F]])

    def value(self, u: float) -> float:
        a, b, c = self.coeffs
        x = u - self.origin[0]
        return self.origin[1] + (a * x + b) * x + c

    def slope(self, u: float) -> float:
        a, b, _ = self.coeffs
        return 2 * a * (u - self.origin[0]) + b

    def point(self, alpha: float) -> tuple[float, float]:
        ae, be = self.axes
        ca, sa = math.cos(self.orientation), math.sin(self.orientation)
        x, y = ae * math.cos(alpha), be * math.sin(alpha)
        return self.center[0] + ca * x - sa * y, self.center[1] + sa * x + ca * y

    def tangent(self, alpha: float) -> tuple[float, float]:
        ae, be = self.axes
        ca, sa = math.cos(self.orientation), math.sin(self.orientation)
        dx, dy = -ae * math.sin(alpha), be * math.cos(alpha)
        return ca * dx - sa * dy, sa * dx + ca * dy

    def to_ellipse_frame(self, u: float, v: float) -> tuple[float, float]:
        du, dv = u - self.center[0], v - self.center[1]
        ca, sa = math.cos(self.orientation), math.sin(self.orientation)
        return ca * du + sa * dv, -sa * du + ca * dv


@dataclass(frozen=True)
class TraceResult:
    tip: tuple[float, float]
    theta_L: float
    branch: str
    alpha: float | None = None


def centroid(img: BinaryImage) -> tuple[float, float]:
    u, v = img.foreground()
    return float(u.mean()), float(v.mean())


def _linearity_points(u, v) -> float:
    if u.size < 2:
        raise VisionError("linearity needs at least two foreground pixels")
    cov = np.cov(np.vstack([u, v]), bias=True)
    lam = np.linalg.eigvalsh(cov)
    if lam[1] <= 0:
        raise VisionError("degenerate foreground (single point)")
    return float(max(lam[0], 0.0) / lam[1])


def linearity(img: BinaryImage) -> float:
    """Ratio of minor to major covariance eigenvalue; 0 for a straight line."""
    return _linearity_points(*img.foreground())


def _fit_quadratic_points(u, v, origin) -> ConicFit:
    x, y = u - origin[0], v - origin[1]
    A = np.column_stack([x * x, x, np.ones_like(x)])
    if np.linalg.matrix_rank(A) < 3:
        raise FitError("quadratic fit is rank deficient (near-vertical foreground)")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return ConicFit("quadratic", origin, coef, res)


def fit_quadratic(img: BinaryImage) -> ConicFit:
    u, v = img.foreground()
    return _fit_quadratic_points(u, v, (float(u.mean()), float(v.mean())))


def _fit_ellipse_points(u, v, origin) -> ConicFit:
    """Direct least-squares ellipse fit (numerically stable split form)."""
    if u.size < 6:
        raise FitError("ellipse fit needs at least six points")
    scale = max(float(np.std(u - origin[0])), float(np.std(v - origin[1])), 1e-12)
    x, y = (u - origin[0]) / scale, (v - origin[1]) / scale
    D1 = np.column_stack([x * x, x * y, y * y])
    D2 = np.column_stack([x, y, np.ones_like(x)])
    S1, S2, S3 = D1.T @ D1, D1.T @ D2, D2.T @ D2
    try:
        T = -np.linalg.solve(S3, S2.T)
    except np.linalg.LinAlgError as exc:
        raise FitError("ellipse fit: singular scatter matrix") from exc
    M = S1 + S2 @ T
    M = np.array([M[2] / 2, -M[1], M[0] / 2])
    w, vecs = np.linalg.eig(M)
    vecs = np.real(vecs)
    cond = 4 * vecs[0] * vecs[2] - vecs[1] ** 2
    ok = np.nonzero(cond > 0)[0]
    if ok.size == 0:
        raise FitError("degenerate conic: no ellipse solution (near-collinear points)")
    a1 = vecs[:, ok[0]]
    A, B, C = a1
    D, E, F = T @ a1
    # undo the scaling: conic in origin-relative pixel units
    coeffs = np.array([A, B, C, D * scale, E * scale, F * scale * scale])
    coeffs /= np.linalg.norm(coeffs)
    if coeffs[0] + coeffs[2] < 0:
        coeffs = -coeffs  # positive-definite quadratic part, so axes come out major first
    A, B, C, D, E, F = coeffs
    disc = B * B - 4 * A * C
    if disc >= 0:
        raise FitError("fitted conic is not an ellipse")
    xc = (2 * C * D - B * E) / disc
    yc = (2 * A * E - B * D) / disc
    F0 = A * xc * xc + B * xc * yc + C * yc * yc + D * xc + E * yc + F
    lam, vec = np.linalg.eigh(np.array([[A, B / 2], [B / 2, C]]))
    if F0 == 0 or np.any(-F0 / lam <= 0):
        raise FitError("fitted conic is imaginary")
    semi = np.sqrt(-F0 / lam)  # ascending eigenvalues -> descending axes
    ae, be = float(semi[0]), float(semi[1])
    theta = float(math.atan2(vec[1, 0], vec[0, 0]))
    # residual as algebraic distance normalised by the gradient (approx. pixels)
    xr, yr = u - origin[0], v - origin[1]
    val = A * xr * xr + B * xr * yr + C * yr * yr + D * xr + E * yr + F
    gx, gy = 2 * A * xr + B * yr + D, B * xr + 2 * C * yr + E
    res = float(np.sqrt(np.mean((val / np.maximum(np.hypot(gx, gy), 1e-300)) ** 2)))
    return ConicFit("ellipse", origin, coeffs, res, (origin[0] + xc, origin[1] + yc), (ae, be), theta)


def fit_ellipse(img: BinaryImage) -> ConicFit:
    u, v = img.foreground()
    return _fit_ellipse_points(u, v, (float(u.mean()), float(v.mean())))


def _trace_quadratic(img, fit, g, direction, max_steps):
    u = g[0]
    if img.neighborhood(u, fit.value(u)) == 0:
        raise VisionError("trace start is not on the foreground")
    last = u
    for _ in range(max_steps):
        u += direction
        if img.neighborhood(u, fit.value(u)) == 0:
            break
        last = u
    else:
        raise VisionError("trace did not terminate")
    return last


def _trace_ellipse(img, fit, alpha0, direction, step, max_steps, refine=True):
    if img.neighborhood(*fit.point(alpha0)) == 0:
        raise VisionError("trace start is not on the foreground")
    alpha = alpha0
    for _ in range(max_steps):
        nxt = alpha + direction * step
        if img.neighborhood(*fit.point(nxt)) == 0:
            break
        alpha = nxt
    else:
        raise VisionError("trace did not terminate")
    if refine:
        lo, hi = alpha, alpha + direction * step
        while abs(hi - lo) > 1e-3:
            mid = 0.5 * (lo + hi)
            if img.neighborhood(*fit.point(mid)) > 0:
                lo = mid
            else:
                hi = mid
        alpha = lo
    return alpha


def trace_to_tip(img: BinaryImage, fit: ConicFit, start: tuple[float, float] | None = None,
                 alpha_step: float = ALPHA_STEP, refine: bool = True) -> TraceResult:
    """Walk along the fitted conic in both directions; keep the steeper end."""
    g = start if start is not None else centroid(img)
    if fit.kind == "quadratic":
        cands = []
        for direction in (1, -1):
            tu = _trace_quadratic(img, fit, g, direction, img.width + 2)
            cands.append(((tu, fit.value(tu)), -math.atan(fit.slope(tu)), None))
    else:
        gx, gy = fit.to_ellipse_frame(*g)
        alpha0 = math.atan2(gy / fit.axes[1], gx / fit.axes[0])
        max_steps = int(2 * math.pi / alpha_step) + 2
        cands = []
        for direction in (1, -1):
            alpha = _trace_ellipse(img, fit, alpha0, direction, alpha_step, max_steps, refine)
            du, dv = fit.tangent(alpha)
            if du == 0:
                angle = math.copysign(math.pi / 2, -dv)
            else:
                # slope angle of the tangent line, folded into (-pi/2, pi/2]
                angle = -math.atan(dv / du)
            cands.append((fit.point(alpha), angle, alpha))
    tip, angle, alpha = max(cands, key=lambda c: abs(c[1]))
    return TraceResult(tip, angle, fit.kind, alpha)


def measure(img: BinaryImage, threshold: float = DEFAULT_THRESHOLD,
            alpha_step: float = ALPHA_STEP) -> TraceResult:
    u, v = img.foreground()
    g = (float(u.mean()), float(v.mean()))
    lin = _linearity_points(u, v)
    if lin <= threshold:
        try:
            fit = _fit_quadratic_points(u, v, g)
        except FitError:
            fit = _fit_ellipse_points(u, v, g)
    else:
        try:
            fit = _fit_ellipse_points(u, v, g)
        except FitError:
            fit = _fit_quadratic_points(u, v, g)
    return trace_to_tip(img, fit, g, alpha_step)


def tip_angle_from_image(img: BinaryImage, threshold: float = DEFAULT_THRESHOLD,
                         alpha_step: float = ALPHA_STEP) -> float:
    return measure(img, threshold, alpha_step).theta_L


# synthetic frames ------------------------------------------------------------

def rasterize(shape: Shape, pitch: float = 5e-5, stroke: int = 3, size: tuple[int, int] = (1024, 768),
              origin: tuple[int, int] | None = None) -> BinaryImage:
    """Stamp the body curve as a ``stroke``-pixel-wide line on a blank frame.

    The clamp lands at ``origin`` (default: a quarter of the width in, mid
    height) and the body extends towards +u.
    """
    if not pitch > 0:
        raise ValueError("pitch must be positive")
    if stroke < 1:
        raise ValueError("stroke must be at least one pixel")
    width, height = size
    if origin is None:
        origin = (width // 4, height // 2)
    xy = np.asarray(shape.xy)
    seg = np.hypot(*np.diff(xy, axis=0).T) / pitch
    # densify so consecutive samples are at most a quarter pixel apart
    pts = [xy[:1]]
    for i, n in enumerate(np.maximum(np.ceil(seg * 4).astype(int), 1)):
        t = np.arange(1, n + 1)[:, None] / n
        pts.append(xy[i] + t * (xy[i + 1] - xy[i]))
    xy = np.vstack(pts)
    u = origin[0] + xy[:, 0] / pitch
    v = origin[1] - xy[:, 1] / pitch
    r = (stroke - 1) / 2
    iu, iv = np.rint(u).astype(int), np.rint(v).astype(int)
    k = int(math.ceil(r))
    offs = [(du, dv) for du in range(-k, k + 1) for dv in range(-k, k + 1) if du * du + dv * dv <= r * r + 0.5]
    pix = np.zeros((height, width), dtype=bool)
    for du, dv in offs:
        cu, cv = iu + du, iv + dv
        if cu.min() < 0 or cv.min() < 0 or cu.max() >= width or cv.max() >= height:
            raise ValueError("image too small for the shape at this pitch")
        pix[cv, cu] = True
    return BinaryImage(pix, pitch)


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        out.append(data[i:j])
        i = j
    return out, i + 1  # single whitespace byte precedes the raster


def read_image(path, threshold: int = 128) -> BinaryImage:
    """Read binary PGM (P5, 8-bit) or PBM (P4); foreground is >= threshold / set bits."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic == b"P5":
        (m, w, h, maxval), start = _tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
        if maxval > 255:
            raise VisionError(f"{path}: only 8-bit PGM supported")
        raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=start).reshape(h, w)
        return BinaryImage(raster >= threshold)
    if magic == b"P4":
        (m, w, h), start = _tokens(data, 3)
        w, h = int(w), int(h)
        row = (w + 7) // 8
        raster = np.frombuffer(data, dtype=np.uint8, count=row * h, offset=start).reshape(h, row)
        return BinaryImage(np.unpackbits(raster, axis=1)[:, :w].astype(bool))
    raise VisionError(f"{path}: not a binary PGM/PBM file")


def write_pgm(path, img: BinaryImage) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode()
    Path(path).write_bytes(header + (img.pixels.astype(np.uint8) * 255).tobytes())


def write_pbm(path, img: BinaryImage) -> None:
    header = f"P4\n{img.width} {img.height}\n".encode()
    Path(path).write_bytes(header + np.packbits(img.pixels, axis=1).tobytes())
