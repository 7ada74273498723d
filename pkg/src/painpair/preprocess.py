"""Frame normalization: piecewise-affine frontalization and CLAHE.

Landmark coordinates are (x, y) in pixel-index units: the centre of pixel
``image[r, c]`` sits at ``(x=c, y=r)``.
"""
from __future__ import annotations

import csv
import hashlib
import warnings
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

FRAME_SIZE = 96
N_LANDMARKS = 68
DEFAULT_CLIP_LIMIT = 2.0
DEFAULT_TILES = 8
DEFAULT_FRONTAL_THRESHOLD = 0.5

# standard 68-point topology, left/right counterpart of every index
MIRROR_INDEX = np.array(
    [16 - i for i in range(17)]
    + [26 - i for i in range(10)]
    + [27, 28, 29, 30]
    + [35, 34, 33, 32, 31]
    + [45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40]
    + [54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55]
    + [64, 63, 62, 61, 60, 67, 66, 65]
)


class DegenerateTriangleWarning(UserWarning):
    def __init__(self, count):
        super().__init__(f"skipped {count} degenerate source triangle(s)")
        self.count = count


def _left_half_template():
    """Normalized (u, v) points; u in [-1, 1] across, v grows downward."""
    pts = {}
    for i in range(17):
        t = i / 16
        pts[i] = (-np.cos(np.pi * t), 0.25 + 0.75 * np.sin(np.pi * t))
    for k, s in enumerate(np.linspace(0.0, 1.0, 5)):
        pts[17 + k] = (-0.8 + 0.65 * s, 0.2 - 0.05 * np.sin(np.pi * s))
    for k, v in enumerate((0.3, 0.38, 0.46, 0.54)):
        pts[27 + k] = (0.0, v)
    pts.update({31: (-0.2, 0.6), 32: (-0.1, 0.62), 33: (0.0, 0.64)})
    pts.update({36: (-0.6, 0.32), 37: (-0.5, 0.28), 38: (-0.4, 0.28),
                39: (-0.3, 0.32), 40: (-0.4, 0.36), 41: (-0.5, 0.36)})
    pts.update({48: (-0.35, 0.8), 49: (-0.22, 0.75), 50: (-0.1, 0.73), 51: (0.0, 0.74),
                57: (0.0, 0.9), 58: (-0.1, 0.89), 59: (-0.22, 0.86)})
    pts.update({60: (-0.28, 0.8), 61: (-0.1, 0.78), 62: (0.0, 0.78),
                66: (0.0, 0.83), 67: (-0.1, 0.83)})
    return pts


def canonical_template(size: int = FRAME_SIZE) -> np.ndarray:
    """Symmetric upright 68-point template on a ``size`` x ``size`` frame, 10% margin."""
    half = _left_half_template()
    uv = np.zeros((N_LANDMARKS, 2))
    for i in range(N_LANDMARKS):
        if i in half:
            uv[i] = half[i]
        else:
            u, v = half[int(MIRROR_INDEX[i])]
            uv[i] = (-u, v)
    mid = (size - 1) / 2.0
    lo, hi = 0.1 * size, 0.9 * size
    x = mid + uv[:, 0] * (mid - lo)
    v = (uv[:, 1] - uv[:, 1].min()) / np.ptp(uv[:, 1])
    y = lo + v * (hi - lo)
    return np.column_stack([x, y])


def check_landmarks(landmarks) -> np.ndarray:
    pts = np.asarray(landmarks, dtype=np.float64)
    if pts.shape != (N_LANDMARKS, 2):
        raise ValueError(f"expected ({N_LANDMARKS}, 2) landmarks, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("landmarks must be finite")
    return pts


def to_gray_float(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[..., :3].astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def bilinear_sample(image: np.ndarray, x, y) -> np.ndarray:
    """Sample ``image`` at fractional (x, y), clamping coordinates to the border."""
    h, w = image.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    top = image[y0, x0] * (1 - wx) + image[y0, x1] * wx
    bottom = image[y1, x0] * (1 - wx) + image[y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def affine_between(src_tri: np.ndarray, dst_tri: np.ndarray) -> np.ndarray:
    """2x3 matrix A with A @ [x, y, 1] mapping each src vertex onto its dst vertex."""
    m = np.column_stack([src_tri, np.ones(3)])
    return np.linalg.solve(m, dst_tri).T


def _triangle_area2(tri):
    (x0, y0), (x1, y1), (x2, y2) = tri
    return (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)


def frontalize(image, landmarks, template=None, out_size: int = FRAME_SIZE) -> np.ndarray:
    """Piecewise-affine warp of ``image`` so that ``landmarks`` land on ``template``.

    The template is Delaunay-triangulated; every output pixel inside a
    template triangle is pulled from the matching source triangle with
    bilinear interpolation. Pixels outside the triangulated hull are 0.
    Collinear source triangles are skipped (a DegenerateTriangleWarning
    reports how many).
    """
    src_img = to_gray_float(image)
    src = check_landmarks(landmarks)
    dst = check_landmarks(canonical_template(out_size) if template is None else template)

    tri = Delaunay(dst)
    ys, xs = np.mgrid[0:out_size, 0:out_size]
    pix = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    owner = tri.find_simplex(pix)
    out = np.zeros(out_size * out_size)
    scale = max(np.ptp(src[:, 0]), np.ptp(src[:, 1]), 1.0)
    skipped = 0
    for s, simplex in enumerate(tri.simplices):
        sel = owner == s
        if not sel.any():
            continue
        src_tri = src[simplex]
        if abs(_triangle_area2(src_tri)) < 1e-9 * scale * scale:
            skipped += 1
            continue
        a = affine_between(dst[simplex], src_tri)
        p = pix[sel]
        sx = a[0, 0] * p[:, 0] + a[0, 1] * p[:, 1] + a[0, 2]
        sy = a[1, 0] * p[:, 0] + a[1, 1] * p[:, 1] + a[1, 2]
        out[sel] = bilinear_sample(src_img, sx, sy)
    if skipped:
        warnings.warn(DegenerateTriangleWarning(skipped), stacklevel=2)
    return np.clip(out.reshape(out_size, out_size), 0.0, 1.0)


def hull_mask(template=None, out_size: int = FRAME_SIZE) -> np.ndarray:
    dst = check_landmarks(canonical_template(out_size) if template is None else template)
    ys, xs = np.mgrid[0:out_size, 0:out_size]
    pix = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    return (Delaunay(dst).find_simplex(pix) >= 0).reshape(out_size, out_size)


# -- CLAHE --------------------------------------------------------------------

def _tile_edges(n, tiles):
    size = n // tiles
    if size < 1:
        raise ValueError(f"{tiles} tiles do not fit in {n} pixels")
    # last tile absorbs the remainder
    return np.array([i * size for i in range(tiles)] + [n])


def quantize(image: np.ndarray, n_bins: int = 256) -> np.ndarray:
    return np.clip(np.rint(image * (n_bins - 1)), 0, n_bins - 1).astype(np.intp)


def clipped_histogram(hist: np.ndarray, clip_limit: float) -> np.ndarray:
    """Clip at ``clip_limit`` x uniform bin height; spread the excess evenly over all bins."""
    hist = hist.astype(np.float64)
    if not np.isfinite(clip_limit):
        return hist
    limit = clip_limit * hist.sum() / hist.size
    excess = np.maximum(hist - limit, 0.0).sum()
    return np.minimum(hist, limit) + excess / hist.size


def tile_transfer_functions(image, clip_limit=DEFAULT_CLIP_LIMIT, tiles=DEFAULT_TILES,
                            n_bins: int = 256) -> np.ndarray:
    """Per-tile lookup tables, shape (tiles, tiles, n_bins), values in [0, 1]."""
    if not clip_limit > 0:
        raise ValueError("clip_limit must be positive")
    if tiles < 1:
        raise ValueError("tiles must be >= 1")
    q = quantize(to_gray_float(image), n_bins)
    ey = _tile_edges(q.shape[0], tiles)
    ex = _tile_edges(q.shape[1], tiles)
    luts = np.empty((tiles, tiles, n_bins))
    for i in range(tiles):
        for j in range(tiles):
            block = q[ey[i]:ey[i + 1], ex[j]:ex[j + 1]]
            hist = clipped_histogram(np.bincount(block.ravel(), minlength=n_bins), clip_limit)
            luts[i, j] = np.cumsum(hist) / hist.sum()
    return luts


def _blend_coords(n, edges):
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=np.float64)
    if len(centers) == 1:
        zeros = np.zeros(n, dtype=np.intp)
        return zeros, zeros, np.zeros(n)
    lo = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 2)
    w = np.clip((pos - centers[lo]) / (centers[lo + 1] - centers[lo]), 0.0, 1.0)
    return lo, lo + 1, w


def clahe(image, clip_limit: float = DEFAULT_CLIP_LIMIT, tiles: int = DEFAULT_TILES,
          n_bins: int = 256) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization of a [0, 1] grayscale frame.

    Each tile's transfer function is the normalized CDF of its clipped
    histogram; pixels blend the four nearest tile functions bilinearly
    (edge pixels clamp to the outermost tile centres).
    """
    img = to_gray_float(image)
    q = quantize(img, n_bins)
    luts = tile_transfer_functions(img, clip_limit, tiles, n_bins)
    h, w = q.shape
    y0, y1, wy = _blend_coords(h, _tile_edges(h, tiles))
    x0, x1, wx = _blend_coords(w, _tile_edges(w, tiles))
    Y0, Y1, WY = y0[:, None], y1[:, None], wy[:, None]
    X0, X1, WX = x0[None, :], x1[None, :], wx[None, :]
    out = ((1 - WY) * ((1 - WX) * luts[Y0, X0, q] + WX * luts[Y0, X1, q])
           + WY * ((1 - WX) * luts[Y1, X0, q] + WX * luts[Y1, X1, q]))
    return np.clip(out, 0.0, 1.0)


# -- I/O ----------------------------------------------------------------------

def write_pgm(path, frame) -> None:
    data = np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / 255.0


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def load_landmarks(path) -> np.ndarray:
    """Per-frame sidecar: 68 rows of ``x,y``."""
    return check_landmarks(np.loadtxt(path, delimiter=",", ndmin=2))


def load_landmark_table(path) -> dict:
    """Shared sidecar keyed by image_path, columns image_path,x0,y0,...,x67,y67."""
    table = {}
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            try:
                pts = [(float(row[f"x{i}"]), float(row[f"y{i}"])) for i in range(N_LANDMARKS)]
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path} row {line}: bad landmark row") from e
            table[row["image_path"]] = check_landmarks(pts)
    return table


def write_landmark_table(path, table: dict) -> None:
    header = ["image_path"] + [f"{a}{i}" for i in range(N_LANDMARKS) for a in "xy"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for key, pts in table.items():
            writer.writerow([key] + [repr(float(v)) for v in np.asarray(pts).ravel()])


def is_frontal(frontal_score, threshold: float = DEFAULT_FRONTAL_THRESHOLD) -> bool:
    return frontal_score is None or frontal_score >= threshold


class FrameCache:
    """Processed frames stored as 8-bit PGM files named by a content hash."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(image: np.ndarray, landmarks, params: tuple) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(image, dtype=np.float64).tobytes())
        if landmarks is not None:
            h.update(np.ascontiguousarray(landmarks, dtype=np.float64).tobytes())
        h.update(repr(params).encode())
        return h.hexdigest()

    def get(self, key):
        path = self.directory / f"{key}.pgm"
        return read_pgm(path) if path.exists() else None

    def put(self, key, frame) -> None:
        write_pgm(self.directory / f"{key}.pgm", frame)


def preprocess_frame(image, landmarks=None, template=None, use_clahe: bool = True,
                     clip_limit: float = DEFAULT_CLIP_LIMIT, tiles: int = DEFAULT_TILES,
                     cache: FrameCache | None = None) -> np.ndarray:
    """Frontalize (when landmarks are given) then equalize one frame.

    Frames without landmarks must already be at the canonical size.
    """
    img = to_gray_float(image)
    params = (use_clahe, float(clip_limit), int(tiles),
              None if template is None else np.asarray(template).tobytes())
    key = None
    if cache is not None:
        key = cache.key(img, landmarks, params)
        hit = cache.get(key)
        if hit is not None:
            return hit
    if landmarks is not None:
        img = frontalize(img, landmarks, template)
    elif img.shape != (FRAME_SIZE, FRAME_SIZE):
        raise ValueError(f"frame of shape {img.shape} needs landmarks to reach "
                         f"{FRAME_SIZE}x{FRAME_SIZE}")
    if use_clahe:
        img = clahe(img, clip_limit, tiles)
    if cache is not None:
        cache.put(key, img)
        # round-trip so cached and fresh results are identical
        return cache.get(key)
    return img
