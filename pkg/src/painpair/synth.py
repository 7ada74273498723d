"""Procedural face-proxy frames with known AU intensities.

Every AU moves pixels in a fixed region and in one direction, so a model that
reads frame differences can recover the annotation deltas exactly. With
``bias_mode`` the resting geometry, brightness and a per-subject texture vary
strongly between subjects, which makes per-person calibration matter.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .pain_scales import AnnotationRecord, AUVector, compute_pspi, write_annotations
from .preprocess import FRAME_SIZE, write_pgm

NOISE_SIGMA = 0.02
BACKGROUND = 0.15
FPS = {"Dementia": 15, "Control": 15, "UNBC": 30}

# (low, high) for each resting parameter, in pixels unless noted
PROFILE_RANGES = {
    "face_a": (31.0, 35.0),
    "face_b": (39.0, 43.0),
    "eye_y": (38.0, 41.0),
    "eye_dx": (13.0, 15.0),
    "eye_w": (6.5, 7.5),
    "eye_h": (3.8, 4.4),
    "brow_gap": (9.5, 10.5),
    "nose_y": (56.0, 58.0),
    "mouth_y": (70.0, 72.0),
    "mouth_w": (11.0, 13.0),
    "mouth_curve": (-1.0, 1.0),
    "base_intensity": (0.58, 0.64),
    "bias": (-0.03, 0.03),
    "texture_amp": (0.0, 0.0),
}
BIAS_PROFILE_RANGES = {
    **PROFILE_RANGES,
    "eye_y": (36.0, 43.0),
    "eye_dx": (12.0, 16.0),
    "eye_w": (5.5, 8.5),
    "eye_h": (3.0, 5.5),
    "brow_gap": (8.5, 12.5),
    "mouth_y": (68.0, 74.0),
    "mouth_w": (9.0, 15.0),
    "mouth_curve": (-3.0, 3.0),
    "bias": (-0.12, 0.12),
    "texture_amp": (0.04, 0.08),
}

# image windows (row slice, col slice) used to check per-AU monotonicity
EYE_REGION = (slice(30, 50), slice(26, 70))
# between the inner brow ends, where only the AU4 furrows are drawn
BROW_REGION = (slice(20, 35), slice(44, 52))
MOUTH_REGION = (slice(62, 82), slice(30, 66))
NOSE_REGION = (slice(44, 62), slice(38, 58))


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    cohort: str
    seed: int
    bias_mode: bool
    face_a: float
    face_b: float
    eye_y: float
    eye_dx: float
    eye_w: float
    eye_h: float
    brow_gap: float
    nose_y: float
    mouth_y: float
    mouth_w: float
    mouth_curve: float
    base_intensity: float
    bias: float
    texture_amp: float

    def texture(self) -> np.ndarray:
        if self.texture_amp == 0:
            return np.zeros((FRAME_SIZE, FRAME_SIZE))
        rng = np.random.default_rng([self.seed, 7])
        field = gaussian_filter(rng.standard_normal((FRAME_SIZE, FRAME_SIZE)), 4.0)
        return self.texture_amp * field / (np.abs(field).max() + 1e-12)


def gen_subject(seed: int, cohort: str = "Dementia", bias_mode: bool = False) -> SubjectProfile:
    ranges = BIAS_PROFILE_RANGES if bias_mode else PROFILE_RANGES
    rng = np.random.default_rng([seed, 1])
    params = {k: float(rng.uniform(lo, hi)) if hi > lo else float(lo)
              for k, (lo, hi) in ranges.items()}
    return SubjectProfile(subject_id=f"S{seed:06d}", cohort=cohort, seed=int(seed),
                          bias_mode=bool(bias_mode), **params)


def _coverage(signed_dist):
    # anti-aliased edge: 1 inside, 0 outside, linear over one pixel
    return np.clip(0.5 - signed_dist, 0.0, 1.0)


_SUBPIXEL = (np.arange(4) + 0.5) / 4 - 0.5


def _ellipse(xx, yy, cx, cy, a, b):
    # 4x4 supersampled coverage
    a = max(a, 1e-3)
    b = max(b, 1e-3)
    cov = np.zeros_like(xx)
    for oy in _SUBPIXEL:
        v2 = ((yy + oy - cy) / b) ** 2
        for ox in _SUBPIXEL:
            cov += (((xx + ox - cx) / a) ** 2 + v2) <= 1.0
    return cov / _SUBPIXEL.size ** 2


def _segment(xx, yy, x0, y0, x1, y1, half_width):
    px, py = xx - x0, yy - y0
    dx, dy = x1 - x0, y1 - y0
    t = np.clip((px * dx + py * dy) / (dx * dx + dy * dy + 1e-12), 0.0, 1.0)
    dist = np.hypot(px - t * dx, py - t * dy)
    return _coverage(dist - half_width)


def _polyline(xx, yy, pts, half_width):
    cov = np.zeros_like(xx)
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        cov = np.maximum(cov, _segment(xx, yy, x0, y0, x1, y1, half_width))
    return cov


def _darken(img, cov, amount):
    return img * (1.0 - amount * cov)


def _lighten(img, cov, amount):
    return img + amount * cov * (1.0 - img)


def render_frame(profile: SubjectProfile, aus: AUVector, noise_seed: int = 0) -> np.ndarray:
    """Draw a 96x96 grayscale face proxy for the given AU intensities."""
    p = profile
    n = FRAME_SIZE
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    cx = (n - 1) / 2.0
    au4 = float(aus.au4)
    au43 = float(aus.au43)
    au6 = float(aus.au6 if aus.au6 is not None else aus.max_au6_au7)
    au7 = float(aus.au7 if aus.au7 is not None else 0.0)
    au9 = float(aus.au9 if aus.au9 is not None else aus.max_au9_au10)
    au10 = float(aus.au10 if aus.au10 is not None else 0.0)

    skin = np.clip(p.base_intensity + p.bias, 0.05, 0.95)
    face = _ellipse(xx, yy, cx, 50.0, p.face_a, p.face_b)
    img = BACKGROUND + (skin - BACKGROUND) * face + p.texture() * face

    for side in (-1.0, 1.0):
        ex = cx + side * p.eye_dx
        # cheek raiser: bright bulge under the eye
        img = _lighten(img, _ellipse(xx, yy, ex, p.eye_y + p.eye_h + 4.0, 6.0, 3.0), 0.05 * au6)
        aperture = p.eye_h * (1.0 - 0.85 * au43) * (1.0 - 0.07 * au6 - 0.05 * au7)
        width = p.eye_w * (1.0 - 0.03 * au7)
        img = _darken(img, _ellipse(xx, yy, ex, p.eye_y, width, max(aperture, 0.35)), 0.8)
        # brow: lowered and tilted inward by AU4
        by = p.eye_y - p.brow_gap + 0.8 * au4
        inner = cx + side * (p.eye_dx - 6.0)
        outer = cx + side * (p.eye_dx + 7.0)
        img = _darken(img, _segment(xx, yy, outer, by - 1.0, inner, by + 0.6 * au4, 1.3), 0.6)
    # glabellar furrows
    for off in (-2.0, 2.0):
        img = _darken(img, _segment(xx, yy, cx + off, 24.0, cx + off, 33.0, 0.6), 0.09 * au4)

    # nose bridge, nostrils widened by AU9, wrinkles across the bridge
    img = _darken(img, _segment(xx, yy, cx, p.eye_y + 4.0, cx, p.nose_y - 3.0, 0.8), 0.15)
    for side in (-1.0, 1.0):
        img = _darken(img, _ellipse(xx, yy, cx + side * 3.5, p.nose_y - 0.4 * au9,
                                    1.6 + 0.3 * au9, 1.0 + 0.1 * au9), 0.5)
    for k in range(3):
        wy = p.eye_y + 5.0 + 2.5 * k
        img = _darken(img, _segment(xx, yy, cx - 4.0, wy, cx + 4.0, wy, 0.5), 0.08 * au9)

    # nasolabial folds deepen and upper lip rises with AU10
    for side in (-1.0, 1.0):
        img = _darken(img, _segment(xx, yy, cx + side * 5.0, p.nose_y + 1.0,
                                    cx + side * (p.mouth_w + 1.0), p.mouth_y, 0.6), 0.06 * au10)
    lip_y = p.mouth_y - 0.7 * au10
    img = _darken(img, _ellipse(xx, yy, cx, (lip_y + p.mouth_y) / 2.0,
                                p.mouth_w * 0.8, 0.1 + 0.45 * au10), 0.7)
    ks = np.linspace(-1.0, 1.0, 9)
    mouth_x = cx + p.mouth_w * ks
    bend = p.mouth_curve * (ks ** 2 - 1.0)
    img = _darken(img, _polyline(xx, yy, list(zip(mouth_x, p.mouth_y - bend)), 0.9), 0.55)
    img = _darken(img, _polyline(xx, yy, list(zip(mouth_x, lip_y - 1.5 - bend)), 0.6), 0.3)

    rng = np.random.default_rng([p.seed, 2, int(noise_seed)])
    img = img + rng.normal(0.0, NOISE_SIGMA, img.shape)
    return np.clip(img, 0.0, 1.0)


def _pspi_components():
    combos = {}
    for a43, m67, m910, a4 in itertools.product(range(2), range(6), range(6), range(6)):
        combos.setdefault(a43 + m67 + m910 + a4, []).append((a43, m67, m910, a4))
    return combos


_COMPONENTS = _pspi_components()
_LEVELS = np.arange(17)
# P(level) = 2^(-level/2): bands of two levels have P(band) proportional to 2^(-band)
_LEVEL_P = 2.0 ** (-_LEVELS / 2.0)
_LEVEL_P /= _LEVEL_P.sum()


def sample_aus(rng: np.random.Generator, level: int | None = None) -> AUVector:
    if level is None:
        level = int(rng.choice(_LEVELS, p=_LEVEL_P))
    options = _COMPONENTS[level]
    a43, m67, m910, a4 = options[int(rng.integers(len(options)))]

    def split(m):
        other = int(rng.integers(m + 1))
        return (m, other) if rng.random() < 0.5 else (other, m)

    au6, au7 = split(m67)
    au9, au10 = split(m910)
    return AUVector(au4=float(a4), au6=float(au6), au7=float(au7), au9=float(au9),
                    au10=float(au10), au43=float(a43))


def synthetic_pacslac(aus: AUVector) -> tuple:
    """Deterministic binary facial-checklist items derived from the AUs."""
    pspi = compute_pspi(aus)
    m67, m910 = aus.max_au6_au7, aus.max_au9_au10
    items = (aus.au4 >= 2, m67 >= 2, m910 >= 2, aus.au43 >= 1, pspi >= 4, aus.au4 >= 4,
             m67 >= 4, m910 >= 4, pspi >= 8, (m910 >= 3) and (m67 >= 3), pspi >= 2)
    return tuple(int(bool(v)) for v in items)


def make_record(profile: SubjectProfile, frame_index: int, aus: AUVector) -> AnnotationRecord:
    cohort = profile.cohort
    if cohort == "UNBC":
        stored, pac = aus, None
    else:
        # UofR annotations carry only the max-combined values
        stored = AUVector(au4=aus.au4, au6=aus.max_au6_au7, au7=None,
                          au9=aus.max_au9_au10, au10=None, au43=aus.au43)
        pac = synthetic_pacslac(aus)
    return AnnotationRecord(
        dataset_id=cohort,
        subject_id=profile.subject_id,
        frame_index=frame_index,
        fps=FPS[cohort],
        aus=stored,
        pspi=compute_pspi(aus),
        pacslac=pac,
        frontal_score=1.0,
        image_path=f"{profile.subject_id}/{frame_index:05d}.pgm",
    )


def gen_dataset(n_subjects: int, frames_per_subject: int, seed: int = 0,
                bias_mode: bool = False, cohorts=("Dementia",)):
    """Return (records, frames) with frames as a float32 array (N, 96, 96).

    Subject ``i`` is tagged ``cohorts[i % len(cohorts)]``. At least a quarter of
    each subject's frames are at rest (PSPI 0); the rest follow a skewed
    PSPI distribution with P(level) proportional to 2^(-level/2).
    """
    if n_subjects < 2:
        raise ValueError("n_subjects must be >= 2")
    if frames_per_subject < 4:
        raise ValueError("frames_per_subject must be >= 4")
    subject_seeds = np.random.SeedSequence(seed).generate_state(n_subjects)
    records, frames = [], []
    for i, s in enumerate(subject_seeds):
        profile = gen_subject(int(s), cohorts[i % len(cohorts)], bias_mode)
        rng = np.random.default_rng([int(s), 3])
        forced = set(rng.choice(frames_per_subject, size=-(-frames_per_subject // 4),
                                replace=False).tolist())
        for f in range(frames_per_subject):
            aus = sample_aus(rng, level=0 if f in forced else None)
            records.append(make_record(profile, f, aus))
            frames.append(render_frame(profile, aus, noise_seed=f))
    return records, np.stack(frames).astype(np.float32)


def write_dataset(out_dir, records, frames) -> Path:
    """Emit annotations.csv plus one PGM per frame (paths relative to out_dir)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec, frame in zip(records, frames):
        path = out / rec.image_path
        path.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(path, frame)
    csv_path = out / "annotations.csv"
    write_annotations(csv_path, records)
    return csv_path
