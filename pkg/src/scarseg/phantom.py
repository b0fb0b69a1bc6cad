"""Synthetic LGE phantom slices: annular myocardium, bright scar, noise.

Each sample is a 64x64 slice built as background + myocardial annulus +
scar intensity + gaussian noise, with a binary scar label Y inside the
myocardium mask M. Difficulty is assigned by construction:

  d=0  high contrast gap, one compact angular-sector scar, clean labels
  d=1  medium gap, 1-2 blobs, occasional 1-px label jitter
  d=2  low gap, small blob or diffuse speckle, 15% zero-scar slices,
       frequent 1-2 px label jitter

Label jitter perturbs the stored Y only (annotation noise); the image is
rendered from the pre-jitter scar. After jitter the mask is clipped to M
and nudged back into the difficulty's burden range, so stored burdens stay
inside their configured bands (or are exactly zero for zero-scar slices).
"""

from __future__ import annotations

import re
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .numcore import PrngStream

SAMPLE_MAGIC = b"LGES"
SAMPLE_VERSION = 1
MANIFEST_HEADER = "LGESET v1"
MANIFEST_NAME = "manifest.txt"


@dataclass
class Sample:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    scar: np.ndarray  # Y, (H, W) uint8, subset of myo
    myo: np.ndarray  # M, (H, W) uint8
    difficulty: int
    sample_id: int

    def burden(self) -> float:
        m = self.myo > 0
        return float((self.scar > 0)[m].sum()) / float(m.sum())


@dataclass
class Dataset:
    samples: list
    manifest_path: Path | None = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def ids(self):
        return [s.sample_id for s in self.samples]

    def by_id(self, sample_id: int) -> Sample:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise KeyError(sample_id)


@dataclass(frozen=True)
class DifficultyProfile:
    gap: tuple  # scar-vs-myocardium intensity gap range [lo, hi)
    burden: tuple  # scar burden range [lo, hi)
    kinds: tuple  # scar shapes drawn uniformly: sector | blobs | blob | speckle
    jitter_prob: float = 0.0
    jitter_px: tuple = (1,)
    zero_scar_prob: float = 0.0


DEFAULT_PROFILES = (
    DifficultyProfile(gap=(0.35, 0.50), burden=(0.15, 0.35), kinds=("sector",)),
    DifficultyProfile(gap=(0.20, 0.35), burden=(0.08, 0.15), kinds=("blobs",),
                      jitter_prob=0.3, jitter_px=(1,)),
    DifficultyProfile(gap=(0.08, 0.20), burden=(0.01, 0.08), kinds=("blob", "speckle"),
                      jitter_prob=0.5, jitter_px=(1, 2), zero_scar_prob=0.15),
)


@dataclass(frozen=True)
class GenConfig:
    counts: tuple = (100, 100, 100)  # samples per difficulty
    seed: int = 0
    size: int = 64
    inner_radius: tuple = (8.0, 12.0)
    wall: tuple = (4.0, 7.0)
    center_jitter: float = 4.0
    background: float = 0.20
    myo_intensity: float = 0.35
    noise_sigma: float = 0.05
    profiles: tuple = DEFAULT_PROFILES

    def __post_init__(self):
        if len(self.counts) != len(self.profiles):
            raise ValueError("one count per difficulty profile required")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be >= 0")
        for lo, hi in (self.inner_radius, self.wall):
            if not lo < hi:
                raise ValueError(f"degenerate geometry range [{lo}, {hi})")
        if self.size < 48:
            raise ValueError("slice size below 48 px cannot hold the annulus geometry")
        for p in self.profiles:
            if not (p.gap[0] < p.gap[1] and p.burden[0] < p.burden[1]):
                raise ValueError("degenerate gap or burden range")


def _dilate4(mask):
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _erode4(mask):
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    out[0, :] = False
    out[-1, :] = False
    out[:, 0] = False
    out[:, -1] = False
    return out


def _fit_burden(scar, myo, lo, hi, anchors, max_steps=200):
    """Greedy pixel grow/shrink until burden lands in [lo, hi).

    Grows by the candidate 4-adjacent to the scar (seeded from the anchor
    nearest the myocardium when empty) that is closest to any anchor;
    shrinks by the boundary pixel farthest from all anchors. Ties resolve
    in row-major order. Returns None when max_steps is exhausted.
    """
    h, w = myo.shape
    ii, jj = np.mgrid[0:h, 0:w]
    n_myo = int(myo.sum())
    anchor_dist = np.full((h, w), np.inf)
    for ay, ax in anchors:
        anchor_dist = np.minimum(anchor_dist, np.hypot(ii - ay, jj - ax))

    scar = scar.copy()
    for _ in range(max_steps):
        burden = scar.sum() / n_myo
        if lo <= burden < hi:
            return scar
        if burden < lo:
            cand = _dilate4(scar) & myo & ~scar
            if not cand.any():
                if scar.any():
                    return None  # myocardium exhausted below lo: unreachable range
                cand = myo.copy()  # empty scar: seed at the anchor-nearest pixel
            flat = np.where(cand.ravel(), anchor_dist.ravel(), np.inf)
            scar.ravel()[int(np.argmin(flat))] = True
        else:
            boundary = scar & ~_erode4(scar)
            flat = np.where(boundary.ravel(), anchor_dist.ravel(), -np.inf)
            scar.ravel()[int(np.argmax(flat))] = False
    return None


def _sector_scar(myo, theta, cy, cx, lo, hi):
    """Compact angular sector of the annulus, width bisected into range."""
    h, w = myo.shape
    ii, jj = np.mgrid[0:h, 0:w]
    ang = np.arctan2(ii - cy, jj - cx)
    adist = np.abs((ang - theta + np.pi) % (2 * np.pi) - np.pi)
    n_myo = myo.sum()

    width_lo, width_hi = 0.0, 2 * np.pi
    for _ in range(60):
        width = 0.5 * (width_lo + width_hi)
        scar = myo & (adist <= width / 2)
        burden = scar.sum() / n_myo
        if lo <= burden < hi:
            return scar
        if burden < lo:
            width_lo = width
        else:
            width_hi = width
    return myo & (adist <= 0.5 * (width_lo + width_hi) / 2)


def _blob_scar(myo, seeds, lo, hi):
    """Union of disks around seed pixels, shared radius bisected into range."""
    h, w = myo.shape
    ii, jj = np.mgrid[0:h, 0:w]
    dist = np.full((h, w), np.inf)
    for sy, sx in seeds:
        dist = np.minimum(dist, np.hypot(ii - sy, jj - sx))
    n_myo = myo.sum()

    r_lo, r_hi = 0.0, float(max(h, w))
    for _ in range(60):
        r = 0.5 * (r_lo + r_hi)
        scar = myo & (dist <= r)
        burden = scar.sum() / n_myo
        if lo <= burden < hi:
            return scar
        if burden < lo:
            r_lo = r
        else:
            r_hi = r
    return myo & (dist <= 0.5 * (r_lo + r_hi))


def _speckle_scar(myo, stream, lo, hi):
    """Diffuse scar: scattered single myocardial pixels at a mid-range burden."""
    coords = np.argwhere(myo)
    n_myo = len(coords)
    target = stream.uniform(lo, hi)
    count = max(1, int(round(target * n_myo)))
    order = list(range(n_myo))
    stream.shuffle(order)
    scar = np.zeros_like(myo)
    for k in order[:count]:
        scar[coords[k][0], coords[k][1]] = True
    return scar


def generate_sample(config: GenConfig, difficulty: int, stream: PrngStream) -> Sample:
    """One phantom slice; the sample id is taken from the stream id."""
    profile = config.profiles[difficulty]
    size = config.size
    half = size / 2.0

    cy = half + stream.uniform(-config.center_jitter, config.center_jitter)
    cx = half + stream.uniform(-config.center_jitter, config.center_jitter)
    r_in = stream.uniform(*config.inner_radius)
    r_out = r_in + stream.uniform(*config.wall)
    ii, jj = np.mgrid[0:size, 0:size]
    radius = np.hypot(ii - cy, jj - cx)
    myo = (radius >= r_in) & (radius < r_out)

    gap = stream.uniform(*profile.gap)
    lo, hi = profile.burden

    if profile.zero_scar_prob > 0 and stream.uniform() < profile.zero_scar_prob:
        true_scar = np.zeros_like(myo)
        label = true_scar
    else:
        coords = np.argwhere(myo)
        for _attempt in range(20):
            kind = profile.kinds[0] if len(profile.kinds) == 1 else stream.choice(profile.kinds)
            if kind == "sector":
                theta = stream.uniform(-np.pi, np.pi)
                mid = (r_in + r_out) / 2.0
                anchors = [(cy + mid * np.sin(theta), cx + mid * np.cos(theta))]
                rough = _sector_scar(myo, theta, cy, cx, lo, hi)
            elif kind in ("blob", "blobs"):
                n_blobs = 1 if kind == "blob" else stream.randint(1, 3)
                seeds = [tuple(coords[stream.randint(0, len(coords))]) for _ in range(n_blobs)]
                anchors = seeds
                rough = _blob_scar(myo, seeds, lo, hi)
            elif kind == "speckle":
                rough = _speckle_scar(myo, stream, lo, hi)
                anchors = [tuple(c) for c in np.argwhere(rough)[:8]]
            else:
                raise ValueError(f"unknown scar kind {kind!r}")
            true_scar = _fit_burden(rough, myo, lo, hi, anchors)
            if true_scar is None:
                continue  # resample the scar seed and try again

            label = true_scar
            if profile.jitter_prob > 0 and stream.uniform() < profile.jitter_prob:
                px = profile.jitter_px[0] if len(profile.jitter_px) == 1 \
                    else stream.choice(profile.jitter_px)
                op = _erode4 if stream.uniform() < 0.5 else _dilate4
                for _ in range(px):
                    label = op(label)
                label = label & myo
                if lo <= label.sum() / myo.sum() < hi:
                    break
                refit = _fit_burden(label, myo, lo, hi, anchors)
                if refit is not None:
                    label = refit
                    break
                # jitter pushed the mask somewhere unfixable; retry the scar
            else:
                break
        else:
            raise RuntimeError(
                f"could not fit a difficulty-{difficulty} scar into burden range "
                f"[{lo}, {hi}) after 20 seeds"
            )

    base = np.full((size, size), config.background)
    base[myo] = config.myo_intensity
    base[true_scar] = config.myo_intensity + gap
    noise = stream.normals(size * size, 0.0, config.noise_sigma).reshape(size, size)
    image = np.clip(base + noise, 0.0, 1.0).astype(np.float32)

    return Sample(
        image=image,
        scar=label.astype(np.uint8),
        myo=myo.astype(np.uint8),
        difficulty=difficulty,
        sample_id=stream.stream_id,
    )


def generate_dataset(config: GenConfig) -> Dataset:
    """Per-sample streams keyed by sample id, so generation order is immaterial."""
    total = sum(config.counts)
    if total < 1:
        raise ValueError("empty dataset: all difficulty counts are zero")
    samples = []
    sample_id = 0
    for difficulty, count in enumerate(config.counts):
        for _ in range(count):
            stream = PrngStream(config.seed, sample_id)
            samples.append(generate_sample(config, difficulty, stream))
            sample_id += 1
    return Dataset(samples)


def split_dataset(ds: Dataset, train_fraction: float, stream: PrngStream):
    """Stratified split by difficulty.

    Per-class train counts are floor(fraction * class_size) with the
    remainder seats (up to round(fraction * N)) handed out by largest
    fractional part, lowest difficulty first on ties. Classes with fewer
    than 2 samples go entirely to train (with a warning).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    classes: dict = {}
    for s in ds.samples:
        classes.setdefault(s.difficulty, []).append(s)

    eligible = {}
    forced_train = []
    for d in sorted(classes):
        if len(classes[d]) < 2:
            warnings.warn(
                f"difficulty class {d} has {len(classes[d])} sample(s); "
                f"assigning it entirely to the training split"
            )
            forced_train.extend(classes[d])
        else:
            eligible[d] = classes[d]

    n_eligible = sum(len(v) for v in eligible.values())
    target = round(train_fraction * n_eligible)
    takes = {d: int(np.floor(train_fraction * len(v))) for d, v in eligible.items()}
    remainders = sorted(
        eligible,
        key=lambda d: (-(train_fraction * len(eligible[d]) - takes[d]), d),
    )
    leftover = target - sum(takes.values())
    for d in remainders[: max(leftover, 0)]:
        takes[d] += 1

    train, test = list(forced_train), []
    for d in sorted(eligible):
        members = eligible[d][:]
        stream.shuffle(members)
        train.extend(members[: takes[d]])
        test.extend(members[takes[d] :])
    train.sort(key=lambda s: s.sample_id)
    test.sort(key=lambda s: s.sample_id)
    return Dataset(train), Dataset(test)


def write_sample(sample: Sample, path) -> None:
    h, w = sample.image.shape
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC)
        fh.write(struct.pack("<BHHB", SAMPLE_VERSION, w, h, sample.difficulty))
        fh.write(sample.image.astype("<f4").tobytes())
        fh.write((sample.scar > 0).astype(np.uint8).tobytes())
        fh.write((sample.myo > 0).astype(np.uint8).tobytes())


def _need(buf, offset, size, what):
    if offset + size > len(buf):
        raise FormatError(
            f"truncated sample file: need {size} bytes for {what} at offset {offset}, "
            f"file has {len(buf) - offset} left"
        )
    return buf[offset : offset + size], offset + size


def read_sample(path, sample_id: int | None = None) -> Sample:
    """Read one sample file. The id is not part of the format: pass it in, or
    it is inferred from digits in the filename (0 otherwise)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, off = _need(buf, 0, 4, "magic")
    if magic != SAMPLE_MAGIC:
        raise FormatError(f"offset 0: bad magic {magic!r}, expected {SAMPLE_MAGIC!r}")
    raw, off = _need(buf, off, 6, "header")
    version, w, h, difficulty = struct.unpack("<BHHB", raw)
    if version != SAMPLE_VERSION:
        raise FormatError(f"offset 4: unsupported version {version}, expected {SAMPLE_VERSION}")
    if w == 0 or h == 0:
        raise FormatError(f"offset 5: degenerate slice shape {w}x{h}")
    if difficulty > 2:
        raise FormatError(f"offset 9: difficulty {difficulty} out of range 0..2")
    raw, off = _need(buf, off, 4 * h * w, "image")
    image = np.frombuffer(raw, dtype="<f4").reshape(h, w).copy()
    raw, off = _need(buf, off, h * w, "scar mask")
    scar = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    raw, off = _need(buf, off, h * w, "myo mask")
    myo = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    if off != len(buf):
        raise FormatError(f"offset {off}: {len(buf) - off} unexpected trailing bytes")
    for name, mask in (("scar", scar), ("myo", myo)):
        bad = np.setdiff1d(np.unique(mask), [0, 1])
        if bad.size:
            raise FormatError(f"{name} mask contains non-binary values {bad.tolist()}")
    if sample_id is None:
        digits = re.findall(r"\d+", Path(path).stem)
        sample_id = int(digits[-1]) if digits else 0
    return Sample(image=image, scar=scar, myo=myo, difficulty=difficulty, sample_id=sample_id)


def sample_filename(sample_id: int) -> str:
    return f"s{sample_id:05d}.lges"


def save_dataset(ds: Dataset, directory) -> Path:
    """Write sample files plus the manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [MANIFEST_HEADER]
    for s in ds.samples:
        name = sample_filename(s.sample_id)
        write_sample(s, directory / name)
        lines.append(f"{name}\t{s.difficulty}")
    manifest = directory / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n")
    ds.manifest_path = manifest
    return manifest


def load_dataset(directory) -> Dataset:
    """Read a dataset via its manifest; ids are assigned by manifest order."""
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise FormatError(f"no {MANIFEST_NAME} in {directory}")
    lines = manifest.read_text().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        got = lines[0] if lines else "<empty file>"
        raise FormatError(f"manifest line 1: expected {MANIFEST_HEADER!r}, got {got!r}")
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"manifest line {lineno}: expected 'path<TAB>difficulty'")
        rel, diff_text = parts
        try:
            difficulty = int(diff_text)
        except ValueError:
            raise FormatError(f"manifest line {lineno}: difficulty {diff_text!r} is not an integer")
        sample = read_sample(directory / rel, sample_id=len(samples))
        if sample.difficulty != difficulty:
            raise FormatError(
                f"manifest line {lineno}: difficulty {difficulty} does not match "
                f"{sample.difficulty} stored in {rel}"
            )
        samples.append(sample)
    if not samples:
        raise FormatError("manifest lists no samples")
    return Dataset(samples, manifest_path=manifest)
