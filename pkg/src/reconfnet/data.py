"""Video preprocessing, on-disk containers, manifests and synthetic activities.

Frames are (channels, T, H, W) float arrays with channel 0 gray and channel 1
depth, both in [0, 1].
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import FormatError
from .latent import LatentVars, validate
from .network import ModelConfig

RAW_FRAMES = 120
ANCHOR_STRIDE = 4

SAMPLE_MAGIC = b"RGBD"
SAMPLE_VERSION = 1
_SAMPLE_HEADER = struct.Struct("<4sHBBHHHH")


@dataclass
class VideoSample:
    frames: np.ndarray          # (channels, A, H, W)
    label: int                  # 1-based class index
    subject_id: int = 0
    latent: Optional[LatentVars] = None   # ground truth, synthetic data only
    path: Optional[str] = None


# ---------------------------------------------------------------------------
# preprocessing

def _gray_diffs(gray, order):
    g = gray[order]
    return np.abs(g[1:] - g[:-1]).mean(axis=(1, 2))


def normalize_frames(raw, target=RAW_FRAMES) -> np.ndarray:
    """Bring a (channels, T, H, W) video to exactly ``target`` frames.

    Longer videos lose, one at a time, the frame whose mean absolute gray
    difference to its current predecessor is smallest (never the first frame;
    ties go to the earliest). Shorter videos repeat their last frame.
    """
    raw = np.asarray(raw)
    T = raw.shape[1]
    if T == target:
        return raw.copy()
    if T < target:
        pad = np.repeat(raw[:, -1:], target - T, axis=1)
        return np.concatenate([raw, pad], axis=1)
    gray = raw[0].astype(np.float64)
    keep = list(range(T))
    # diffs[k] belongs to keep[k + 1]
    diffs = list(_gray_diffs(gray, keep))
    while len(keep) > target:
        k = int(np.argmin(diffs))
        del keep[k + 1]
        del diffs[k]
        if k + 1 < len(keep):
            diffs[k] = float(np.abs(gray[keep[k + 1]] - gray[keep[k]]).mean())
    return raw[:, keep].copy()


def select_anchors(frames, stride=ANCHOR_STRIDE, expected=RAW_FRAMES) -> np.ndarray:
    """Every ``stride``-th frame starting at the first: 1-based 1, 5, ..., 117."""
    frames = np.asarray(frames)
    if frames.shape[1] != expected:
        raise ValueError(f"anchor selection needs {expected} frames, got {frames.shape[1]}")
    return frames[:, ::stride].copy()


def resize(frame, size=(60, 80)) -> np.ndarray:
    """Bilinear resize of one (H, W) plane to ``size`` (height, width).

    Pixel centres are aligned (half-pixel convention) and samples past the
    border clamp to the edge, so outputs stay inside the input's value range.
    """
    frame = np.asarray(frame)
    H, W = frame.shape
    h, w = size
    if (H, W) == (h, w):
        return frame.copy()

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(H, h)
    x0, x1, fx = axis(W, w)
    f = frame.astype(np.float64)
    top = f[y0][:, x0] * (1 - fx) + f[y0][:, x1] * fx
    bot = f[y1][:, x0] * (1 - fx) + f[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return out.astype(frame.dtype if frame.dtype.kind == "f" else np.float64)


def resize_video(frames, size) -> np.ndarray:
    C, T = frames.shape[:2]
    out = np.empty((C, T) + tuple(size), dtype=np.float32)
    for c in range(C):
        for t in range(T):
            out[c, t] = resize(frames[c, t], size)
    return out


def preprocess_video(raw, size=(60, 80)) -> np.ndarray:
    """Raw (channels, T, H, W) -> (channels, 30, h, w) anchor frames.

    Input that already has the anchor count and target size passes through
    unchanged, so preprocessing is idempotent.
    """
    raw = np.asarray(raw)
    if raw.shape[1] == RAW_FRAMES // ANCHOR_STRIDE and raw.shape[2:] == tuple(size):
        return raw.astype(np.float32)
    return resize_video(select_anchors(normalize_frames(raw)), size)


# ---------------------------------------------------------------------------
# sample container

def write_sample(path, sample: VideoSample):
    frames = np.asarray(sample.frames, dtype="<f4")
    C, A, H, W = frames.shape
    header = _SAMPLE_HEADER.pack(SAMPLE_MAGIC, SAMPLE_VERSION, C, A, H, W,
                                 int(sample.label), int(sample.subject_id))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes(order="C"))


def read_sample(path) -> VideoSample:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _SAMPLE_HEADER.size:
        raise FormatError(f"{path}: truncated header", len(buf))
    magic, version, C, A, H, W, label, subject = _SAMPLE_HEADER.unpack_from(buf)
    if magic != SAMPLE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", 0)
    if version != SAMPLE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    n = C * A * H * W
    expected = _SAMPLE_HEADER.size + 4 * n
    if len(buf) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(buf)}",
                          min(len(buf), expected))
    frames = np.frombuffer(buf, dtype="<f4", count=n, offset=_SAMPLE_HEADER.size)
    frames = frames.astype(np.float32).reshape(C, A, H, W)
    return VideoSample(frames, label, subject, path=str(path))


# ---------------------------------------------------------------------------
# manifest

@dataclass
class ManifestEntry:
    path: str
    label: int
    subject: int
    fold: int = 0


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    class_names: List[str] = field(default_factory=list)
    A: int = 30
    frame_h: int = 60
    frame_w: int = 80
    channels: int = 2

    @property
    def folds(self) -> List[int]:
        return sorted({e.fold for e in self.entries})

    def write(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# classes={'|'.join(self.class_names)}\n")
            fh.write(f"# A={self.A} frame_h={self.frame_h} frame_w={self.frame_w} "
                     f"channels={self.channels}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "label", "subject", "fold"])
            for e in self.entries:
                w.writerow([e.path, e.label, e.subject, e.fold])

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        meta, body = {}, []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    for tok in line[1:].split():
                        k, _, v = tok.partition("=")
                        meta[k] = v
                elif line.strip():
                    body.append(line)
        rows = list(csv.DictReader(io.StringIO("".join(body))))
        if not body or body[0].strip().split(",") != ["path", "label", "subject", "fold"]:
            raise FormatError(f"{path}: manifest header must be path,label,subject,fold")
        entries = [ManifestEntry(r["path"], int(r["label"]), int(r["subject"]), int(r["fold"] or 0))
                   for r in rows]
        names = meta.get("classes", "")
        return cls(entries, names.split("|") if names else [],
                   int(meta.get("A", 30)), int(meta.get("frame_h", 60)),
                   int(meta.get("frame_w", 80)), int(meta.get("channels", 2)))


def load_dataset(manifest_path):
    """Read a manifest and every sample it lists (paths relative to the manifest)."""
    manifest = DatasetManifest.read(manifest_path)
    root = Path(manifest_path).parent
    samples = []
    for e in manifest.entries:
        s = read_sample(root / e.path)
        s.label, s.subject_id, s.path = e.label, e.subject, e.path
        samples.append(s)
    return samples, manifest


def save_dataset(out_dir, samples: Sequence[VideoSample], manifest: DatasetManifest,
                 name="manifest.csv"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for s, e in zip(samples, manifest.entries):
        write_sample(out_dir / e.path, s)
    manifest.write(out_dir / name)
    return out_dir / name


def fold_split(manifest: DatasetManifest, folds: int, seed: int = 0) -> DatasetManifest:
    """Assign whole subjects to folds; fold sizes (in subjects) differ by at most one."""
    subjects = sorted({e.subject for e in manifest.entries})
    if folds < 1 or len(subjects) < folds:
        raise ValueError(f"cannot split {len(subjects)} subjects into {folds} folds")
    order = np.random.default_rng(seed).permutation(len(subjects))
    fold_of = {subjects[j]: pos % folds + 1 for pos, j in enumerate(order)}
    entries = [replace(e, fold=fold_of[e.subject]) for e in manifest.entries]
    return replace(manifest, entries=entries)


# ---------------------------------------------------------------------------
# raw ingestion

def _load_plane(path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    from PIL import Image
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P"):
            im = im.convert("L")
        return np.asarray(im)


def _load_planes(d):
    files = sorted(p for p in Path(d).iterdir() if p.is_file())
    if not files:
        raise FileNotFoundError(f"no frame planes in {d}")
    return np.stack([_load_plane(p) for p in files])


def _scale_gray(g):
    if g.dtype == np.uint8:
        return g.astype(np.float32) / 255.0
    if g.dtype == np.uint16:
        return g.astype(np.float32) / 65535.0
    return np.clip(g.astype(np.float32), 0.0, 1.0)


def _scale_depth(d):
    d = d.astype(np.float32)
    top = d.max()
    return d / top if top > 0 else np.zeros_like(d)


def read_raw_video(video_dir) -> np.ndarray:
    """Load ``gray/`` and ``depth/`` plane directories into (2, T, H, W).

    Gray is scaled by its integer range; depth is divided by the video's
    maximum depth.
    """
    gray = _scale_gray(_load_planes(Path(video_dir) / "gray"))
    depth = _scale_depth(_load_planes(Path(video_dir) / "depth"))
    if gray.shape != depth.shape:
        raise FormatError(f"{video_dir}: gray {gray.shape} and depth {depth.shape} differ")
    return np.stack([gray, depth])


def ingest_directory(raw_root, out_dir, size=(60, 80), folds=1, seed=0) -> DatasetManifest:
    """Preprocess ``raw_root/<video>/{gray,depth}`` listed in ``raw_root/labels.csv``.

    ``labels.csv`` has columns ``video,label,subject``.
    """
    raw_root, out_dir = Path(raw_root), Path(out_dir)
    with open(raw_root / "labels.csv") as fh:
        rows = list(csv.DictReader(fh))
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in rows:
        frames = preprocess_video(read_raw_video(raw_root / r["video"]), size)
        name = f"{r['video']}.rgbd"
        write_sample(out_dir / name, VideoSample(frames, int(r["label"]), int(r["subject"])))
        entries.append(ManifestEntry(name, int(r["label"]), int(r["subject"])))
    manifest = DatasetManifest(entries, [], RAW_FRAMES // ANCHOR_STRIDE, size[0], size[1], 2)
    manifest = fold_split(manifest, folds, seed)
    manifest.write(out_dir / "manifest.csv")
    return manifest


# ---------------------------------------------------------------------------
# synthetic activities

def class_motifs(K: int, M: int, seed: int = 0):
    """Per class, an ordered list of M (angle, speed, depth_rate) motifs.

    Directions come from eight compass points. Consecutive classes are three
    points apart and consecutive slots two points apart, so several classes
    reuse the same motifs in a different slot order and only the order tells
    them apart. Classes beyond the eighth move more slowly. Depth drifts
    towards or away from the camera with a class- and slot-dependent sign.
    """
    offset = int(np.random.default_rng([seed, 1]).permutation(8)[0])
    out = []
    for k in range(K):
        speed = 1.0 / (1 + k // 8)
        row = []
        for i in range(M):
            angle = 2 * np.pi * ((3 * k + 2 * i + offset) % 8) / 8
            rate = 0.04 if (k + i) % 2 else -0.04
            row.append((float(angle), speed, rate))
        out.append(row)
    return out


def random_segmentation(rng, A, M, tau, m) -> LatentVars:
    """Random durations in [tau, m] with random slack spread over the gaps."""
    if M * tau > A:
        raise ValueError("video too short for the requested segmentation")
    while True:
        d = rng.integers(tau, m + 1, size=M)
        if d.sum() <= A:
            break
    slack = A - int(d.sum())
    gaps = rng.multinomial(slack, np.ones(M + 1) / (M + 1))
    starts, pos = [], 1
    for i in range(M):
        pos += int(gaps[i])
        starts.append(pos)
        pos += int(d[i])
    return LatentVars(tuple(starts), tuple(int(v) for v in d))


def render_activity(motifs, H: LatentVars, A, size, channels=2, rng=None, noise=0.05):
    """Draw a Gaussian blob for every window of ``H``; frames outside windows are empty.

    Within window i the blob starts at the frame centre and moves along motif
    i. Gray is blob brightness; depth is blob nearness (1 - distance), so the
    empty background reads as 0 in both channels.
    """
    h, w = size
    speed_px = 0.045 * w
    sigma = 0.12 * min(h, w)
    centre = np.array([h / 2.0, w / 2.0])
    lo, hi = np.array([sigma, sigma]), np.array([h - 1 - sigma, w - 1 - sigma])
    yy, xx = np.mgrid[0:h, 0:w]
    frames = np.zeros((channels, A, h, w), dtype=np.float32)
    for i, (s, t) in enumerate(H.windows()):
        angle, speed, rate = motifs[i]
        step = speed * speed_px * np.array([np.sin(angle), np.cos(angle)])
        for k in range(t):
            pos = np.clip(centre + k * step, lo, hi)
            z = 0.45 + rate * (k - (t - 1) / 2)
            g = np.exp(-((yy - pos[0]) ** 2 + (xx - pos[1]) ** 2) / (2 * sigma ** 2))
            frames[0, s - 1 + k] = 0.9 * g
            if channels == 2:
                frames[1, s - 1 + k] = (1.0 - z) * g
    if noise and rng is not None:
        frames += rng.normal(0.0, noise, size=frames.shape).astype(np.float32)
    return np.clip(frames, 0.0, 1.0)


def synth_generate(seed, K, n_per_class, config: ModelConfig, n_subjects=4, noise=0.05,
                   channels=None, fixed_segmentation: Optional[LatentVars] = None,
                   motif_seed: int = 0):
    """Synthetic activity videos with known segmentation.

    Returns ``(samples, manifest)``; samples are ordered class-interleaved and
    subjects are assigned round-robin. Each sample's ``latent`` holds the
    segmentation used to render it. ``seed`` drives boundaries and noise;
    the class definitions come from ``motif_seed`` so that datasets drawn
    with different seeds share the same classes.
    """
    if K < 2:
        raise ValueError("need at least two classes")
    channels = config.channels if channels is None else channels
    motifs = class_motifs(K, config.M, motif_seed)
    rng = np.random.default_rng(seed)
    samples, entries = [], []
    for j in range(K * n_per_class):
        label = j % K + 1
        H = fixed_segmentation or random_segmentation(rng, config.A, config.M, config.tau, config.m)
        ok, why = validate(H, config.A, config.M, config.tau, config.m)
        if not ok:
            raise ValueError(f"generated segmentation invalid: {why}")
        frames = render_activity(motifs[label - 1], H, config.A,
                                 (config.frame_h, config.frame_w), channels, rng, noise)
        subject = j % n_subjects + 1
        name = f"sample_{j:04d}.rgbd"
        samples.append(VideoSample(frames, label, subject, latent=H, path=name))
        entries.append(ManifestEntry(name, label, subject))
    manifest = DatasetManifest(entries, [f"class{k + 1}" for k in range(K)], config.A,
                               config.frame_h, config.frame_w, channels)
    return samples, manifest
