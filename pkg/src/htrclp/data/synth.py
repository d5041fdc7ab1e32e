"""Synthetic handwriting-like line images with exact ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..rng import substream
from .dataset import Charset, Dataset, LabeledLine
from .glyphs import LETTERS, atlas

EM = 0.62          # em size as a fraction of the line height
GAP = 0.25         # inter-glyph gap in em
MARGIN = 4         # horizontal margin in px

WORDS = """
the of and to in is was that for on are with as his they be at one have this from
or had by word but what some we can out other were all there when up use your how
said an each she which do their time if will way about many then them write would
like so these her long make thing see him two has look more day could go come did
number sound no most people my over know water than call first who may down side
been now find any new work part take get place made live where after back little
only round man year came show every good me give our under name very through just
form sentence great think say help low line differ turn cause much mean before move
right boy old too same tell does set three want air well also play small end put
home read hand port large spell add even land here must big high such follow act
why ask men change went light kind off need house picture try us again animal point
mother world near build self earth father head stand own page should country found
answer school grow study still learn plant cover food sun four between state keep
eye never last let thought city tree cross farm hard start might story saw far sea
draw left late run while press close night real life few north open seem together
""".split()


class SynthError(ValueError):
    """The generator cannot render the requested text."""


@dataclass(frozen=True)
class HandParams:
    """Per-line rendering perturbations; all zeros gives a deterministic rendering."""

    slant_deg: float = 0.0
    thickness: float = 1.8
    spacing_jitter: float = 0.0    # px, std of each glyph's horizontal offset
    baseline_wobble: float = 0.0   # px, amplitude of a slow vertical sinusoid
    ink_noise: float = 0.0         # std of additive pixel noise
    slant_jitter: float = 0.0      # deg, per-line std around slant_deg
    thickness_jitter: float = 0.0  # px, per-line half-range around thickness
    scale_jitter: float = 0.0      # per-line relative std of the glyph size


HANDS = {
    "plain": HandParams(),
    "A": HandParams(slant_deg=0.0, thickness=1.7, spacing_jitter=0.6, baseline_wobble=0.8,
                    ink_noise=0.03, slant_jitter=4.0, thickness_jitter=0.3, scale_jitter=0.04),
    "B": HandParams(slant_deg=16.0, thickness=2.5, spacing_jitter=0.9, baseline_wobble=1.2,
                    ink_noise=0.05, slant_jitter=4.0, thickness_jitter=0.4, scale_jitter=0.05),
}


@dataclass(frozen=True)
class TextSource:
    """``uniform`` draws random letter strings split into short words;
    ``words`` samples from a built-in English word list."""

    kind: str = "uniform"
    min_chars: int = 8
    max_chars: int = 16
    seed: int = 0
    alphabet: str = LETTERS

    def __post_init__(self):
        if self.kind not in ("uniform", "words"):
            raise ValueError(f"unknown text source kind {self.kind!r}")
        if not 1 <= self.min_chars <= self.max_chars:
            raise ValueError("need 1 <= min_chars <= max_chars")

    def line(self, i: int) -> str:
        rng = substream(self.seed, "text", i)
        n = int(rng.integers(self.min_chars, self.max_chars + 1))
        parts, total = [], 0
        while total < n:
            if self.kind == "uniform":
                k = int(rng.integers(2, 8))
                w = "".join(self.alphabet[j] for j in rng.integers(0, len(self.alphabet), size=k))
            else:
                w = WORDS[int(rng.integers(0, len(WORDS)))]
            parts.append(w)
            total += len(w) + 1
        return " ".join(parts)[:n].strip()


@dataclass(frozen=True)
class SynthSpec:
    atlas: str = "A"
    hand: HandParams = field(default_factory=HandParams)
    text: TextSource = field(default_factory=TextSource)
    n_lines: int = 100
    seed: int = 0
    height: int = 32
    id_prefix: str = "line"
    charset: str | None = None   # defaults to every glyph of the atlas


def _segments(points: np.ndarray) -> np.ndarray:
    if len(points) == 1:
        return np.stack([points, points], axis=1)
    return np.stack([points[:-1], points[1:]], axis=1)


def _stamp(ink: np.ndarray, segs: np.ndarray, thickness: float) -> None:
    """Max-composite anti-aliased strokes along ``segs`` (M, 2, 2) in px (x, y)."""
    pad = thickness / 2 + 1.5
    x0 = max(int(math.floor(segs[..., 0].min() - pad)), 0)
    x1 = min(int(math.ceil(segs[..., 0].max() + pad)), ink.shape[1])
    y0 = max(int(math.floor(segs[..., 1].min() - pad)), 0)
    y1 = min(int(math.ceil(segs[..., 1].max() + pad)), ink.shape[0])
    if x1 <= x0 or y1 <= y0:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    p = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)[:, None, :]
    a, b = segs[None, :, 0], segs[None, :, 1]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-12)
    t = np.clip(np.sum((p - a) * ab, axis=-1) / denom, 0.0, 1.0)
    d = np.linalg.norm(p - (a + t[..., None] * ab), axis=-1).min(axis=1)
    cov = np.clip(thickness / 2 + 0.5 - d, 0.0, 1.0).reshape(y1 - y0, x1 - x0)
    np.maximum(ink[y0:y1, x0:x1], cov, out=ink[y0:y1, x0:x1])


def render_line(text: str, atlas_name: str, hand: HandParams, height: int,
                rng: np.random.Generator) -> np.ndarray:
    """Render ``text`` as a float32 (height, W) image, 1.0 background, 8-bit levels."""
    glyphs = atlas(atlas_name)
    for c in text:
        if c not in glyphs:
            raise SynthError(f"character {c!r} has no glyph in atlas {atlas_name!r}")
    # fixed draw order so zero-valued parameters leave the result unchanged
    slant = math.radians(hand.slant_deg + hand.slant_jitter * rng.standard_normal())
    thick = hand.thickness + hand.thickness_jitter * rng.uniform(-1, 1)
    scale = 1.0 + hand.scale_jitter * rng.standard_normal()
    period = rng.uniform(60, 140)
    phase = rng.uniform(0, 2 * math.pi)
    jitter = rng.standard_normal(len(text)) * hand.spacing_jitter
    s = EM * height * scale
    baseline = height / 2 + 0.30 * s
    shear = math.tan(slant)
    pen = MARGIN + max(0.0, 0.32 * s * shear)
    pieces = []
    for c, dx in zip(text, jitter):
        adv, strokes = glyphs[c]
        for st in strokes:
            x = pen + dx + st[:, 0] * s + st[:, 1] * s * shear
            wob = hand.baseline_wobble * math.sin(2 * math.pi * (pen / period) + phase)
            y = baseline + wob - st[:, 1] * s
            pieces.append(_segments(np.stack([x, y], axis=1)))
        pen += (adv + GAP) * s
    right = pen - GAP * s
    if pieces:
        right = max(right, max(p[..., 0].max() for p in pieces))
    width = int(math.ceil(right + thick / 2 + MARGIN))
    ink = np.zeros((height, width), dtype=np.float64)
    for segs in pieces:
        _stamp(ink, segs, thick)
    img = 1.0 - ink
    noise = rng.standard_normal(img.shape) * hand.ink_noise
    img = np.clip(img + noise, 0.0, 1.0)
    return (np.round(img * 255) / 255).astype(np.float32)


def synth_generate(spec: SynthSpec) -> Dataset:
    """Render ``spec.n_lines`` lines; transcripts depend only on ``spec.text``."""
    glyphs = atlas(spec.atlas)
    chars = spec.charset if spec.charset is not None else "".join(sorted(glyphs))
    missing = sorted(set(chars) - set(glyphs))
    if missing:
        raise SynthError(f"character {missing[0]!r} has no glyph in atlas {spec.atlas!r}")
    charset = Charset(tuple(sorted(set(chars))))
    lines = []
    for i in range(spec.n_lines):
        text = spec.text.line(i)
        bad = charset.missing(text)
        if bad:
            raise SynthError(f"character {bad[0]!r} is outside the requested charset")
        img = render_line(text, spec.atlas, spec.hand, spec.height, substream(spec.seed, "render", i))
        lines.append(LabeledLine(f"{spec.id_prefix}{i:05d}", img, text))
    return Dataset(tuple(lines), charset, spec.height)
