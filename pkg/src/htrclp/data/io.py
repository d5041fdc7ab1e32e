"""On-disk datasets: ``manifest.tsv`` plus ``lines/*.pgm``.

Manifest rows are ``<image-filename>\\t<transcript>`` in UTF-8 with LF line
endings; filenames are relative to the ``lines/`` directory.  An optional
``charset.json`` declares the allowed characters.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .dataset import Charset, Dataset, LabeledLine, build_charset, nfkd

MANIFEST = "manifest.tsv"
CHARSET = "charset.json"
LINES_DIR = "lines"


class DatasetLoadError(ValueError):
    """Collects every problem found while loading a dataset directory."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def write_pgm(path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] as binary 8-bit PGM (P5)."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5, maxval <= 255) into float32 in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM is not supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos) if len(raw) - pos >= w * h else None
    if data is None:
        raise ValueError(f"{path}: expected {w * h} pixel bytes")
    return (data.reshape(h, w).astype(np.float32) / np.float32(maxval)).astype(np.float32)


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / np.float32(255)


def resize_to_height(image: np.ndarray, height: int) -> np.ndarray:
    """Aspect-preserving bilinear resize, re-quantized to 8-bit levels."""
    h, w = image.shape
    if h == height:
        return image
    from PIL import Image

    new_w = max(1, int(round(w * height / h)))
    im = Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))
    out = im.resize((new_w, height), Image.BILINEAR)
    return np.asarray(out, dtype=np.float32) / np.float32(255)


def _check_name(fname: str) -> bool:
    return fname and "/" not in fname and "\\" not in fname and fname not in (".", "..")


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    (path / LINES_DIR).mkdir(parents=True, exist_ok=True)
    rows = []
    for line in dataset:
        if "\t" in line.text or "\n" in line.text:
            raise ValueError(f"line {line.id}: transcript contains a tab or newline")
        fname = f"{line.id}.pgm"
        if not _check_name(fname):
            raise ValueError(f"line id {line.id!r} is not usable as a filename")
        write_pgm(path / LINES_DIR / fname, line.image)
        rows.append(f"{fname}\t{line.text}\n")
    with open(path / MANIFEST, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(rows)
    with open(path / CHARSET, "w", encoding="utf-8", newline="\n") as f:
        json.dump(list(dataset.charset.chars), f, ensure_ascii=False)
        f.write("\n")


def load_dataset(path, height: int | None = None, charset: Charset | None = None) -> Dataset:
    """Load a dataset directory; every problem is reported in one :class:`DatasetLoadError`.

    Transcripts are NFKD-normalized and images are resized to ``height``
    (default: the height of the first image).  The charset is ``charset``,
    else the directory's ``charset.json``, else built from the transcripts.
    """
    path = Path(path)
    manifest = path / MANIFEST
    if not manifest.is_file():
        raise DatasetLoadError([f"{manifest}: manifest not found"])
    if charset is None and (path / CHARSET).is_file():
        declared = json.loads((path / CHARSET).read_text(encoding="utf-8"))
        charset = Charset(tuple(sorted({c for ch in declared for c in nfkd(ch)})))
    problems, entries = [], []
    text = manifest.read_text(encoding="utf-8")
    for lineno, row in enumerate(text.split("\n"), 1):
        if row == "":
            continue
        fields = row.split("\t")
        if len(fields) != 2:
            problems.append(f"{manifest}:{lineno}: expected 2 tab-separated fields, got {len(fields)}")
            continue
        fname, transcript = fields
        transcript = nfkd(transcript)
        image_path = path / LINES_DIR / fname
        if not _check_name(fname) or not image_path.is_file():
            problems.append(f"{manifest}:{lineno}: missing image {fname!r}")
            continue
        if charset is not None and charset.missing(transcript):
            problems.append(f"{manifest}:{lineno}: characters {charset.missing(transcript)} "
                            f"outside the declared charset")
            continue
        try:
            image = read_image(image_path)
        except (OSError, ValueError) as exc:
            problems.append(f"{manifest}:{lineno}: unreadable image {fname!r} ({exc})")
            continue
        entries.append((os.path.splitext(fname)[0], image, transcript))
    if problems:
        raise DatasetLoadError(problems)
    if not entries:
        raise DatasetLoadError([f"{manifest}: no samples"])
    if height is None:
        height = entries[0][1].shape[0]
    lines = [LabeledLine(i, resize_to_height(img, height), t) for i, img, t in entries]
    if charset is None:
        charset = build_charset([t for _, _, t in entries])
    return Dataset(tuple(lines), charset, height)
