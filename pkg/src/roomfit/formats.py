"""Low-level file format readers/writers: PGM, RLE-JSON segments, label PNG.

All formats are pinned in FORMATS.md at the repository root. Readers fail
closed: malformed input raises ParseError with location context and nothing
partial is returned.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatVersionError, ParseError

SCHEMA_VERSION = 1


def write_pgm16(path: Path, values01: np.ndarray) -> None:
    """16-bit big-endian binary PGM (P5, maxval 65535) of values in [0, 1]."""
    arr = np.round(np.clip(values01, 0.0, 1.0) * 65535.0).astype(">u2")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def write_pgm8(path: Path, values: np.ndarray) -> None:
    """8-bit debug PGM; values scaled so the maximum maps to 255."""
    v = np.asarray(values, dtype=np.float64)
    peak = v.max() if v.size and v.max() > 0 else 1.0
    arr = np.round(np.clip(v / peak, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    """Parse a binary PGM into floats in [0, 1] (any maxval, 8- or 16-bit)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read file: {exc}") from exc

    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos : pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        if pos >= len(raw):
            raise ParseError(f"{path}: truncated header at byte {pos}")
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        return raw[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise ParseError(f"{path}: not a binary PGM (magic {magic!r} at byte 0)")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise ParseError(f"{path}: bad header field near byte {pos}: {exc}") from exc
    if width <= 0 or height <= 0 or not (0 < maxval < 65536):
        raise ParseError(f"{path}: invalid dimensions/maxval {width}x{height}/{maxval}")
    pos += 1  # single whitespace byte after maxval
    bytes_per = 2 if maxval > 255 else 1
    expected = width * height * bytes_per
    payload = raw[pos : pos + expected]
    if len(payload) != expected:
        raise ParseError(
            f"{path}: truncated payload, expected {expected} bytes after byte {pos}, "
            f"got {len(payload)}"
        )
    dtype = ">u2" if bytes_per == 2 else np.uint8
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return arr.astype(np.float64) / float(maxval)


def _check_version(doc: dict, path: Path) -> None:
    version = doc.get("schema_version")
    if version is None:
        raise ParseError(f"{path}: missing schema_version field")
    if version != SCHEMA_VERSION:
        raise FormatVersionError(
            f"{path}: schema_version {version} unsupported (expected {SCHEMA_VERSION})"
        )


def read_json_doc(path: Path, required_keys: set[str], optional_keys: set[str] = frozenset()) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read file: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object at top level")
    _check_version(doc, path)
    keys = set(doc.keys())
    missing = required_keys - keys
    if missing:
        raise ParseError(f"{path}: missing keys {sorted(missing)}")
    unknown = keys - required_keys - optional_keys - {"schema_version"}
    if unknown:
        raise ParseError(f"{path}: unknown keys {sorted(unknown)}")
    return doc


def dump_json(path: Path, doc: dict) -> None:
    """Canonical JSON: sorted keys, compact separators, trailing newline.

    Identical inputs serialize to identical bytes, which the reproducibility
    guarantees rely on.
    """
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def mask_to_rle(grid: np.ndarray) -> list[int]:
    """Row-major [start, length, start, length, ...] runs of set pixels."""
    flat = np.asarray(grid, dtype=bool).ravel()
    padded = np.concatenate([[False], flat, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts = edges[0::2]
    lengths = edges[1::2] - starts
    out: list[int] = []
    for s, ln in zip(starts, lengths):
        out.append(int(s))
        out.append(int(ln))
    return out


def rle_to_mask(rle: list[int], shape: tuple[int, int], path: Path, index: int) -> np.ndarray:
    if len(rle) % 2 != 0:
        raise ParseError(f"{path}: segment {index}: rle has odd length {len(rle)}")
    flat = np.zeros(shape[0] * shape[1], dtype=bool)
    for k in range(0, len(rle), 2):
        start, length = rle[k], rle[k + 1]
        if start < 0 or length <= 0 or start + length > flat.size:
            raise ParseError(
                f"{path}: segment {index}: run ({start}, {length}) outside {shape} grid"
            )
        flat[start : start + length] = True
    return flat.reshape(shape)


def write_label_png(path: Path, labels: np.ndarray) -> None:
    """16-bit grayscale PNG where value k > 0 marks segment k."""
    arr = np.asarray(labels)
    if arr.max(initial=0) > 65535:
        raise ValueError("more than 65535 segments cannot be stored in a label PNG")
    img = Image.fromarray(arr.astype(np.uint16))
    img.save(path, format="PNG")


def read_label_png(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        img = Image.open(path)
        arr = np.array(img)
    except Exception as exc:
        raise ParseError(f"{path}: cannot decode label PNG: {exc}") from exc
    if arr.ndim != 2:
        raise ParseError(f"{path}: label PNG must be single-channel, got shape {arr.shape}")
    return arr.astype(np.int64)
