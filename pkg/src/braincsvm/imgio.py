"""Reading and writing 8-bit grayscale PGM (P5) and PNG files."""
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError
from .imgcore import as_gray

IMAGE_SUFFIXES = (".pgm", ".png")


def _pgm_tokens(data, count):
    # Header tokens are whitespace separated and may be interleaved with comments.
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("truncated or malformed PGM header")
        tokens.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("malformed PGM header")
    return tokens, pos + 1


def read_pgm(path):
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    (width, height, maxval), offset = _pgm_tokens(data, 3)
    if width < 1 or height < 1:
        raise FormatError(f"{path}: invalid dimensions {width}x{height}")
    if maxval > 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    raster = data[offset:offset + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{path}: raster is truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, img):
    img = as_gray(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_png(path):
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise FormatError(f"{path}: not a PNG file")
            if im.mode not in ("L", "1"):
                raise FormatError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode}")
            return np.array(im.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_png(path, img):
    Image.fromarray(as_gray(img), mode="L").save(path, format="PNG")


def read_image(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    raise FormatError(f"{path}: unsupported image type {suffix!r}")


def write_image(path, img):
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, img)
    elif suffix == ".png":
        write_png(path, img)
    else:
        raise FormatError(f"{path}: unsupported image type {suffix!r}")


def list_images(directory):
    """Image files directly inside ``directory`` in lexicographic order."""
    return sorted(p for p in Path(directory).iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
