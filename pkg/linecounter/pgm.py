"""
PGM/PPM and dataset manifest I/O.

Images are 8-bit binary PGM (P5, maxval 255). Line maps are 16-bit binary PGM
(P5, maxval 65535, big-endian samples) whose pixel value is the line label.
Visualizations are 8-bit binary PPM (P6). A manifest is a JSON list of
{"image_path", "linemap_path"} objects; relative paths are resolved against the
manifest's own directory.
"""
import json
import os

import numpy as np

from linecounter.errors import FormatError, ManifestError
from linecounter.linemap import LABEL_DTYPE, checkPair, renumberLabels

IMAGE_MAXVAL = 255
LINEMAP_MAXVAL = 65535


def writePgm(path, array, maxval):
    array = np.asarray(array)
    if array.ndim != 2:
        raise FormatError(f"PGM needs a 2-D array, got shape {array.shape}", field="shape")
    if maxval not in (IMAGE_MAXVAL, LINEMAP_MAXVAL):
        raise FormatError(f"Unsupported maxval {maxval}", field="maxval")
    if array.size and (array.min() < 0 or array.max() > maxval):
        raise FormatError(f"Sample values must lie in [0, {maxval}], got [{array.min()}, {array.max()}]", field="sample")

    height, width = array.shape
    dtype = ">u1" if maxval == IMAGE_MAXVAL else ">u2"
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        f.write(array.astype(dtype).tobytes())


def writePpm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError(f"PPM needs an [H, W, 3] array, got shape {rgb.shape}", field="shape")
    height, width, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def readPgm(path):
    """
    Read a binary PGM.

    Returns:
        tuple: (array, maxval) with uint8 samples for maxval <= 255, uint16 otherwise.
    """
    with open(path, "rb") as f:
        raw = f.read()

    fields, offset = _parseHeader(raw, path, count=4)
    magic, width, height, maxval = fields
    if magic != "P5":
        raise FormatError(f"{path}: expected magic 'P5', got {magic!r}", field="magic")
    width = _headerInt(width, "width", path)
    height = _headerInt(height, "height", path)
    maxval = _headerInt(maxval, "maxval", path)
    if not 0 < maxval <= LINEMAP_MAXVAL:
        raise FormatError(f"{path}: maxval {maxval} outside 1..65535", field="maxval")

    dtype = ">u1" if maxval <= 255 else ">u2"
    expected = width * height * np.dtype(dtype).itemsize
    payload = raw[offset:offset + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} bytes of samples, found {len(payload)}", field="data")
    array = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return array.astype(np.uint8 if maxval <= 255 else np.uint16), maxval


def writeImage(path, image):
    """Quantize a [0, 1] page to 8 bits and write it."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    writePgm(path, np.rint(image * IMAGE_MAXVAL).astype(np.uint8), IMAGE_MAXVAL)


def readImage(path):
    samples, maxval = readPgm(path)
    return (samples.astype(np.float32) / maxval).astype(np.float32)


def writeLineMap(path, linemap):
    linemap = np.asarray(linemap)
    if linemap.size and linemap.max() > LINEMAP_MAXVAL:
        raise FormatError(f"Label {linemap.max()} exceeds the 16-bit limit {LINEMAP_MAXVAL}", field="label")
    writePgm(path, linemap, LINEMAP_MAXVAL)


def readLineMap(path, renumber=True):
    samples, _ = readPgm(path)
    linemap = samples.astype(LABEL_DTYPE)
    return renumberLabels(linemap) if renumber else linemap


# ---------------------------- Manifest ---------------------------- #


def writeManifest(path, entries):
    """
    Args:
        path (str): Manifest file to write.
        entries (list[dict]): {"image_path", "linemap_path"} pairs, relative to the manifest directory.
    """
    with open(path, "w") as f:
        json.dump([{"image_path": e["image_path"], "linemap_path": e["linemap_path"]} for e in entries], f, indent=2)


def readManifest(path):
    try:
        with open(path, "r") as f:
            entries = json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: not valid JSON ({e})") from None

    if not isinstance(entries, list):
        raise ManifestError(f"{path}: manifest must be a JSON list")
    base = os.path.dirname(os.path.abspath(path))
    resolved = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "image_path" not in entry or "linemap_path" not in entry:
            raise ManifestError(f"{path}: entry {i} needs image_path and linemap_path")
        resolved.append({
            "image_path": os.path.join(base, entry["image_path"]),
            "linemap_path": os.path.join(base, entry["linemap_path"]),
        })
    return resolved


def loadPairs(manifest_path):
    """Read every (image, line map) pair of a manifest, checking that their sizes agree."""
    pairs = []
    for entry in readManifest(manifest_path):
        image = readImage(entry["image_path"])
        linemap = readLineMap(entry["linemap_path"])
        try:
            checkPair(image, linemap)
        except ValueError:
            raise ManifestError(
                f"{manifest_path}: {entry['image_path']} is {image.shape[1]}x{image.shape[0]} but "
                f"{entry['linemap_path']} is {linemap.shape[1]}x{linemap.shape[0]}"
            ) from None
        pairs.append((image, linemap))
    return pairs


def _parseHeader(raw, path, count):
    fields, i = [], 0
    while len(fields) < count:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(raw) and not raw[i:i + 1].isspace():
            i += 1
        if start == i:
            names = ("magic", "width", "height", "maxval")
            raise FormatError(f"{path}: truncated header, missing {names[len(fields)]}", field=names[len(fields)])
        fields.append(raw[start:i].decode("ascii", errors="replace"))
    # exactly one whitespace byte separates the header from the samples
    return fields, i + 1


def _headerInt(value, name, path):
    if not value.isdigit() or int(value) <= 0:
        raise FormatError(f"{path}: invalid {name} {value!r}", field=name)
    return int(value)
