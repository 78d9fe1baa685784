"""MetaImage (.mha / .mhd + .raw) volume and displacement-field I/O.

Arrays are (H, W, D) with an optional trailing component axis for fields.
Files store the d axis fastest, so DimSize and ElementSpacing appear in
reversed (d, w, h) order relative to the array shape. Payloads are raw
little-endian, uncompressed; MET_FLOAT, MET_SHORT and MET_UCHAR are read
(converted to float), MET_FLOAT is written. Displacement fields use
ElementNumberOfChannels = 3 with interleaved (dh, dw, dd) components in
voxel units of their own grid, as noted in the header comment.
"""

from __future__ import annotations

import os

import numpy as np

from .grid import DisplacementField, Volume3

__all__ = ["FormatError", "read_volume", "read_field", "write_volume", "write_field"]


class FormatError(ValueError):
    """Malformed or unsupported image file."""


_READ_DTYPES = {
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_UCHAR": np.dtype("u1"),
    "MET_CHAR": np.dtype("i1"),
}

_TRUE = ("true", "1")


def _parse_header(path):
    """Read header key/values and return them plus any in-file payload."""
    keys = {}
    payload = None
    with open(path, "rb") as fh:
        while True:
            line = fh.readline()
            if not line:
                raise FormatError(f"{path}: header ended before ElementDataFile")
            try:
                text = line.decode("ascii").strip()
            except UnicodeDecodeError as exc:
                raise FormatError(f"{path}: non-ASCII header line") from exc
            if not text:
                continue
            if "=" not in text:
                raise FormatError(f"{path}: malformed header line {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            keys[key] = value
            if key == "ElementDataFile":
                if value == "LOCAL":
                    payload = fh.read()
                break
    return keys, payload


def _load(path):
    """Read any supported MetaImage into (array, spacing, channels)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    keys, payload = _parse_header(path)

    ndims = int(keys.get("NDims", "0"))
    if ndims != 3:
        raise FormatError(f"{path}: NDims must be 3, got {keys.get('NDims')!r}")
    if keys.get("BinaryData", "True").lower() not in _TRUE:
        raise FormatError(f"{path}: only binary MetaImage data is supported")
    if keys.get("CompressedData", "False").lower() in _TRUE:
        raise FormatError(f"{path}: compressed data is not supported")
    for msb_key in ("BinaryDataByteOrderMSB", "ElementByteOrderMSB"):
        if keys.get(msb_key, "False").lower() in _TRUE:
            raise FormatError(f"{path}: big-endian data is not supported")

    elem_type = keys.get("ElementType", "")
    if elem_type not in _READ_DTYPES:
        raise FormatError(f"{path}: unsupported ElementType {elem_type!r}")
    try:
        dim_size = [int(x) for x in keys["DimSize"].split()]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: missing or malformed DimSize") from exc
    if len(dim_size) != 3 or any(x < 1 for x in dim_size):
        raise FormatError(f"{path}: DimSize must be three positive integers")
    spacing_file = [float(x) for x in keys.get("ElementSpacing", "1 1 1").split()]
    if len(spacing_file) != 3:
        raise FormatError(f"{path}: ElementSpacing must have three entries")
    channels = int(keys.get("ElementNumberOfChannels", "1"))
    if channels not in (1, 3):
        raise FormatError(f"{path}: unsupported ElementNumberOfChannels {channels}")

    data_file = keys["ElementDataFile"]
    if payload is None:
        raw_path = os.path.join(os.path.dirname(path) or ".", data_file)
        if not os.path.exists(raw_path):
            raise FormatError(f"{path}: payload file {raw_path} not found")
        with open(raw_path, "rb") as fh:
            payload = fh.read()

    dtype = _READ_DTYPES[elem_type]
    expected = dim_size[0] * dim_size[1] * dim_size[2] * channels * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype=dtype)
    # File order is d-fastest: reshape reversed, channels innermost.
    shape = (dim_size[2], dim_size[1], dim_size[0])
    if channels == 1:
        array = flat.reshape(shape)
    else:
        array = flat.reshape(shape + (channels,))
    spacing = (spacing_file[2], spacing_file[1], spacing_file[0])
    return np.asarray(array, dtype=np.float64), spacing, channels


def read_volume(path) -> Volume3:
    """Read a scalar MetaImage volume."""
    array, spacing, channels = _load(path)
    if channels != 1:
        raise FormatError(f"{path}: expected a scalar volume, found {channels} channels")
    return Volume3(array, spacing)


def read_field(path) -> DisplacementField:
    """Read a 3-channel MetaImage displacement field."""
    array, spacing, channels = _load(path)
    if channels != 3:
        raise FormatError(f"{path}: expected a 3-channel field, found {channels} channels")
    return DisplacementField(array, spacing)


def _write(path, array: np.ndarray, spacing, comment: str) -> None:
    path = os.fspath(path)
    channels = 1 if array.ndim == 3 else array.shape[3]
    dims = array.shape[:3]
    if path.endswith(".mha"):
        data_file, raw_path = "LOCAL", None
    elif path.endswith(".mhd"):
        raw_name = os.path.basename(path)[:-4] + ".raw"
        data_file = raw_name
        raw_path = os.path.join(os.path.dirname(path) or ".", raw_name)
    else:
        raise FormatError(f"{path}: output must end in .mha or .mhd")

    header = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        f"Comment = {comment}",
        "TransformMatrix = 1 0 0 0 1 0 0 0 1",
        "Offset = 0 0 0",
        "CenterOfRotation = 0 0 0",
        f"ElementSpacing = {spacing[2]:.17g} {spacing[1]:.17g} {spacing[0]:.17g}",
        f"DimSize = {dims[2]} {dims[1]} {dims[0]}",
    ]
    if channels != 1:
        header.append(f"ElementNumberOfChannels = {channels}")
    header.append("ElementType = MET_FLOAT")
    header.append(f"ElementDataFile = {data_file}")
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if raw_path is None:
            fh.write(payload)
    if raw_path is not None:
        with open(raw_path, "wb") as fh:
            fh.write(payload)


def write_volume(path, vol: Volume3) -> None:
    """Write a volume as MET_FLOAT, single-file .mha or .mhd + .raw pair."""
    _write(path, vol.data, vol.spacing, "scalar volume, axes h w d with d fastest")


def write_field(path, field: DisplacementField) -> None:
    """Write a displacement field as 3-channel MET_FLOAT MetaImage."""
    _write(
        path,
        field.vectors,
        field.spacing,
        "displacement components (dh, dw, dd) in voxel units of this grid",
    )
