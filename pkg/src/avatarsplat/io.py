"""Little-endian binary formats (avatar, prior, direction) with CRC32 trailers.

Every file is ``magic (8 bytes) | version u16 | body | crc32 u32`` where the
checksum covers everything before it.  Avatar provenance and identity
coefficients go to a JSON sidecar next to the binary (``<path>.json``).
"""
from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .analysis import LatentDirection
from .geometry import Bindings, complete_barycentric
from .prior import DecoderMLP, PriorModel
from .renderer.gaussians import FIELDS, LocalGaussianSet

AVATAR_MAGIC = b"GASPAVTR"
PRIOR_MAGIC = b"GASPPRIR"
DIRECTION_MAGIC = b"GASPDIRN"
AVATAR_VERSION = 1
PRIOR_VERSION = 1
DIRECTION_VERSION = 1

# face u32, leading barycentric pair 2f (third is 1 - a - b), mu 3f, log_scale 3f, rot 4f, color 3f,
# opacity f: 68 bytes
AVATAR_RECORD = np.dtype([
    ("face", "<u4"), ("bary", "<f4", 2), ("mu", "<f4", 3), ("log_scale", "<f4", 3),
    ("rot", "<f4", 4), ("color", "<f4", 3), ("opacity", "<f4"),
])
HEADER = struct.Struct("<8sH")


class FormatError(ValueError):
    """Base class for unreadable files."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def _frame(magic, version, body: bytes) -> bytes:
    head = HEADER.pack(magic, version) + body
    return head + struct.pack("<I", zlib.crc32(head) & 0xFFFFFFFF)


def _unframe(blob: bytes, magic, version, what):
    """Validate magic and version; return the body bytes (checksum is checked by the caller)."""
    if len(blob) < HEADER.size + 4:
        raise TruncatedFileError(f"{what} file too short ({len(blob)} bytes)")
    got_magic, got_version = HEADER.unpack_from(blob)
    if got_magic != magic:
        raise BadMagicError(f"not a {what} file (magic {got_magic!r})")
    if got_version != version:
        raise UnsupportedVersionError(f"{what} format version {got_version} not supported (expected {version})")
    return blob[HEADER.size:-4]


def _check_crc(blob: bytes, what):
    (stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise ChecksumError(f"{what} checksum mismatch")


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def _write(path, blob):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# avatar

def avatar_bytes(gaussians: LocalGaussianSet, bindings: Bindings) -> bytes:
    n = len(gaussians)
    if len(bindings) != n:
        raise ValueError("binding count must equal Gaussian count")
    rec = np.zeros(n, dtype=AVATAR_RECORD)
    rec["face"] = bindings.face_index
    rec["bary"] = bindings.barycentric[:, :2]
    for f in FIELDS:
        rec[f] = getattr(gaussians, f)
    return _frame(AVATAR_MAGIC, AVATAR_VERSION, struct.pack("<I", n) + rec.tobytes())


def parse_avatar(blob: bytes):
    """Return (LocalGaussianSet, Bindings) from avatar bytes.

    A checksum failure on a file shorter than its declared record count is
    reported as truncation; otherwise as corruption.
    """
    body = _unframe(blob, AVATAR_MAGIC, AVATAR_VERSION, "avatar")
    if len(body) < 4:
        raise TruncatedFileError("avatar file missing record count")
    (n,) = struct.unpack_from("<I", body)
    want = 4 + n * AVATAR_RECORD.itemsize
    try:
        _check_crc(blob, "avatar")
    except ChecksumError:
        if len(body) < want:
            raise TruncatedFileError(f"avatar file holds {len(body) - 4} record bytes, expected {want - 4}") from None
        raise
    if len(body) != want:
        raise FormatError("record count does not match file length")
    rec = np.frombuffer(body, dtype=AVATAR_RECORD, count=n, offset=4)
    g = LocalGaussianSet(*(rec[f].astype(np.float64) for f in FIELDS))
    b = Bindings(rec["face"].astype(np.int64), complete_barycentric(rec["bary"]))
    return g, b


def avatar_file_size(n):
    return HEADER.size + 4 + n * AVATAR_RECORD.itemsize + 4


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items() if _jsonable_ok(v)}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def _jsonable_ok(v):
    return not isinstance(v, LocalGaussianSet)


def save_avatar(avatar, path):
    """Write the binary avatar plus a ``.json`` sidecar with coefficients and provenance.

    Attributes are stored as float32 and only the first two barycentric
    weights are kept.  A roundtrip is bit-exact for float32-representable
    attributes and ``Bindings.float32()`` bindings, which is what ``fit`` produces.
    """
    _write(path, avatar_bytes(avatar.gaussians, avatar.bindings))
    side = {"identity_coeffs": [float(c) for c in np.asarray(avatar.identity_coeffs).ravel()],
            "provenance": _jsonable(avatar.provenance)}
    _write(f"{path}.json", json.dumps(side, indent=1, sort_keys=True).encode())


def load_avatar(path):
    from .pipelines import FittedAvatar

    g, b = parse_avatar(_read(path))
    coeffs, prov = np.zeros(0), {}
    side = f"{path}.json"
    if os.path.exists(side):
        meta = json.loads(_read(side))
        coeffs = np.asarray(meta.get("identity_coeffs", []), dtype=np.float64)
        prov = meta.get("provenance", {})
    return FittedAvatar(g, b, coeffs, None, prov)


# ---------------------------------------------------------------------------
# prior: JSON header (meta + array table) then raw float64 / int64 arrays

def _prior_arrays(prior: PriorModel):
    arrays = {f"template.{f}": getattr(prior.template, f) for f in FIELDS}
    arrays["features"] = prior.features
    arrays["codes"] = prior.codes
    arrays["bindings.face_index"] = prior.bindings.face_index
    arrays["bindings.barycentric"] = prior.bindings.barycentric
    arrays["scalp_mask"] = prior.scalp_mask
    for k in sorted(prior.decoder.params):
        arrays[f"decoder.{k}"] = prior.decoder.params[k]
    return arrays


_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8"), "b1": np.dtype("|b1")}


def _dtype_code(a):
    if a.dtype == np.bool_:
        return "b1"
    if np.issubdtype(a.dtype, np.integer):
        return "i8"
    return "f8"


def prior_bytes(prior: PriorModel) -> bytes:
    arrays = _prior_arrays(prior)
    table, chunks = [], []
    for name, a in arrays.items():
        code = _dtype_code(np.asarray(a))
        arr = np.ascontiguousarray(a, dtype=_DTYPES[code])
        table.append({"name": name, "dtype": code, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    header = json.dumps({"d_z": prior.decoder.d_z, "hidden": prior.decoder.hidden, "meta": _jsonable(prior.meta),
                         "arrays": table}, sort_keys=True).encode()
    body = struct.pack("<I", len(header)) + header + b"".join(chunks)
    return _frame(PRIOR_MAGIC, PRIOR_VERSION, body)


def _prior_layout(body):
    """(header, array sizes, declared body length) or None if the header is unreadable."""
    if len(body) < 4:
        return None
    (hlen,) = struct.unpack_from("<I", body)
    try:
        header = json.loads(body[4:4 + hlen])
        sizes = [int(np.prod(e["shape"])) * _DTYPES[e["dtype"]].itemsize for e in header["arrays"]]
    except (ValueError, KeyError, TypeError):
        return None
    return header, sizes, 4 + hlen + sum(sizes)


def parse_prior(blob: bytes) -> PriorModel:
    body = _unframe(blob, PRIOR_MAGIC, PRIOR_VERSION, "prior")
    layout = _prior_layout(body)
    try:
        _check_crc(blob, "prior")
    except ChecksumError:
        if layout is not None and len(body) < layout[2]:
            raise TruncatedFileError("prior file shorter than its declared arrays") from None
        if layout is None and len(body) < 4:
            raise TruncatedFileError("prior header missing") from None
        raise
    if layout is None or len(body) != layout[2]:
        raise FormatError("prior layout does not match file length")
    header, sizes, _ = layout
    arrays, off = {}, 4 + struct.unpack_from("<I", body)[0]
    for e, size in zip(header["arrays"], sizes):
        dt = _DTYPES[e["dtype"]]
        arrays[e["name"]] = np.frombuffer(body, dtype=dt, count=size // dt.itemsize,
                                          offset=off).reshape(e["shape"]).copy()
        off += size
    template = LocalGaussianSet(*(arrays[f"template.{f}"] for f in FIELDS))
    params = {k[len("decoder."):]: v for k, v in arrays.items() if k.startswith("decoder.")}
    decoder = DecoderMLP(params, header["d_z"], header["hidden"])
    return PriorModel(template, arrays["features"], arrays["codes"], decoder,
                      Bindings(arrays["bindings.face_index"], arrays["bindings.barycentric"]),
                      arrays["scalp_mask"].astype(bool), header["meta"])


def save_prior(prior: PriorModel, path):
    _write(path, prior_bytes(prior))


def load_prior(path) -> PriorModel:
    return parse_prior(_read(path))


# ---------------------------------------------------------------------------
# direction

def direction_bytes(d: LatentDirection) -> bytes:
    name = d.name.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ValueError("direction name too long")
    vec = np.ascontiguousarray(d.direction, dtype="<f8")
    body = (struct.pack("<H", len(name)) + name + struct.pack("<Idd", len(vec), d.bias, d.train_accuracy)
            + vec.tobytes())
    return _frame(DIRECTION_MAGIC, DIRECTION_VERSION, body)


_DIR_FIXED = struct.Struct("<Idd")


def parse_direction(blob: bytes) -> LatentDirection:
    body = _unframe(blob, DIRECTION_MAGIC, DIRECTION_VERSION, "direction")
    declared = None
    if len(body) >= 2:
        (nlen,) = struct.unpack_from("<H", body)
        if len(body) >= 2 + nlen + _DIR_FIXED.size:
            dim = _DIR_FIXED.unpack_from(body, 2 + nlen)[0]
            declared = 2 + nlen + _DIR_FIXED.size + 8 * dim
    try:
        _check_crc(blob, "direction")
    except ChecksumError:
        if declared is None or len(body) < declared:
            raise TruncatedFileError("direction file shorter than its declared contents") from None
        raise
    if declared is None or len(body) != declared:
        raise FormatError("direction layout does not match file length")
    dim, bias, acc = _DIR_FIXED.unpack_from(body, 2 + nlen)
    try:
        name = body[2:2 + nlen].decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("direction name is not UTF-8") from None
    vec = np.frombuffer(body, dtype="<f8", count=dim, offset=2 + nlen + _DIR_FIXED.size).astype(np.float64)
    return LatentDirection(vec, bias, name, acc)


def save_direction(d: LatentDirection, path):
    _write(path, direction_bytes(d))


def load_direction(path) -> LatentDirection:
    return parse_direction(_read(path))
