"""Reader/writer for the ".fmv" volumetric container.

Layout: 8-byte ASCII magic "FMIRVOL1", a 4-byte little-endian unsigned
header length, a UTF-8 JSON header, then the raw little-endian payload in
C-contiguous (channels, H, W, D) order.

Header keys: kind ("volume" | "field" | "seg" | "features" | "pca"),
shape, dtype ("f32" | "i32"), spacing_mm; plus "stage" for features,
"label_set" for seg, optional "explained_variance" for pca.  The pca
payload is the mean vector followed by the basis rows.
"""
import json
from pathlib import Path

import numpy as np

from .types import (
    FEATURE_STAGES,
    STAGE_RAW,
    STAGE_REDUCED,
    DeformationField,
    FeatureVolume,
    PcaModel,
    Segmentation,
    Volume,
)

MAGIC = b"FMIRVOL1"
KINDS = ("volume", "field", "seg", "features", "pca")
_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}


class FmvError(ValueError):
    """Malformed or inconsistent .fmv file."""


def _header_bytes(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _payload_count(header: dict) -> int:
    shape = header["shape"]
    if header["kind"] == "pca":
        c_prime, c = shape
        return c + c_prime * c
    n = 1
    for s in shape:
        n *= s
    return n


def _write(path, header: dict, payload: np.ndarray) -> None:
    hb = _header_bytes(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(hb).to_bytes(4, "little"))
        fh.write(hb)
        fh.write(np.ascontiguousarray(payload, dtype=_DTYPES[header["dtype"]]).tobytes())


def read_header(path) -> dict:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise FmvError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise FmvError(f"{path}: truncated header length")
        hlen = int.from_bytes(raw_len, "little")
        hb = fh.read(hlen)
        if len(hb) != hlen:
            raise FmvError(f"{path}: truncated header")
        try:
            header = json.loads(hb.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FmvError(f"{path}: unparseable header ({exc})") from exc
    for key in ("kind", "shape", "dtype", "spacing_mm"):
        if key not in header:
            raise FmvError(f"{path}: header missing key {key!r}")
    if header["kind"] not in KINDS:
        raise FmvError(f"{path}: unknown kind {header['kind']!r}")
    if header["dtype"] not in _DTYPES:
        raise FmvError(f"{path}: unknown dtype {header['dtype']!r}")
    return header


def _read(path) -> tuple[dict, np.ndarray]:
    path = Path(path)
    header = read_header(path)
    hb = _header_bytes(header)
    with open(path, "rb") as fh:
        fh.seek(8 + 4 + len(hb))
        raw = fh.read()
    dtype = _DTYPES[header["dtype"]]
    expected = _payload_count(header) * dtype.itemsize
    if len(raw) != expected:
        raise FmvError(f"{path}: payload is {len(raw)} bytes, header implies {expected}")
    return header, np.frombuffer(raw, dtype=dtype)


def write_volume(path, v: Volume) -> None:
    header = {"kind": "volume", "shape": list(v.shape), "dtype": "f32", "spacing_mm": list(v.spacing)}
    _write(path, header, v.data)


def write_field(path, f: DeformationField, spacing=(1.0, 1.0, 1.0)) -> None:
    header = {"kind": "field", "shape": [3, *f.shape], "dtype": "f32", "spacing_mm": list(spacing)}
    _write(path, header, f.disp)


def write_segmentation(path, s: Segmentation) -> None:
    header = {
        "kind": "seg",
        "shape": list(s.shape),
        "dtype": "i32",
        "spacing_mm": list(s.spacing),
        "label_set": list(s.label_set),
    }
    _write(path, header, s.labels)


def write_features(path, fv: FeatureVolume, spacing=(1.0, 1.0, 1.0)) -> None:
    header = {
        "kind": "features",
        "shape": list(fv.data.shape),
        "dtype": "f32",
        "spacing_mm": list(spacing),
        "stage": fv.stage,
    }
    _write(path, header, fv.data)


def write_pca(path, m: PcaModel) -> None:
    header = {
        "kind": "pca",
        "shape": [m.c_prime, m.c],
        "dtype": "f32",
        "spacing_mm": [1.0, 1.0, 1.0],
    }
    if m.explained_variance is not None:
        header["explained_variance"] = [float(x) for x in m.explained_variance]
    payload = np.concatenate([m.mean, m.basis.ravel()])
    _write(path, header, payload)


def _expect_kind(path, header, kind: str) -> None:
    if header["kind"] != kind:
        raise FmvError(f"{path}: expected kind {kind!r}, found {header['kind']!r}")


def read_volume(path) -> Volume:
    header, flat = _read(path)
    _expect_kind(path, header, "volume")
    return Volume(flat.reshape(header["shape"]), tuple(header["spacing_mm"]))


def read_field(path) -> DeformationField:
    header, flat = _read(path)
    _expect_kind(path, header, "field")
    return DeformationField(flat.reshape(header["shape"]))


def read_segmentation(path) -> Segmentation:
    header, flat = _read(path)
    _expect_kind(path, header, "seg")
    if "label_set" not in header:
        raise FmvError(f"{path}: seg header missing label_set")
    return Segmentation(flat.reshape(header["shape"]), tuple(header["label_set"]), tuple(header["spacing_mm"]))


def read_features(path) -> FeatureVolume:
    header, flat = _read(path)
    _expect_kind(path, header, "features")
    stage = header.get("stage")
    if stage not in FEATURE_STAGES:
        raise FmvError(f"{path}: unknown feature stage {stage!r}")
    return FeatureVolume(flat.reshape(header["shape"]), stage)


def load_precomputed_features(path) -> FeatureVolume:
    """Import path for externally encoded features (pre channel compression)."""
    fv = read_features(path)
    if fv.stage not in (STAGE_RAW, STAGE_REDUCED):
        raise FmvError(f"{path}: precomputed features must be stage {STAGE_RAW!r} or {STAGE_REDUCED!r}, found {fv.stage!r}")
    return fv


def read_pca(path) -> PcaModel:
    header, flat = _read(path)
    _expect_kind(path, header, "pca")
    c_prime, c = header["shape"]
    mean = flat[:c]
    basis = flat[c:].reshape(c_prime, c)
    ev = header.get("explained_variance")
    return PcaModel(mean, basis, None if ev is None else np.asarray(ev, dtype=np.float32))


def read_any(path):
    """Dispatch on the header kind; returns the matching value type."""
    kind = read_header(path)["kind"]
    return {
        "volume": read_volume,
        "field": read_field,
        "seg": read_segmentation,
        "features": read_features,
        "pca": read_pca,
    }[kind](path)
