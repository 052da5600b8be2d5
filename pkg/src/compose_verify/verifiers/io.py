"""VRF1 parameter files (little-endian).

    magic b"VRF1"
    u8    kind tag (2=f2, 3=f3, 4=f4)
    u8    config count, then that many u32 config values
          (f3: pad_side; f4: pad_side, patch_side, d_model, heads, layers, ffn)
    u32   tensor count
    per tensor: u16 name length + name, u8 ndim, ndim x u32 dims
    float32 payloads concatenated in the listed (sorted-name) order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, ShapeMismatch, TruncatedFile
from .cnn import CnnParams
from .mapformer import TransformerParams
from .scores import AlignmentConfig

VRF1_MAGIC = b"VRF1"
KIND_TAGS = {"f2": 2, "f3": 3, "f4": 4}


def _kind_payload(kind: str, params) -> tuple[list[int], dict[str, np.ndarray]]:
    if kind == "f2":
        return [], {
            "lam": np.asarray(params.lam, dtype=np.float64),
            "tau_align": np.asarray(params.tau_align, dtype=np.float64),
        }
    if kind == "f3":
        return [params.pad_side], params.tensors
    if kind == "f4":
        return [
            params.pad_side,
            params.patch_side,
            params.d_model,
            params.n_heads,
            params.n_layers,
            params.ffn,
        ], params.tensors
    raise ShapeMismatch(f"kind {kind!r} has no persistable parameters")


def save_params(kind: str, params, path: str | Path) -> None:
    if kind not in KIND_TAGS:
        raise ShapeMismatch(f"unknown or parameter-free verifier kind {kind!r}")
    config, tensors = _kind_payload(kind, params)
    names = sorted(tensors)
    with open(path, "wb") as fh:
        fh.write(VRF1_MAGIC)
        fh.write(struct.pack("<BB", KIND_TAGS[kind], len(config)))
        for value in config:
            fh.write(struct.pack("<I", value))
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            arr = np.asarray(tensors[name])
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
        for name in names:
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())


def load_params(kind: str, path: str | Path):
    """Load parameters for the requested kind.

    Raises:
        BadMagic: not a VRF1 file.
        ShapeMismatch: file holds a different kind, or shapes are off.
        TruncatedFile: payload ends early.
    """
    if kind not in KIND_TAGS:
        raise ShapeMismatch(f"unknown or parameter-free verifier kind {kind!r}")
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFile(f"needed {n} bytes at offset {pos}, file has {len(data)}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != VRF1_MAGIC:
        raise BadMagic("not a VRF1 file")
    tag, n_config = struct.unpack("<BB", take(2))
    if tag != KIND_TAGS[kind]:
        raise ShapeMismatch(f"file holds kind tag {tag}, requested {kind!r}")
    config = [struct.unpack("<I", take(4))[0] for _ in range(n_config)]
    (n_tensors,) = struct.unpack("<I", take(4))
    specs = []
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        specs.append((name, dims))
    tensors = {}
    for name, dims in specs:
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(take(count * 4), dtype="<f4").astype(np.float64)
        tensors[name] = arr.reshape(dims)

    if kind == "f2":
        try:
            return AlignmentConfig(
                lam=float(tensors["lam"]), tau_align=float(tensors["tau_align"])
            )
        except KeyError as exc:
            raise ShapeMismatch(f"f2 file missing tensor {exc}") from exc
    if kind == "f3":
        if len(config) != 1:
            raise ShapeMismatch("f3 file must carry one config value (pad_side)")
        return CnnParams(tensors=tensors, pad_side=config[0])
    if len(config) != 6:
        raise ShapeMismatch("f4 file must carry six config values")
    pad_side, patch_side, d_model, n_heads, n_layers, ffn = config
    return TransformerParams(
        tensors=tensors,
        pad_side=pad_side,
        patch_side=patch_side,
        d_model=d_model,
        n_heads=n_heads,
        n_layers=n_layers,
        ffn=ffn,
    )
