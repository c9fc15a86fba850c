"""Checkpoint files: a versioned JSON manifest plus a flat float64 blob.

Layout: magic bytes, an 8-byte little-endian manifest length, the
manifest JSON (canonical key order), then every tensor's row-major
float64 little-endian bytes in manifest order. Round-trips are bit
exact regardless of host byte order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .model import ModelBundle, ModelHyperparams, Vocab, build_bundle

MAGIC = b"ONCKPT\n"
FORMAT_VERSION = 1

KIND_MODEL = "model"
KIND_VGAE = "vgae"


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write a named-tensor container with metadata."""
    manifest = {
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "tensors": [{"name": name, "shape": list(np.shape(arr))}
                    for name, arr in tensors.items()],
    }
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back; returns (meta, tensors)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    off = len(MAGIC)
    if len(blob) < off + 8:
        raise CheckpointError(f"{path}: truncated header")
    (mlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if len(blob) < off + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[off:off + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc
    off += mlen
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: incompatible checkpoint format version {version!r} "
            f"(this build reads version {FORMAT_VERSION})")
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(blob) < off + nbytes:
            raise CheckpointError(
                f"{path}: blob too short for tensor '{entry['name']}' "
                f"(need {nbytes} bytes, have {len(blob) - off})")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
        off += nbytes
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing byte(s) after blob")
    return manifest.get("meta", {}), tensors


# -- model bundles -----------------------------------------------------------------------


def save_model(bundle: ModelBundle, path, extra: dict | None = None) -> None:
    meta = {
        "kind": KIND_MODEL,
        "hp": bundle.hp.to_dict(),
        "vocab": bundle.vocab.to_dict(),
        "extra": extra or {},
    }
    tensors = {name: t.data for name, t in bundle.named_params().items()}
    save_tensors(path, tensors, meta)


def load_model(path) -> tuple[ModelBundle, dict]:
    meta, tensors = load_tensors(path)
    if meta.get("kind") != KIND_MODEL:
        raise CheckpointError(f"{path}: not a model checkpoint "
                              f"(kind={meta.get('kind')!r})")
    hp = ModelHyperparams(**meta["hp"])
    vocab = Vocab(genes=tuple(meta["vocab"]["genes"]),
                  drugs=tuple(meta["vocab"]["drugs"]),
                  diseases=tuple(meta["vocab"]["diseases"]))
    bundle = build_bundle(hp, vocab, seed=0)
    params = bundle.named_params()
    if set(params) != set(tensors):
        missing = sorted(set(params) - set(tensors))
        surplus = sorted(set(tensors) - set(params))
        raise CheckpointError(f"{path}: parameter names do not match the "
                              f"configuration (missing {missing}, surplus {surplus})")
    for name, tensor in params.items():
        if tensors[name].shape != tensor.data.shape:
            raise CheckpointError(f"{path}: tensor '{name}' has shape "
                                  f"{tensors[name].shape}, expected {tensor.data.shape}")
        tensor.data = tensors[name]
    return bundle, meta.get("extra", {})


# -- VGAE pretraining artifacts -----------------------------------------------------------


def save_vgae(params, path, extra: dict | None = None) -> None:
    meta = {"kind": KIND_VGAE, "extra": extra or {}}
    save_tensors(path, {n: t.data for n, t in params.named().items()}, meta)


def load_vgae_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    meta, tensors = load_tensors(path)
    if meta.get("kind") != KIND_VGAE:
        raise CheckpointError(f"{path}: not a VGAE checkpoint "
                              f"(kind={meta.get('kind')!r})")
    return meta.get("extra", {}), tensors
