"""Versioned binary checkpoints for trained artifacts.

Layout, all integers little-endian:

    magic     4 bytes   b"LPZ" + ASCII format version digit (currently "1")
    kind      1 byte    1 = vae, 2 = classifier, 3 = perturbation
    desc_len  u32       length of the descriptor
    desc      bytes     UTF-8 JSON: architecture, metadata, config echo
    pay_len   u64       length of the payload in bytes
    payload   bytes     all parameters flattened, float64 little-endian
    hash      8 bytes   BLAKE2b-64 of the payload

Round trips are bitwise: the payload stores raw IEEE doubles in a fixed
parameter order and the hash is verified on every load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .attack import Perturbation
from .autodiff import Tensor
from .models import INIT_SCHEME, ClassifierParams, VaeParams

MAGIC_PREFIX = b"LPZ"
FORMAT_VERSION = 1

_KIND_BYTES = {"vae": 1, "classifier": 2, "perturbation": 3}
_KIND_NAMES = {v: k for k, v in _KIND_BYTES.items()}


class CheckpointError(ValueError):
    """A checkpoint file cannot be used."""


class CheckpointVersionError(CheckpointError):
    """The file is not a checkpoint of a supported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before a declared section."""


class CheckpointHashError(CheckpointError):
    """The payload does not match its stored hash."""


class CheckpointKindError(CheckpointError):
    """The checkpoint holds a different artifact kind than expected."""


def _payload_hash(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def _flatten(arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def _describe(artifact, config: dict | None) -> tuple[str, dict, bytes]:
    if isinstance(artifact, VaeParams):
        desc = {
            "kind": "vae",
            "image_dim": artifact.image_dim,
            "latent_dim": artifact.latent_dim,
            "hidden": list(artifact.hidden),
            "init": INIT_SCHEME,
        }
        payload = _flatten(p.data for p in artifact.parameters())
    elif isinstance(artifact, ClassifierParams):
        desc = {
            "kind": "classifier",
            "image_dim": artifact.image_dim,
            "hidden": list(artifact.hidden),
            "role": artifact.role,
            "init": INIT_SCHEME,
        }
        payload = _flatten(p.data for p in artifact.parameters())
    elif isinstance(artifact, Perturbation):
        desc = {
            "kind": "perturbation",
            "latent_dim": artifact.latent_dim,
            "norm_order": artifact.norm_order,
            "family": artifact.family,
            "reg_weight": artifact.reg_weight,
            "provenance": artifact.provenance,
            "per_direction": artifact.delta_reverse is not None,
        }
        vectors = [artifact.delta]
        if artifact.delta_reverse is not None:
            vectors.append(artifact.delta_reverse)
        payload = _flatten(vectors)
    else:
        raise TypeError(f"cannot checkpoint objects of type {type(artifact).__name__}")
    if config is not None:
        desc["config"] = config
    return desc["kind"], desc, payload


def save_checkpoint(artifact, path, config: dict | None = None) -> None:
    """Write an artifact; ``config`` is echoed into the descriptor."""
    kind, desc, payload = _describe(artifact, config)
    desc_bytes = json.dumps(desc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC_PREFIX + str(FORMAT_VERSION).encode("ascii"))
        fh.write(struct.pack("<B", _KIND_BYTES[kind]))
        fh.write(struct.pack("<I", len(desc_bytes)))
        fh.write(desc_bytes)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(_payload_hash(payload))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointTruncatedError(
                f"{self.path}: truncated while reading {what} "
                f"({len(self.blob) - self.offset} of {n} bytes left)"
            )
        chunk = self.blob[self.offset : self.offset + n]
        self.offset += n
        return chunk


def _split_payload(payload: bytes, shapes: list[tuple[int, ...]], path) -> list[np.ndarray]:
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    if len(payload) != expected:
        raise CheckpointTruncatedError(
            f"{path}: payload holds {len(payload)} bytes, layout needs {expected}"
        )
    arrays, offset = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(
            np.frombuffer(payload, dtype="<f8", count=n, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += n * 8
    return arrays


def _rebuild_vae(desc: dict, payload: bytes, path) -> VaeParams:
    image_dim, latent_dim = desc["image_dim"], desc["latent_dim"]
    hidden = tuple(desc["hidden"])
    sizes = [image_dim, *hidden]
    shapes: list[tuple[int, ...]] = []
    for i in range(len(hidden)):
        shapes += [(sizes[i], sizes[i + 1]), (sizes[i + 1],)]
    shapes += [(sizes[-1], latent_dim), (latent_dim,)] * 2
    dec_sizes = [latent_dim, *reversed(hidden), image_dim]
    for i in range(len(dec_sizes) - 1):
        shapes += [(dec_sizes[i], dec_sizes[i + 1]), (dec_sizes[i + 1],)]
    arrays = _split_payload(payload, shapes, path)
    pairs = [
        (Tensor(arrays[i], name=f"p{i}"), Tensor(arrays[i + 1], name=f"p{i + 1}"))
        for i in range(0, len(arrays), 2)
    ]
    n_enc = len(hidden)
    return VaeParams(
        encoder_layers=pairs[:n_enc],
        mu_head=pairs[n_enc],
        log_var_head=pairs[n_enc + 1],
        decoder_layers=pairs[n_enc + 2 :],
        latent_dim=latent_dim,
        image_dim=image_dim,
        hidden=hidden,
    )


def _rebuild_classifier(desc: dict, payload: bytes, path) -> ClassifierParams:
    image_dim, hidden = desc["image_dim"], tuple(desc["hidden"])
    sizes = [image_dim, *hidden, 1]
    shapes: list[tuple[int, ...]] = []
    for i in range(len(sizes) - 1):
        shapes += [(sizes[i], sizes[i + 1]), (sizes[i + 1],)]
    arrays = _split_payload(payload, shapes, path)
    layers = [
        (Tensor(arrays[i], name=f"p{i}"), Tensor(arrays[i + 1], name=f"p{i + 1}"))
        for i in range(0, len(arrays), 2)
    ]
    return ClassifierParams(layers=layers, role=desc["role"], image_dim=image_dim, hidden=hidden)


def _rebuild_perturbation(desc: dict, payload: bytes, path) -> Perturbation:
    latent_dim = desc["latent_dim"]
    shapes = [(latent_dim,)] * (2 if desc.get("per_direction") else 1)
    arrays = _split_payload(payload, shapes, path)
    return Perturbation(
        delta=arrays[0],
        norm_order=desc["norm_order"],
        family=desc["family"],
        reg_weight=desc["reg_weight"],
        provenance=desc["provenance"],
        delta_reverse=arrays[1] if len(arrays) == 2 else None,
    )


def load_checkpoint(path, expect_kind: str | None = None):
    """Load an artifact, verifying version, structure, payload hash and kind.

    Returns the artifact and the config echo stored with it:
    ``(artifact, config_dict_or_None)``.
    """
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    magic = reader.take(4, "magic")
    if magic[:3] != MAGIC_PREFIX or not magic[3:4].isdigit():
        raise CheckpointVersionError(f"{path}: not a checkpoint file (magic {magic!r})")
    version = int(magic[3:4])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, supported version is {FORMAT_VERSION}"
        )
    (kind_byte,) = struct.unpack("<B", reader.take(1, "kind"))
    if kind_byte not in _KIND_NAMES:
        raise CheckpointError(f"{path}: unknown artifact kind byte {kind_byte}")
    kind = _KIND_NAMES[kind_byte]
    (desc_len,) = struct.unpack("<I", reader.take(4, "descriptor length"))
    desc = json.loads(reader.take(desc_len, "descriptor").decode("utf-8"))
    if desc.get("kind") != kind:
        raise CheckpointError(
            f"{path}: descriptor kind {desc.get('kind')!r} disagrees with header {kind!r}"
        )
    (pay_len,) = struct.unpack("<Q", reader.take(8, "payload length"))
    payload = reader.take(pay_len, "payload")
    stored_hash = reader.take(8, "hash")
    if _payload_hash(payload) != stored_hash:
        raise CheckpointHashError(f"{path}: payload hash mismatch, file is corrupt")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointKindError(f"{path}: holds a {kind}, expected a {expect_kind}")
    builder = {
        "vae": _rebuild_vae,
        "classifier": _rebuild_classifier,
        "perturbation": _rebuild_perturbation,
    }[kind]
    return builder(desc, payload, path), desc.get("config")
