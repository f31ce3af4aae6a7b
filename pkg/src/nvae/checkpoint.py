"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"NVAECKPT"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys)
    ...       float64 '<f8' array blocks, in header order
    32 bytes  SHA-256 of everything above

The header records the dimensions (V, K, D), hidden layer sizes, model
flags, batch-norm constants, the vocabulary, the schedule and Adam state
scalars, the training config, and for each block its name, shape and byte
offset from the start of the data section. Model arrays come first in
:meth:`ModelParams.state_arrays` order, then Adam's ``m.<name>`` and
``v.<name>`` blocks in :meth:`ModelParams.trainable` order.
"""
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .errors import CheckpointError, ShapeError
from .model import ModelParams

MAGIC = b"NVAECKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: list
    schedule: dict
    adam: object
    config: dict


def atomic_write_bytes(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(params, vocab, schedule=None, adam=None, config=None):
    blocks = list(params.state_arrays().items())
    if adam is not None:
        blocks += [(f"m.{k}", v) for k, v in adam.m.items()]
        blocks += [(f"v.{k}", v) for k, v in adam.v.items()]
    entries, chunks, offset = [], [], 0
    for name, arr in blocks:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "dims": {"V": params.vocab_size, "K": params.n_topics, "D": params.embed_dim},
        "layer_sizes": list(params.layer_sizes),
        "flags": {"bn_fc": params.bn_fc, "bn_beta": params.bn_beta,
                  "train_embeddings": params.train_embeddings},
        "batchnorm": {"momentum": params.beta_bn.momentum,
                      "eps": params.fc_bn[0].eps if params.fc_bn else params.beta_bn.eps,
                      "beta_eps": params.beta_bn.eps},
        "vocab": list(vocab),
        "schedule": schedule or {},
        "adam": {"t": adam.t} if adam is not None else None,
        "config": config or {},
        "arrays": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, params, vocab, schedule=None, adam=None, config=None):
    atomic_write_bytes(path, encode_checkpoint(params, vocab, schedule, adam, config))


def decode_checkpoint(data):
    if len(data) < len(MAGIC) + 12 + 32 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint is truncated or corrupt")
    start = len(MAGIC) + 12
    try:
        header = json.loads(body[start:start + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    data_start = start + hlen
    arrays = {}
    for e in header["arrays"]:
        lo = data_start + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(body):
            raise CheckpointError(f"block {e['name']} runs past the end of the file")
        arrays[e["name"]] = np.frombuffer(body[lo:hi], dtype="<f8").astype(np.float64).reshape(e["shape"])
    return header, arrays


def _bn(arrays, prefix, mom, eps):
    g = arrays[f"{prefix}.gamma"]
    s = arrays[f"{prefix}.shift"]
    rm = arrays.get(f"{prefix}.running_mean", np.zeros_like(g))
    rv = arrays.get(f"{prefix}.running_var", np.ones_like(g))
    return nk.BatchNormState(g, s, rm, rv, mom, eps)


def load_checkpoint(path, n_topics=None, vocab_size=None, embed_dim=None):
    """Read a checkpoint, optionally insisting on the given dimensions."""
    from .trainer import AdamState

    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc.strerror}") from exc
    header, arrays = decode_checkpoint(data)
    dims = header["dims"]
    for name, want in (("K", n_topics), ("V", vocab_size), ("D", embed_dim)):
        if want is not None and dims[name] != want:
            raise ShapeError(f"checkpoint has {name}={dims[name]}, expected {want}")
    bn = header["batchnorm"]
    mom, eps = bn["momentum"], bn["eps"]
    n_layers = len(header["layer_sizes"])
    flags = header["flags"]
    try:
        params = ModelParams(
            omega=arrays["omega"],
            rho=arrays["rho"],
            fc_weights=[arrays[f"fc{i}.weight"] for i in range(n_layers)],
            fc_biases=[arrays[f"fc{i}.bias"] for i in range(n_layers)],
            fc_bn=[_bn(arrays, f"fc{i}.bn", mom, eps) for i in range(n_layers)],
            out_weight=arrays["out.weight"],
            out_bias=arrays["out.bias"],
            a=arrays["a"],
            b=arrays["b"],
            beta_tilde=arrays["beta_tilde"],
            beta_bn=_bn(arrays, "beta_bn", mom, bn.get("beta_eps", eps)),
            alpha_hat=arrays["alpha_hat"],
            bn_fc=flags["bn_fc"],
            bn_beta=flags["bn_beta"],
            train_embeddings=flags["train_embeddings"],
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks block {exc}") from exc
    if params.rho.shape[0] != dims["K"] or params.omega.shape != (dims["V"], dims["D"]):
        raise CheckpointError("checkpoint blocks disagree with its declared dimensions")
    if len(header["vocab"]) != dims["V"]:
        raise CheckpointError("checkpoint vocabulary size disagrees with V")
    adam = None
    if header.get("adam") is not None:
        m = {k[2:]: v for k, v in arrays.items() if k.startswith("m.")}
        v = {k[2:]: a for k, a in arrays.items() if k.startswith("v.")}
        adam = AdamState(m=m, v=v, t=header["adam"]["t"])
    return Checkpoint(params=params, vocab=header["vocab"], schedule=header["schedule"],
                      adam=adam, config=header["config"])
