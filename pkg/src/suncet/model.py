"""MLP encoder, projection head and linear classifier with manual backprop."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import FormatError, LengthError, ShapeError, StateError

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")


def mlp_specs(dims, final_activation: str = "relu") -> list[LayerSpec]:
    """Chain ``dims[0] -> dims[1] -> ...`` with relu hidden layers."""
    dims = list(dims)
    if len(dims) < 2:
        raise ShapeError("an MLP needs at least an input and an output dim")
    out = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        act = final_activation if i == len(dims) - 2 else "relu"
        out.append(LayerSpec(a, b, act))
    return out


@dataclass
class ModelParams:
    """Encoder + projection head parameters and their gradient accumulators.

    Tensors are keyed ``"<block>.<i>.weight"`` (shape out x in) and
    ``"<block>.<i>.bias"`` (shape out). ``version`` increases whenever the
    optimizer mutates the tensors; forward caches remember it.
    """

    encoder: list[LayerSpec]
    projection: list[LayerSpec]
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = 0

    def names(self, block: str | None = None) -> list[str]:
        if block is None:
            return list(self.tensors)
        return [k for k in self.tensors if k.startswith(block + ".")]

    def zero_grad(self, block: str | None = None) -> None:
        for k in self.names(block):
            self.grads[k][...] = 0.0

    def bump(self) -> None:
        self.version += 1

    def copy(self) -> "ModelParams":
        return ModelParams(
            list(self.encoder), list(self.projection),
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.grads.items()},
            self.version,
        )

    @property
    def d_repr(self) -> int:
        return self.encoder[-1].out_dim

    @property
    def d_proj(self) -> int:
        return self.projection[-1].out_dim


def _check_chain(specs: list[LayerSpec], what: str) -> None:
    for a, b in zip(specs[:-1], specs[1:]):
        if a.out_dim != b.in_dim:
            raise ShapeError(f"{what}: layer output {a.out_dim} does not feed input {b.in_dim}")


def init_params(encoder: list[LayerSpec], projection: list[LayerSpec], seed: int) -> ModelParams:
    """He-normal weights (variance 2/in_dim), zero biases, zero grads."""
    _check_chain(encoder, "encoder")
    _check_chain(projection, "projection")
    if len(projection) != 2:
        raise ShapeError("projection head must have exactly one hidden layer")
    if projection[0].in_dim != encoder[-1].out_dim:
        raise ShapeError(
            f"projection input {projection[0].in_dim} != encoder output {encoder[-1].out_dim}"
        )
    gen = rngmod.stream(seed, rngmod.INIT)
    params = ModelParams(list(encoder), list(projection))
    for block, specs in (("encoder", encoder), ("projection", projection)):
        for i, s in enumerate(specs):
            w = gen.standard_normal((s.out_dim, s.in_dim)) * np.sqrt(2.0 / s.in_dim)
            params.tensors[f"{block}.{i}.weight"] = w
            params.tensors[f"{block}.{i}.bias"] = np.zeros(s.out_dim)
    params.grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    return params


@dataclass
class ForwardCache:
    block: str
    version: int
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]


def _forward(params: ModelParams, block: str, specs: list[LayerSpec], x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != specs[0].in_dim:
        raise ShapeError(f"{block}: expected (m, {specs[0].in_dim}) input, got {x.shape}")
    inputs, preacts = [], []
    h = x
    for i, s in enumerate(specs):
        inputs.append(h)
        a = h @ params.tensors[f"{block}.{i}.weight"].T + params.tensors[f"{block}.{i}.bias"]
        preacts.append(a)
        h = np.maximum(a, 0.0) if s.activation == "relu" else a
    return h, ForwardCache(block, params.version, inputs, preacts)


def _backward(params: ModelParams, specs: list[LayerSpec], cache: ForwardCache | None,
              dout: np.ndarray, need_input_grad: bool = False):
    if cache is None:
        raise StateError("backward called without a forward cache")
    if cache.version != params.version:
        raise StateError(
            f"stale {cache.block} cache: built at version {cache.version}, "
            f"params now at {params.version}"
        )
    block = cache.block
    g = np.asarray(dout, dtype=np.float64)
    for i in range(len(specs) - 1, -1, -1):
        if specs[i].activation == "relu":
            g = g * (cache.preacts[i] > 0)
        params.grads[f"{block}.{i}.weight"] += g.T @ cache.inputs[i]
        params.grads[f"{block}.{i}.bias"] += g.sum(axis=0)
        if i > 0 or need_input_grad:
            g = g @ params.tensors[f"{block}.{i}.weight"]
    return g


def encode(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    return _forward(params, "encoder", params.encoder, x)


def project(params: ModelParams, h: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    return _forward(params, "projection", params.projection, h)


def backward_encoder(params: ModelParams, cache: ForwardCache, dh: np.ndarray) -> None:
    _backward(params, params.encoder, cache, dh)


def backward(params: ModelParams, caches: tuple[ForwardCache, ForwardCache], dz: np.ndarray) -> None:
    """Accumulate parameter gradients for a loss whose embedding gradient is ``dz``."""
    if caches is None or len(caches) != 2:
        raise StateError("backward needs (encoder_cache, projection_cache)")
    enc_cache, proj_cache = caches
    dh = _backward(params, params.projection, proj_cache, dz, need_input_grad=True)
    _backward(params, params.encoder, enc_cache, dh)


def embed(params: ModelParams, x: np.ndarray):
    """encode then project; returns ``(z, caches)`` ready for :func:`backward`."""
    h, enc_cache = encode(params, x)
    z, proj_cache = project(params, h)
    return z, (enc_cache, proj_cache)


@dataclass
class ClassifierHead:
    weights: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, n_classes: int, d_repr: int) -> "ClassifierHead":
        return cls(np.zeros((n_classes, d_repr)), np.zeros(n_classes))

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def logits(self, h: np.ndarray) -> np.ndarray:
        if h.shape[1] != self.weights.shape[1]:
            raise ShapeError(
                f"classifier expects {self.weights.shape[1]} features, got {h.shape[1]}"
            )
        return h @ self.weights.T + self.bias


# ---------------------------------------------------------------- checkpoints

CK_MAGIC = b"SNCK"
CK_VERSION = 1
_CK_HEADER = struct.Struct("<4sIQQQQ")


@dataclass
class Checkpoint:
    params: ModelParams
    global_step: int = 0
    epoch: int = 0
    rng_seed: int = 0
    rng_counter: int = 0
    classifier: ClassifierHead | None = None


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    parts = [_CK_HEADER.pack(CK_MAGIC, CK_VERSION, ck.global_step, ck.epoch,
                             ck.rng_seed, ck.rng_counter)]
    tensors = dict(ck.params.tensors)
    if ck.classifier is not None:
        tensors["classifier.weight"] = ck.classifier.weights
        tensors["classifier.bias"] = ck.classifier.bias
    for name, t in tensors.items():
        m = np.atleast_2d(np.asarray(t, dtype="<f8"))
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<QQ", m.shape[0], m.shape[1]))
        parts.append(m.tobytes())
    return b"".join(parts)


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ck))


def _specs_from_tensors(tensors: dict[str, np.ndarray], block: str, final: str) -> list[LayerSpec]:
    specs = []
    i = 0
    while f"{block}.{i}.weight" in tensors:
        w = tensors[f"{block}.{i}.weight"]
        specs.append(LayerSpec(w.shape[1], w.shape[0], "relu"))
        i += 1
    if specs:
        specs[-1] = LayerSpec(specs[-1].in_dim, specs[-1].out_dim, final)
    return specs


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint. Layer activations follow the engine convention:
    relu throughout the encoder, relu hidden + identity output in the head."""
    raw = Path(path).read_bytes()
    if len(raw) < _CK_HEADER.size:
        raise LengthError(f"{path}: truncated checkpoint header")
    magic, version, step, epoch, seed, counter = _CK_HEADER.unpack_from(raw)
    if magic != CK_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CK_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = _CK_HEADER.size
    tensors: dict[str, np.ndarray] = {}
    try:
        while off < len(raw):
            (nlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + nlen].decode()
            off += nlen
            rows, cols = struct.unpack_from("<QQ", raw, off)
            off += 16
            if off + 8 * rows * cols > len(raw):
                raise LengthError(f"{path}: tensor {name} truncated")
            t = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off)
            off += 8 * rows * cols
            t = t.reshape(rows, cols).astype(np.float64)
            tensors[name] = t[0].copy() if name.endswith(".bias") else t.copy()
    except struct.error:
        raise LengthError(f"{path}: truncated tensor record") from None
    classifier = None
    if "classifier.weight" in tensors:
        classifier = ClassifierHead(tensors.pop("classifier.weight"), tensors.pop("classifier.bias"))
    params = ModelParams(
        _specs_from_tensors(tensors, "encoder", "relu"),
        _specs_from_tensors(tensors, "projection", "identity"),
        tensors,
        {k: np.zeros_like(v) for k, v in tensors.items()},
    )
    return Checkpoint(params, step, epoch, seed, counter, classifier)
