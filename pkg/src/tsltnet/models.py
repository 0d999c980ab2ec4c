"""The two classifier graphs and the deployable model bundle.

TSLT-Net is the fixed lightweight transformer: Dense(128, relu) ->
reshape(16x8) -> LayerNorm -> 2-head self-attention -> global average pool
-> Dense(64, relu) -> dropout(0.3) -> softmax output. The MLP baseline is
three Dense/BatchNorm/dropout blocks (512/256/128). Bundles serialize the
weights at 32-bit precision together with the fitted preprocessing state,
class names and task tag in one checksummed little-endian file.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

from .numcore import Matrix, RandSource, ShapeError, rowwise_softmax
from .layers import (
    BatchNorm,
    Dense,
    Dropout,
    LayerNorm,
    SelfAttention,
    cross_entropy_from_probs,
    pool_blocks,
    pool_blocks_backward,
)
from .pipeline import PreprocessState

SEQ_LEN = 16
MODEL_DIM = 8
RESHAPE_WIDTH = SEQ_LEN * MODEL_DIM  # dense_1 must emit exactly 16*8 values

BUNDLE_MAGIC = b"TSLT"
BUNDLE_VERSION = 1
_ARCH_TAGS = {"tslt": 1, "mlp": 2}
_TASK_TAGS = {"multiclass": 1, "binary": 2}

# Layer-parameter counts quoted in the published description of the
# TSLT-Net architecture. Standard accounting (what count_params reports)
# gives 2*8=16 for the normalization and 4*(8*8+8)=288 for the attention
# block; inspect surfaces the delta instead of absorbing it.
REFERENCE_LAYER_PARAMS = {"layer_norm": 32, "self_attention": 1440}


class BundleError(Exception):
    """Base class for model-bundle file problems."""


class BadMagicError(BundleError):
    pass


class VersionMismatchError(BundleError):
    pass


class TruncatedBundleError(BundleError):
    pass


class ChecksumError(BundleError):
    pass


class BundleFormatError(BundleError):
    pass


@dataclass
class LayerCount:
    name: str
    kind: str
    output_shape: tuple
    params: int


@dataclass
class ParamCount:
    rows: list[LayerCount]
    total: int
    reference_deltas: dict[str, tuple[int, int]]  # name -> (quoted, counted)


# ---------------------------------------------------------------------------
# TSLT-Net
# ---------------------------------------------------------------------------

class TsltNet:
    """The fixed transformer graph; one instance owns one parameter set."""

    arch = "tslt"

    def __init__(self, dense1: Dense, norm: LayerNorm, attn: SelfAttention,
                 dense2: Dense, out: Dense, dropout: Dropout,
                 input_dim: int, num_classes: int):
        if dense1.out_dim != RESHAPE_WIDTH:
            raise ShapeError(
                f"dense_1 must emit {RESHAPE_WIDTH} values for the (16, 8) reshape,"
                f" got {dense1.out_dim}"
            )
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        self.dense1 = dense1
        self.norm = norm
        self.attn = attn
        self.dense2 = dense2
        self.out = out
        self.dropout = dropout
        self.input_dim = input_dim
        self.num_classes = num_classes

    def trainable(self) -> list[tuple[str, Matrix]]:
        """Every tensor the optimizer updates, in fixed traversal order."""
        a = self.attn
        return [
            ("dense1.w", self.dense1.weights), ("dense1.b", self.dense1.bias),
            ("norm.gamma", self.norm.gamma), ("norm.beta", self.norm.beta),
            ("attn.wq", a.wq), ("attn.bq", a.bq),
            ("attn.wk", a.wk), ("attn.bk", a.bk),
            ("attn.wv", a.wv), ("attn.bv", a.bv),
            ("attn.wo", a.wo), ("attn.bo", a.bo),
            ("dense2.w", self.dense2.weights), ("dense2.b", self.dense2.bias),
            ("out.w", self.out.weights), ("out.b", self.out.bias),
        ]

    def state_tensors(self) -> list[tuple[str, Matrix]]:
        """Everything that must persist in a bundle (no extras for TSLT)."""
        return self.trainable()

    def stage_shapes(self) -> list[tuple[str, tuple]]:
        """Per-sample output shape of every stage, in graph order."""
        return [
            ("input", (self.input_dim,)),
            ("dense_1", (RESHAPE_WIDTH,)),
            ("reshape", (SEQ_LEN, MODEL_DIM)),
            ("layer_norm", (SEQ_LEN, MODEL_DIM)),
            ("self_attention", (SEQ_LEN, MODEL_DIM)),
            ("global_avg_pool", (MODEL_DIM,)),
            ("dense_2", (self.dense2.out_dim,)),
            ("dropout", (self.dense2.out_dim,)),
            ("output", (self.num_classes,)),
        ]

    def forward(self, x: Matrix, train: bool = False,
                rng: RandSource | None = None):
        """Class probabilities for a batch; cache feeds backward().

        Each sample's 128-wide dense_1 output is reinterpreted row-major as a
        (16, 8) sequence; the whole batch is processed as stacked sequences.
        """
        if x.cols != self.input_dim:
            raise ShapeError(
                f"model expects {self.input_dim} features, got {x.cols}"
            )
        n = x.rows
        h1, c1 = self.dense1.forward(x)                      # (n, 128)
        hseq = h1.reshaped(n * SEQ_LEN, MODEL_DIM)           # no copy
        h3, cn = self.norm.forward(hseq)
        h4, ca = self.attn.forward_batch(h3, n)
        h5 = pool_blocks(h4, n, SEQ_LEN)                     # (n, 8)
        h6, c2 = self.dense2.forward(h5)                     # (n, 64)
        h7, mask = self.dropout.forward(h6, rng, train)
        logits, c3 = self.out.forward(h7)
        probs = rowwise_softmax(logits)
        cache = {"n": n, "c1": c1, "cn": cn, "ca": ca, "c2": c2,
                 "mask": mask, "c3": c3, "probs": probs}
        return probs, cache

    def backward(self, cache, onehot: Matrix):
        """Mean cross-entropy loss and its gradient for every trainable tensor."""
        n = cache["n"]
        loss, dlogits = cross_entropy_from_probs(cache["probs"], onehot)
        dh7, dw_out, db_out = self.out.backward(cache["c3"], dlogits)
        dh6 = self.dropout.backward(cache["mask"], dh7)
        dh5, dw2, db2 = self.dense2.backward(cache["c2"], dh6)
        dh4 = pool_blocks_backward(dh5, n, SEQ_LEN)
        dh3, attn_grads = self.attn.backward(cache["ca"], dh4)
        dhseq, dgamma, dbeta = self.norm.backward(cache["cn"], dh3)
        dh1 = dhseq.reshaped(n, RESHAPE_WIDTH)
        _, dw1, db1 = self.dense1.backward(cache["c1"], dh1, need_dx=False)
        grads = {
            "dense1.w": dw1, "dense1.b": db1,
            "norm.gamma": dgamma, "norm.beta": dbeta,
            "attn.wq": attn_grads["wq"], "attn.bq": attn_grads["bq"],
            "attn.wk": attn_grads["wk"], "attn.bk": attn_grads["bk"],
            "attn.wv": attn_grads["wv"], "attn.bv": attn_grads["bv"],
            "attn.wo": attn_grads["wo"], "attn.bo": attn_grads["bo"],
            "dense2.w": dw2, "dense2.b": db2,
            "out.w": dw_out, "out.b": db_out,
        }
        return loss, grads


def build_tslt(input_dim: int, num_classes: int, seed: int) -> TsltNet:
    """Seeded construction; weights are uniform Glorot, biases zero, layer
    norm gamma 1 / beta 0. Draw order: dense_1, attention q/k/v/out, dense_2,
    output."""
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    rng = RandSource(seed)
    dense1 = Dense.glorot(input_dim, RESHAPE_WIDTH, rng, activation="relu")
    norm = LayerNorm(MODEL_DIM)
    attn = SelfAttention.glorot(rng)
    dense2 = Dense.glorot(MODEL_DIM, 64, rng, activation="relu")
    out = Dense.glorot(64, num_classes, rng, activation="none")
    return TsltNet(dense1, norm, attn, dense2, out, Dropout(0.3),
                   input_dim, num_classes)


# ---------------------------------------------------------------------------
# MLP baseline
# ---------------------------------------------------------------------------

class Mlp:
    """Three Dense->BatchNorm->Dropout blocks (the last without BatchNorm),
    then a softmax output layer."""

    arch = "mlp"

    def __init__(self, dense1: Dense, bn1: BatchNorm, dense2: Dense,
                 bn2: BatchNorm, dense3: Dense, out: Dense, dropout: Dropout,
                 input_dim: int, num_classes: int):
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        self.dense1 = dense1
        self.bn1 = bn1
        self.dense2 = dense2
        self.bn2 = bn2
        self.dense3 = dense3
        self.out = out
        self.dropout = dropout
        self.input_dim = input_dim
        self.num_classes = num_classes

    def trainable(self) -> list[tuple[str, Matrix]]:
        return [
            ("dense1.w", self.dense1.weights), ("dense1.b", self.dense1.bias),
            ("bn1.gamma", self.bn1.gamma), ("bn1.beta", self.bn1.beta),
            ("dense2.w", self.dense2.weights), ("dense2.b", self.dense2.bias),
            ("bn2.gamma", self.bn2.gamma), ("bn2.beta", self.bn2.beta),
            ("dense3.w", self.dense3.weights), ("dense3.b", self.dense3.bias),
            ("out.w", self.out.weights), ("out.b", self.out.bias),
        ]

    def state_tensors(self) -> list[tuple[str, Matrix]]:
        """Trainables plus the batch-norm running statistics."""
        return self.trainable() + [
            ("bn1.running_mean", self.bn1.running_mean),
            ("bn1.running_var", self.bn1.running_var),
            ("bn2.running_mean", self.bn2.running_mean),
            ("bn2.running_var", self.bn2.running_var),
        ]

    def stage_shapes(self) -> list[tuple[str, tuple]]:
        return [
            ("input", (self.input_dim,)),
            ("dense_1", (self.dense1.out_dim,)),
            ("batch_norm_1", (self.dense1.out_dim,)),
            ("dropout_1", (self.dense1.out_dim,)),
            ("dense_2", (self.dense2.out_dim,)),
            ("batch_norm_2", (self.dense2.out_dim,)),
            ("dropout_2", (self.dense2.out_dim,)),
            ("dense_3", (self.dense3.out_dim,)),
            ("dropout_3", (self.dense3.out_dim,)),
            ("output", (self.num_classes,)),
        ]

    def forward(self, x: Matrix, train: bool = False,
                rng: RandSource | None = None):
        if x.cols != self.input_dim:
            raise ShapeError(
                f"model expects {self.input_dim} features, got {x.cols}"
            )
        h1, c1 = self.dense1.forward(x)
        a1, cb1 = self.bn1.forward(h1, train)
        d1, m1 = self.dropout.forward(a1, rng, train)
        h2, c2 = self.dense2.forward(d1)
        a2, cb2 = self.bn2.forward(h2, train)
        d2, m2 = self.dropout.forward(a2, rng, train)
        h3, c3 = self.dense3.forward(d2)
        d3, m3 = self.dropout.forward(h3, rng, train)
        logits, c4 = self.out.forward(d3)
        probs = rowwise_softmax(logits)
        cache = {"c1": c1, "cb1": cb1, "m1": m1, "c2": c2, "cb2": cb2,
                 "m2": m2, "c3": c3, "m3": m3, "c4": c4, "probs": probs}
        return probs, cache

    def backward(self, cache, onehot: Matrix):
        loss, dlogits = cross_entropy_from_probs(cache["probs"], onehot)
        dd3, dw_out, db_out = self.out.backward(cache["c4"], dlogits)
        dh3 = self.dropout.backward(cache["m3"], dd3)
        dd2, dw3, db3 = self.dense3.backward(cache["c3"], dh3)
        da2 = self.dropout.backward(cache["m2"], dd2)
        dh2, dg2, dbt2 = self.bn2.backward(cache["cb2"], da2)
        dd1, dw2, db2 = self.dense2.backward(cache["c2"], dh2)
        da1 = self.dropout.backward(cache["m1"], dd1)
        dh1, dg1, dbt1 = self.bn1.backward(cache["cb1"], da1)
        _, dw1, db1 = self.dense1.backward(cache["c1"], dh1, need_dx=False)
        grads = {
            "dense1.w": dw1, "dense1.b": db1,
            "bn1.gamma": dg1, "bn1.beta": dbt1,
            "dense2.w": dw2, "dense2.b": db2,
            "bn2.gamma": dg2, "bn2.beta": dbt2,
            "dense3.w": dw3, "dense3.b": db3,
            "out.w": dw_out, "out.b": db_out,
        }
        return loss, grads


def build_mlp(input_dim: int, num_classes: int, seed: int) -> Mlp:
    """Seeded MLP baseline with hidden widths 512/256/128."""
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    rng = RandSource(seed)
    dense1 = Dense.glorot(input_dim, 512, rng, activation="relu")
    dense2 = Dense.glorot(512, 256, rng, activation="relu")
    dense3 = Dense.glorot(256, 128, rng, activation="relu")
    out = Dense.glorot(128, num_classes, rng, activation="none")
    return Mlp(dense1, BatchNorm(512), dense2, BatchNorm(256), dense3, out,
               Dropout(0.3), input_dim, num_classes)


def build_model(arch: str, input_dim: int, num_classes: int, seed: int):
    if arch == "tslt":
        return build_tslt(input_dim, num_classes, seed)
    if arch == "mlp":
        return build_mlp(input_dim, num_classes, seed)
    raise ValueError(f"unknown architecture {arch!r}")


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def _size(m: Matrix) -> int:
    return m.rows * m.cols


def count_params(model) -> ParamCount:
    """Per-layer trainable parameter table, mirroring the layer order of the
    architecture summary, plus deltas against the quoted reference counts."""
    if isinstance(model, TsltNet):
        d, k = model.input_dim, model.num_classes
        rows = [
            LayerCount("input", "input", (d,), 0),
            LayerCount("dense_1", "fully_connected", (RESHAPE_WIDTH,),
                       _size(model.dense1.weights) + _size(model.dense1.bias)),
            LayerCount("reshape", "reshape", (SEQ_LEN, MODEL_DIM), 0),
            LayerCount("layer_norm", "normalization", (SEQ_LEN, MODEL_DIM),
                       _size(model.norm.gamma) + _size(model.norm.beta)),
            LayerCount("self_attention",
                       f"multi_head_attention({model.attn.heads} heads, "
                       f"key_dim={model.attn.key_dim})",
                       (SEQ_LEN, MODEL_DIM),
                       sum(_size(t) for name, t in model.trainable()
                           if name.startswith("attn."))),
            LayerCount("global_avg_pool", "pooling", (MODEL_DIM,), 0),
            LayerCount("dense_2", "fully_connected", (model.dense2.out_dim,),
                       _size(model.dense2.weights) + _size(model.dense2.bias)),
            LayerCount("dropout", "regularization(0.3)",
                       (model.dense2.out_dim,), 0),
            LayerCount("output", "fully_connected", (k,),
                       _size(model.out.weights) + _size(model.out.bias)),
        ]
        by_name = {r.name: r.params for r in rows}
        deltas = {name: (quoted, by_name[name])
                  for name, quoted in REFERENCE_LAYER_PARAMS.items()
                  if by_name.get(name) != quoted}
    elif isinstance(model, Mlp):
        k = model.num_classes
        rows = [
            LayerCount("input", "input", (model.input_dim,), 0),
            LayerCount("dense_1", "fully_connected", (512,),
                       _size(model.dense1.weights) + _size(model.dense1.bias)),
            LayerCount("batch_norm_1", "normalization", (512,),
                       _size(model.bn1.gamma) + _size(model.bn1.beta)),
            LayerCount("dropout_1", "regularization(0.3)", (512,), 0),
            LayerCount("dense_2", "fully_connected", (256,),
                       _size(model.dense2.weights) + _size(model.dense2.bias)),
            LayerCount("batch_norm_2", "normalization", (256,),
                       _size(model.bn2.gamma) + _size(model.bn2.beta)),
            LayerCount("dropout_2", "regularization(0.3)", (256,), 0),
            LayerCount("dense_3", "fully_connected", (128,),
                       _size(model.dense3.weights) + _size(model.dense3.bias)),
            LayerCount("dropout_3", "regularization(0.3)", (128,), 0),
            LayerCount("output", "fully_connected", (k,),
                       _size(model.out.weights) + _size(model.out.bias)),
        ]
        deltas = {}
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    total = sum(r.params for r in rows)
    return ParamCount(rows, total, deltas)


def predict_probs(model, x: Matrix, block_rows: int = 1024) -> Matrix:
    """Inference-mode probabilities computed block-wise to bound memory."""
    n, k = x.rows, model.num_classes
    probs = Matrix.zeros(n, k)
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        xb = Matrix(stop - start, x.cols,
                    x.data[start * x.cols:stop * x.cols])
        pb, _ = model.forward(xb, train=False)
        probs.data[start * k:stop * k] = pb.data
    return probs


# ---------------------------------------------------------------------------
# model bundle (serialization)
# ---------------------------------------------------------------------------

@dataclass
class ModelBundle:
    """The deployable unit: weights + preprocessing + class names + task."""

    arch: str
    task: str
    model: object  # TsltNet | Mlp
    preprocess: PreprocessState | None
    class_names: list[str]
    version: int = BUNDLE_VERSION

    def __post_init__(self):
        if self.arch not in _ARCH_TAGS:
            raise ValueError(f"unknown architecture tag {self.arch!r}")
        if self.task not in _TASK_TAGS:
            raise ValueError(f"unknown task tag {self.task!r}")
        if len(self.class_names) != self.model.num_classes:
            raise ValueError(
                f"{len(self.class_names)} class names for a "
                f"{self.model.num_classes}-way model"
            )
        if (self.preprocess is not None
                and self.preprocess.input_dim != self.model.input_dim):
            raise ValueError(
                f"preprocess emits {self.preprocess.input_dim} features, "
                f"model expects {self.model.input_dim}"
            )


def weight_payload_bytes(bundle: ModelBundle) -> int:
    """Bytes of 32-bit weight values in the serialized file (headers excluded)."""
    return 4 * sum(_size(t) for _, t in bundle.model.state_tensors())


def encode_bundle(bundle: ModelBundle) -> bytes:
    """Serialize to the bundle wire format (little-endian throughout):

    magic "TSLT" | version u16 | arch u8 | task u8 | input_dim u32 |
    num_classes u32 | per class: name length u32 + UTF-8 bytes |
    preprocess JSON blob (u32 length + bytes, 0 for none) | per tensor:
    layer id u8 + rows u32 + cols u32 + float32 values | CRC32 u32 of all
    preceding bytes.
    """
    out = bytearray()
    out += BUNDLE_MAGIC
    out += struct.pack("<H", bundle.version)
    out += struct.pack("<BB", _ARCH_TAGS[bundle.arch], _TASK_TAGS[bundle.task])
    out += struct.pack("<II", bundle.model.input_dim, bundle.model.num_classes)
    for name in bundle.class_names:
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw))
        out += raw
    if bundle.preprocess is None:
        out += struct.pack("<I", 0)
    else:
        blob = json.dumps(bundle.preprocess.to_json_dict(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        out += struct.pack("<I", len(blob))
        out += blob
    for layer_id, (name, tensor) in enumerate(bundle.model.state_tensors(), 1):
        out += struct.pack("<BII", layer_id, tensor.rows, tensor.cols)
        out += struct.pack(f"<{len(tensor.data)}f", *tensor.data)
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedBundleError(
                f"bundle ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_bundle(data: bytes) -> ModelBundle:
    """Parse and validate bundle bytes.

    Raises BadMagicError / VersionMismatchError / TruncatedBundleError /
    ChecksumError / BundleFormatError as distinct conditions. Structural
    anomalies in a file whose trailing CRC does not verify are reported as
    checksum failures (corruption explains them); a corrupted length field
    that makes the parser run off the end of the file is indistinguishable
    from truncation and is reported as truncation.
    """
    if len(data) < 4:
        raise TruncatedBundleError(f"only {len(data)} bytes; no room for magic")
    if data[:4] != BUNDLE_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    cur = _Cursor(data)
    cur.take(4)
    (version,) = cur.unpack("<H")
    if version != BUNDLE_VERSION:
        raise VersionMismatchError(
            f"bundle format version {version}, supported {BUNDLE_VERSION}"
        )
    try:
        return _decode_body(cur, data, version)
    except BundleFormatError:
        if len(data) >= 8:
            (stored_crc,) = struct.unpack("<I", data[-4:])
            if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
                raise ChecksumError(
                    "structurally invalid and the checksum does not verify; "
                    "the file is corrupted"
                ) from None
        raise


def _decode_body(cur: _Cursor, data: bytes, version: int) -> ModelBundle:
    arch_tag, task_tag = cur.unpack("<BB")
    arch = {v: k for k, v in _ARCH_TAGS.items()}.get(arch_tag)
    task = {v: k for k, v in _TASK_TAGS.items()}.get(task_tag)
    if arch is None or task is None:
        raise BundleFormatError(f"unknown arch/task tags ({arch_tag}, {task_tag})")
    input_dim, num_classes = cur.unpack("<II")
    if input_dim < 1 or num_classes < 2:
        raise BundleFormatError(
            f"implausible dimensions (input_dim={input_dim}, "
            f"num_classes={num_classes})"
        )
    class_names = []
    for _ in range(num_classes):
        (ln,) = cur.unpack("<I")
        try:
            class_names.append(cur.take(ln).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise BundleFormatError(f"undecodable class name: {exc}") from None
    (blob_len,) = cur.unpack("<I")
    preprocess = None
    if blob_len:
        blob = cur.take(blob_len)
        try:
            preprocess = PreprocessState.from_json_dict(json.loads(blob))
        except (ValueError, KeyError, TypeError) as exc:
            raise BundleFormatError(f"bad preprocess blob: {exc}") from None

    # size the record section from metadata alone, before any allocation
    shapes = _expected_shapes(arch, input_dim, num_classes)
    expected_rest = sum(9 + 4 * r * c for _, (r, c) in shapes) + 4
    actual_rest = len(data) - cur.pos
    if actual_rest < expected_rest:
        raise TruncatedBundleError(
            f"bundle holds {actual_rest} bytes of tensor records, "
            f"needs {expected_rest}"
        )
    if actual_rest > expected_rest:
        raise BundleFormatError(f"{actual_rest - expected_rest} trailing bytes")

    model = build_model(arch, input_dim, num_classes, seed=0)
    for layer_id, ((name, tensor), (_, shape)) in enumerate(
            zip(model.state_tensors(), shapes), 1):
        got_id, rows, cols = cur.unpack("<BII")
        if got_id != layer_id:
            raise BundleFormatError(
                f"tensor record {layer_id} ({name}) has id {got_id}"
            )
        if (rows, cols) != shape:
            raise BundleFormatError(
                f"tensor {name} has shape ({rows}, {cols}), expected {shape}"
            )
        values = cur.unpack(f"<{rows * cols}f")
        for i, v in enumerate(values):
            tensor.data[i] = v
    (stored_crc,) = struct.unpack("<I", data[-4:])
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    return ModelBundle(arch, task, model, preprocess, class_names, version)


def _expected_shapes(arch: str, d: int, k: int) -> list[tuple[str, tuple[int, int]]]:
    """Tensor record shapes implied by the header, mirroring state_tensors()
    order (pinned against built models by the test suite)."""
    if arch == "tslt":
        return [
            ("dense1.w", (128, d)), ("dense1.b", (1, 128)),
            ("norm.gamma", (1, 8)), ("norm.beta", (1, 8)),
            ("attn.wq", (8, 8)), ("attn.bq", (1, 8)),
            ("attn.wk", (8, 8)), ("attn.bk", (1, 8)),
            ("attn.wv", (8, 8)), ("attn.bv", (1, 8)),
            ("attn.wo", (8, 8)), ("attn.bo", (1, 8)),
            ("dense2.w", (64, 8)), ("dense2.b", (1, 64)),
            ("out.w", (k, 64)), ("out.b", (1, k)),
        ]
    return [
        ("dense1.w", (512, d)), ("dense1.b", (1, 512)),
        ("bn1.gamma", (1, 512)), ("bn1.beta", (1, 512)),
        ("dense2.w", (256, 512)), ("dense2.b", (1, 256)),
        ("bn2.gamma", (1, 256)), ("bn2.beta", (1, 256)),
        ("dense3.w", (128, 256)), ("dense3.b", (1, 128)),
        ("out.w", (k, 128)), ("out.b", (1, k)),
        ("bn1.running_mean", (1, 512)), ("bn1.running_var", (1, 512)),
        ("bn2.running_mean", (1, 256)), ("bn2.running_var", (1, 256)),
    ]


def save_bundle(bundle: ModelBundle, path: str) -> None:
    with open(path, "wb") as f:
        f.write(encode_bundle(bundle))


def load_bundle(path: str) -> ModelBundle:
    with open(path, "rb") as f:
        return decode_bundle(f.read())
