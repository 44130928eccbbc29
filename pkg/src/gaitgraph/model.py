"""Graph-convolutional gait encoder: blocks, network, and shape tracing.

The default configuration is the 7-block residual stack with bottleneck
reduction rate 8, mapping a (T, 17, 3) pose window to a unit-norm
128-dimensional embedding.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .graph import AdjacencySet, SkeletonTopology, build_coco17_topology, single_partition, spatial_partition
from .layers import BatchNorm, Linear, TemporalConv, global_avg_pool, kaiming_normal
from .tensor import Parameter, ShapeError, Tensor, _result, relu, add, l2_normalize_rows

BASIC = "basic"
BOTTLENECK = "bottleneck"


def graph_conv(x: Tensor, adjacency: np.ndarray, theta: Tensor) -> Tensor:
    """Partitioned graph convolution: sum_k A_k @ X_t @ Theta_k per frame.

    x is (B, C_in, T, N), adjacency is (K, N, N), theta is (K, C_in, C_out).
    No activation here; that lives in the enclosing block.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"graph_conv expects 4-d input, got {x.shape}")
    if adjacency.ndim != 3 or theta.data.ndim != 3:
        raise ShapeError("adjacency must be (K, N, N) and theta (K, C_in, C_out)")
    k_adj, n_adj, n_adj2 = adjacency.shape
    k_theta, c_in_theta, c_out = theta.shape
    batch, c_in, t_len, n = x.shape
    if n_adj != n_adj2 or n != n_adj:
        raise ShapeError(f"joint count mismatch: input has {n}, adjacency {n_adj}")
    if k_adj != k_theta:
        raise ShapeError(f"partition count mismatch: adjacency {k_adj}, theta {k_theta}")
    if c_in != c_in_theta:
        raise ShapeError(f"channel mismatch: input has {c_in}, theta expects {c_in_theta}")

    adj = adjacency.astype(x.dtype, copy=False)
    xp = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))  # (B, T, N, C_in)
    out = np.zeros((batch, t_len, n, c_out), dtype=x.dtype)
    for k in range(k_adj):
        out += np.matmul(adj[k], xp @ theta.data[k])

    def backward(g):
        gp = np.ascontiguousarray(g.transpose(0, 2, 3, 1))  # (B, T, N, C_out)
        dxp = np.zeros_like(xp) if x.requires_grad else None
        dtheta = np.zeros_like(theta.data) if theta.requires_grad else None
        for k in range(k_adj):
            gm_k = np.matmul(adj[k].transpose(), gp)        # d(X @ Theta_k)
            if dtheta is not None:
                dtheta[k] = np.tensordot(xp, gm_k, axes=([0, 1, 2], [0, 1, 2]))
            if dxp is not None:
                dxp += gm_k @ theta.data[k].transpose()
        if dtheta is not None:
            theta.accumulate_grad(dtheta)
        if dxp is not None:
            x.accumulate_grad(np.ascontiguousarray(dxp.transpose(0, 3, 1, 2)))

    return _result(np.ascontiguousarray(out.transpose(0, 3, 1, 2)), (x, theta), backward)


class GraphConvLayer:
    """Learnable weights for the partitioned graph convolution."""

    def __init__(self, name: str, num_partitions: int, in_channels: int,
                 out_channels: int, rng: np.random.Generator, dtype=np.float32):
        theta = kaiming_normal(rng, (num_partitions, in_channels, out_channels),
                               fan_in=num_partitions * in_channels, dtype=dtype)
        self.theta = Parameter(Tensor(theta), name=f"{name}.theta")

    def __call__(self, x: Tensor, adjacency: np.ndarray) -> Tensor:
        return graph_conv(x, adjacency, self.theta.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.theta]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return []


@dataclass(frozen=True)
class BlockSpec:
    """One residual block: spatial graph conv + strided temporal conv."""

    kind: str
    in_channels: int
    out_channels: int
    temporal_stride: int = 1
    is_input_block: bool = False

    def __post_init__(self):
        if self.kind not in (BASIC, BOTTLENECK):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.temporal_stride not in (1, 2):
            raise ValueError(f"temporal stride must be 1 or 2, got {self.temporal_stride}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Ordered block stack plus embedding head configuration."""

    blocks: tuple[BlockSpec, ...]
    embedding_dim: int = 128
    num_partitions: int = 3
    temporal_kernel: int = 9

    def __post_init__(self):
        if self.num_partitions not in (1, 3):
            raise ValueError(f"num_partitions must be 1 or 3, got {self.num_partitions}")
        if self.temporal_kernel % 2 == 0 or self.temporal_kernel < 1:
            raise ValueError(f"temporal kernel must be odd and positive, got {self.temporal_kernel}")
        if not self.blocks:
            raise ValueError("block list is empty")
        for prev, cur in zip(self.blocks, self.blocks[1:]):
            if prev.out_channels != cur.in_channels:
                raise ValueError(
                    f"channel break between blocks: {prev.out_channels} -> {cur.in_channels}")

    @property
    def input_channels(self) -> int:
        return self.blocks[0].in_channels

    @property
    def trunk_channels(self) -> int:
        return self.blocks[-1].out_channels

    @property
    def min_frames(self) -> int:
        frames = 1
        for b in self.blocks:
            frames *= b.temporal_stride
        return frames

    def to_dict(self) -> dict:
        return {
            "blocks": [
                {"kind": b.kind, "in_channels": b.in_channels,
                 "out_channels": b.out_channels, "temporal_stride": b.temporal_stride,
                 "is_input_block": b.is_input_block}
                for b in self.blocks
            ],
            "embedding_dim": self.embedding_dim,
            "num_partitions": self.num_partitions,
            "temporal_kernel": self.temporal_kernel,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            blocks=tuple(BlockSpec(**b) for b in d["blocks"]),
            embedding_dim=d.get("embedding_dim", 128),
            num_partitions=d.get("num_partitions", 3),
            temporal_kernel=d.get("temporal_kernel", 9),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


def spec_hash(spec: ModelSpec) -> str:
    return hashlib.sha256(spec.to_json().encode()).hexdigest()[:16]


def default_model_spec(num_partitions: int = 3, temporal_kernel: int = 9) -> ModelSpec:
    """The canonical 7-block stack: 3 -> 64 -> 64 -> 32 -> 128 -> 128 -> 256 -> 256."""
    return ModelSpec(
        blocks=(
            BlockSpec(BASIC, 3, 64, 1, is_input_block=True),
            BlockSpec(BOTTLENECK, 64, 64),
            BlockSpec(BOTTLENECK, 64, 32),
            BlockSpec(BOTTLENECK, 32, 128, temporal_stride=2),
            BlockSpec(BOTTLENECK, 128, 128),
            BlockSpec(BOTTLENECK, 128, 256, temporal_stride=2),
            BlockSpec(BOTTLENECK, 256, 256),
        ),
        embedding_dim=128,
        num_partitions=num_partitions,
        temporal_kernel=temporal_kernel,
    )


def scale_model_spec(spec: ModelSpec, channel_scale: float, min_channels: int = 4) -> ModelSpec:
    """Shrink trunk widths and embedding dim by a multiplier (input stays 3)."""
    if channel_scale <= 0:
        raise ValueError("channel_scale must be positive")

    def scaled(c: int) -> int:
        return max(min_channels, int(round(c * channel_scale)))

    blocks = []
    for i, b in enumerate(spec.blocks):
        in_ch = b.in_channels if i == 0 else blocks[-1].out_channels
        blocks.append(BlockSpec(b.kind, in_ch, scaled(b.out_channels),
                                b.temporal_stride, b.is_input_block))
    return ModelSpec(blocks=tuple(blocks),
                     embedding_dim=scaled(spec.embedding_dim),
                     num_partitions=spec.num_partitions,
                     temporal_kernel=spec.temporal_kernel)


def bottleneck_width(out_channels: int) -> int:
    """Inner width for bottleneck blocks: reduction rate 8, floored at 4."""
    return max(out_channels // 8, 4)


class ResGCNBlock:
    """Graph conv + temporal conv with a residual connection.

    Basic form:      BN -> GCN -> BN -> ReLU -> TCN(stride) -> BN -> ReLU
    Bottleneck form: the same pair wrapped in 1x1 reduce/expand convolutions.
    The residual is the identity when shape is preserved, a strided 1x1
    convolution otherwise, and absent on the input block.
    """

    def __init__(self, name: str, spec: BlockSpec, num_partitions: int,
                 temporal_kernel: int, rng: np.random.Generator, dtype=np.float32):
        self.spec = spec
        cin, cout, stride = spec.in_channels, spec.out_channels, spec.temporal_stride
        self.bn_in = BatchNorm(f"{name}.bn_in", cin, dtype)
        mid = cout if spec.kind == BASIC else bottleneck_width(cout)
        if spec.kind == BOTTLENECK:
            self.reduce = TemporalConv(f"{name}.reduce", cin, mid, 1, 1, rng, dtype)
            self.bn_reduce = BatchNorm(f"{name}.bn_reduce", mid, dtype)
            self.expand = TemporalConv(f"{name}.expand", mid, cout, 1, 1, rng, dtype)
        else:
            self.reduce = None
            self.bn_reduce = None
            self.expand = None
        gcn_in = cin if spec.kind == BASIC else mid
        gcn_out = cout if spec.kind == BASIC else mid
        self.gcn = GraphConvLayer(f"{name}.gcn", num_partitions, gcn_in, gcn_out, rng, dtype)
        self.bn_gcn = BatchNorm(f"{name}.bn_gcn", gcn_out, dtype)
        self.tcn = TemporalConv(f"{name}.tcn", gcn_out, gcn_out, temporal_kernel, stride, rng, dtype)
        self.bn_tcn = BatchNorm(f"{name}.bn_tcn", gcn_out, dtype)
        if spec.is_input_block:
            self.residual = None
        elif cin == cout and stride == 1:
            self.residual = "identity"
        else:
            self.residual = TemporalConv(f"{name}.residual", cin, cout, 1, stride, rng, dtype)

    def __call__(self, x: Tensor, adjacency: np.ndarray, training: bool) -> Tensor:
        if x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"block expects {self.spec.in_channels} channels, got {x.shape[1]}")
        h = self.bn_in(x, training)
        if self.reduce is not None:
            h = relu(self.bn_reduce(self.reduce(h), training))
        h = relu(self.bn_gcn(self.gcn(h, adjacency), training))
        h = relu(self.bn_tcn(self.tcn(h), training))
        if self.expand is not None:
            h = self.expand(h)
        if self.residual is None:
            return h
        res = x if self.residual == "identity" else self.residual(x)
        return add(h, res)

    def _layers(self):
        layers = [self.bn_in, self.reduce, self.bn_reduce, self.gcn, self.bn_gcn,
                  self.tcn, self.bn_tcn, self.expand]
        if isinstance(self.residual, TemporalConv):
            layers.append(self.residual)
        return [l for l in layers if l is not None]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self._layers() for p in layer.parameters()]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [b for layer in self._layers() for b in layer.buffers()]


def _to_channel_major(x: Tensor) -> Tensor:
    """(B, T, N, C) -> (B, C, T, N) with gradient pass-through."""

    def backward(g):
        x.accumulate_grad(np.ascontiguousarray(g.transpose(0, 2, 3, 1)))

    return _result(np.ascontiguousarray(x.data.transpose(0, 3, 1, 2)), (x,), backward)


class GaitEncoder:
    """Maps a batch of pose windows (B, T, N, C) to unit-norm embeddings."""

    def __init__(self, spec: ModelSpec, topology: SkeletonTopology | None = None,
                 seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.topology = topology or build_coco17_topology()
        self.dtype = dtype
        adj_set = (spatial_partition(self.topology) if spec.num_partitions == 3
                   else single_partition(self.topology))
        self.adjacency = adj_set.stacked(dtype)
        rng = np.random.default_rng(seed)
        self.input_bn = BatchNorm("input_bn", spec.input_channels, dtype)
        self.blocks = [
            ResGCNBlock(f"blocks.{i}", b, spec.num_partitions, spec.temporal_kernel, rng, dtype)
            for i, b in enumerate(spec.blocks)
        ]
        self.head = Linear("head", spec.trunk_channels, spec.embedding_dim, rng, dtype)

    def forward(self, x, training: bool = False) -> Tensor:
        """Embed (B, T, N, C) pose windows; output is (B, embedding_dim), unit rows."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 4:
            raise ShapeError(f"expected (B, T, N, C) input, got shape {x.shape}")
        _, t_len, n, c = x.shape
        if n != self.topology.num_joints:
            raise ShapeError(f"expected {self.topology.num_joints} joints, got {n}")
        if c != self.spec.input_channels:
            raise ShapeError(f"expected {self.spec.input_channels} input channels, got {c}")
        if t_len < self.spec.min_frames:
            raise ShapeError(f"sequence too short: {t_len} < {self.spec.min_frames} frames")
        h = _to_channel_major(x)
        h = self.input_bn(h, training)
        for block in self.blocks:
            h = block(h, self.adjacency, training)
        pooled = global_avg_pool(h)
        return l2_normalize_rows(self.head(pooled))

    __call__ = forward

    def parameters(self) -> list[Parameter]:
        params = self.input_bn.parameters()
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend(self.head.parameters())
        names = [p.name for p in params]
        assert len(names) == len(set(names)), "duplicate parameter names"
        return params

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        bufs = self.input_bn.buffers()
        for block in self.blocks:
            bufs.extend(block.buffers())
        return bufs

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All persistent state in a stable order: parameters then buffers."""
        return [(p.name, p.data) for p in self.parameters()] + self.buffers()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.tensor.grad = None


def shape_trace(spec: ModelSpec, input_shape: tuple[int, int, int] = (60, 17, 3)):
    """Per-module output dimensions without allocating activations.

    Returns (group label, module label, dims) rows; dims are (T, N, C) for
    trunk modules and (1, C) for the pooling and embedding head.
    """
    t_len, n, c = input_shape
    if c != spec.input_channels:
        raise ShapeError(f"expected {spec.input_channels} input channels, got {c}")
    if t_len < spec.min_frames:
        raise ShapeError(f"sequence too short: {t_len} < {spec.min_frames} frames")
    rows = [("Block 0", "BatchNorm", (t_len, n, c))]
    group = 1
    strided_seen = False
    for block in spec.blocks:
        if block.temporal_stride > 1 and not strided_seen:
            strided_seen = True
            group += 1
        t_len = -(-t_len // block.temporal_stride)
        label = "Basic" if block.kind == BASIC else "Bottleneck"
        rows.append((f"Block {group}", label, (t_len, n, block.out_channels)))
    final_group = f"Block {group + 1}"
    rows.append((final_group, "AvgPool2D", (1, spec.trunk_channels)))
    rows.append((final_group, "FCN", (1, spec.embedding_dim)))
    return rows
