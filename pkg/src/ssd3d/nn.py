"""Dense layers, ball-query grouping, set-abstraction layers and the toy backbone."""

from __future__ import annotations

import io
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numba
import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .core import PointCloud
from .sampling import SampleResult, SamplingConfig, fps


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths including the input width, e.g. ``(3, 16, 32)``."""

    widths: Tuple[int, ...]
    seed: int = 0
    last_activation: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs an input width and at least one layer")
        if any(w < 1 for w in widths):
            raise ValueError("MLP widths must be positive")
        object.__setattr__(self, "widths", widths)

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]


@dataclass(frozen=True)
class SaLayerSpec:
    sampling: SamplingConfig
    radius: float
    max_neighbors: int
    mlp: MlpSpec

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if self.max_neighbors < 1:
            raise ValueError("max_neighbors must be >= 1")


@dataclass(frozen=True)
class BackboneSpec:
    layers: Tuple[SaLayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.sampling.n_out > prev.sampling.n_out:
                raise ValueError("each SA layer must keep at most as many points as the one before")


class ParamStore(OrderedDict):
    """Named parameter values, in registration order."""

    def register(self, name: str, data) -> Value:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        v = ad.parameter(data, name)
        self[name] = v
        return v

    def zero_grad(self) -> None:
        for v in self.values():
            v.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.items())

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self) - set(state)
        extra = set(state) - set(self)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, v in self.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != v.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {v.data.shape}")
            v.data = arr.copy()


def init_mlp(store: ParamStore, prefix: str, spec: MlpSpec) -> List[Tuple[Value, Value]]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = store.register(f"{prefix}.{i}.weight", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        b = store.register(f"{prefix}.{i}.bias", rng.uniform(-bound, bound, size=(fan_out,)))
        layers.append((w, b))
    return layers


def mlp_forward(spec: MlpSpec, layers: Sequence[Tuple[Value, Value]], x) -> Value:
    """Affine + ReLU per layer; the last layer is linear unless ``spec.last_activation``."""
    x = ad.as_value(x)
    if x.data.ndim != 2 or x.shape[1] != spec.in_width:
        raise ValueError(f"MLP expects (n, {spec.in_width}) input, got {x.shape}")
    n = len(layers)
    for i, (w, b) in enumerate(layers):
        x = ad.matmul(x, w) + b
        if i < n - 1 or spec.last_activation:
            x = ad.relu(x)
    return x


@numba.njit(cache=True)
def _ball_query_kernel(centers, cloud, radius, k):
    m = centers.shape[0]
    n = cloud.shape[0]
    out = np.zeros((m, k), dtype=np.int64)
    valid = np.zeros(m, dtype=np.bool_)
    best_d = np.empty(k)
    best_i = np.empty(k, dtype=np.int64)
    for c in range(m):
        cnt = 0
        x0, y0, z0 = centers[c, 0], centers[c, 1], centers[c, 2]
        for i in range(n):
            dx = x0 - cloud[i, 0]
            dy = y0 - cloud[i, 1]
            dz = z0 - cloud[i, 2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d > radius:
                continue
            # insertion into a sorted list; equal distances keep scan (index) order
            if cnt < k:
                pos = cnt
                cnt += 1
            elif d < best_d[k - 1]:
                pos = k - 1
            else:
                continue
            while pos > 0 and best_d[pos - 1] > d:
                best_d[pos] = best_d[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_i[pos] = i
        if cnt == 0:
            continue
        valid[c] = True
        for j in range(k):
            out[c, j] = best_i[j] if j < cnt else best_i[0]
    return out, valid


def _check_query(centers, cloud, radius):
    if not radius > 0:
        raise ValueError("radius must be positive")
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    cloud = np.ascontiguousarray(cloud, dtype=np.float64).reshape(-1, 3)
    return centers, cloud


def ball_query(centers: np.ndarray, cloud: np.ndarray, radius: float, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Up to ``k`` neighbours within ``radius`` of each center.

    Neighbours are ordered by distance, then index. Short lists repeat the nearest
    neighbour; centers with no neighbour get an all-zero row and ``valid=False``.
    """
    centers, cloud = _check_query(centers, cloud, radius)
    if k < 1:
        raise ValueError("k must be >= 1")
    return _ball_query_kernel(centers, cloud, float(radius), int(k))


def ball_query_reference(centers: np.ndarray, cloud: np.ndarray, radius: float, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Dense-matrix version of ``ball_query`` (full sort per row), kept as a test oracle."""
    centers, cloud = _check_query(centers, cloud, radius)
    m = len(centers)
    if m == 0 or len(cloud) == 0:
        return np.zeros((m, k), dtype=np.int64), np.zeros(m, dtype=bool)
    diff = centers[:, None, :] - cloud[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    inside = dist <= radius
    count = inside.sum(1)
    keyed = np.where(inside, dist, np.inf)
    order = np.argsort(keyed, axis=1, kind="stable")
    if order.shape[1] < k:
        order = np.concatenate([order, np.repeat(order[:, :1], k - order.shape[1], axis=1)], axis=1)
    order = order[:, :k]
    slot = np.arange(k)[None, :]
    order = np.where(slot < count[:, None], order, order[:, :1])
    valid = count > 0
    order[~valid] = 0
    return order.astype(np.int64), valid


class SelectionCache:
    """Records discrete choices (samples, neighbours) so a forward pass can be replayed
    with the same choices, which makes finite differences well defined."""

    def __init__(self):
        self.store: Dict[str, object] = {}
        self.replay = False

    def get(self, key: str, fn):
        if self.replay:
            return self.store[key]
        out = fn()
        self.store[key] = out
        return out


def _select(cache: Optional[SelectionCache], key: str, fn):
    return fn() if cache is None else cache.get(key, fn)


@dataclass
class SaOutput:
    xyz: np.ndarray
    features: Value
    sample: SampleResult
    valid: np.ndarray


def sa_layer(
    spec: SaLayerSpec,
    layers: Sequence[Tuple[Value, Value]],
    xyz: np.ndarray,
    features: Optional[Value],
    sampling_features: Optional[np.ndarray] = None,
    cache: Optional[SelectionCache] = None,
    name: str = "sa",
) -> SaOutput:
    """Sample centers, group neighbours within the ball, shared MLP, max-pool.

    ``sampling_features`` feed F-FPS; when omitted the current features are used.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    if sampling_features is None and features is not None:
        sampling_features = features.data
    cfg = spec.sampling

    def sample():
        cloud = PointCloud(xyz, features=sampling_features, check_finite=False)
        return fps(cloud, cfg)

    res = _select(cache, f"{name}.sample", sample)
    centers = xyz[res.indices]
    nbr, valid = _select(cache, f"{name}.group", lambda: ball_query(centers, xyz, spec.radius, spec.max_neighbors))
    feats = group_and_pool(spec.mlp, layers, xyz, features, centers, nbr, valid)
    return SaOutput(centers, feats, res, valid)


def group_and_pool(mlp: MlpSpec, layers, xyz, features: Optional[Value], centers, nbr: np.ndarray, valid: np.ndarray, scale: float = 1.0) -> Value:
    """Concatenate (neighbour - center) * scale with neighbour features, apply MLP, max-pool."""
    m, k = nbr.shape
    rel = ad.as_value(xyz[nbr]) - ad.reshape(ad.as_value(centers), (m, 1, 3))
    if scale != 1.0:
        rel = rel * scale
    parts = [ad.reshape(rel, (m * k, 3))]
    if features is not None:
        parts.append(ad.gather_rows(features, nbr.reshape(-1)))
    grouped = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
    h = mlp_forward(mlp, layers, grouped)
    pooled = ad.vmax(ad.reshape(h, (m, k, mlp.out_width)), axis=1)
    if not valid.all():
        pooled = pooled * valid[:, None].astype(np.float64)
    return pooled


@dataclass
class BackboneOutput:
    xyz: np.ndarray
    features: Value
    origin: np.ndarray
    layers: List[SaOutput] = field(default_factory=list)


class Backbone:
    """Stack of SA layers; the first layer groups raw points (optionally with reflectance)."""

    def __init__(self, spec: BackboneSpec, store: ParamStore, use_reflectance: bool = False, prefix: str = "backbone"):
        self.spec = spec
        self.use_reflectance = use_reflectance
        self.layers = [init_mlp(store, f"{prefix}.sa{i}", layer.mlp) for i, layer in enumerate(spec.layers)]

    def __call__(self, cloud: PointCloud, cache: Optional[SelectionCache] = None) -> BackboneOutput:
        xyz = cloud.xyz
        feats = None
        if self.use_reflectance:
            if cloud.reflectance is None:
                raise ValueError("backbone configured for reflectance but cloud has none")
            feats = ad.as_value(cloud.reflectance[:, None])
        raw = cloud.raw_channels()
        outs = []
        origin = None
        for i, (spec, layers) in enumerate(zip(self.spec.layers, self.layers)):
            # first layer has no learned features yet: F-FPS falls back to raw channels
            samp = raw if i == 0 else None
            out = sa_layer(spec, layers, xyz, feats, samp, cache, name=f"sa{i}")
            outs.append(out)
            xyz, feats = out.xyz, out.features
            origin = out.sample.origin
        return BackboneOutput(xyz, feats, origin, outs)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"SSD3DCKP"
CKPT_VERSION = 1


def save_checkpoint(path, state: Mapping[str, np.ndarray], meta: Optional[Mapping[str, str]] = None) -> None:
    """Write named float64 tensors to a small deterministic binary container.

    Layout (little endian): magic, u32 version, u32 meta count, meta entries as
    (u32 len, utf-8 key, u32 len, utf-8 value), u32 tensor count, then per tensor
    (u32 name len, utf-8 name, u32 ndim, u64 dims..., float64 data in C order).
    """
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(state, meta))


def checkpoint_bytes(state: Mapping[str, np.ndarray], meta: Optional[Mapping[str, str]] = None) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    meta = dict(meta or {})
    buf.write(struct.pack("<I", len(meta)))
    for k in sorted(meta):
        for s in (k, str(meta[k])):
            b = s.encode("utf-8")
            buf.write(struct.pack("<I", len(b)))
            buf.write(b)
    buf.write(struct.pack("<I", len(state)))
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def load_checkpoint(path) -> Tuple["OrderedDict[str, np.ndarray]", Dict[str, str]]:
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    if bytes(view[:8]) != CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    pos = 8

    def u32():
        nonlocal pos
        (v,) = struct.unpack_from("<I", data, pos)
        pos += 4
        return v

    def text():
        nonlocal pos
        n = u32()
        s = bytes(view[pos : pos + n]).decode("utf-8")
        pos += n
        return s

    version = u32()
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    meta = {}
    for _ in range(u32()):
        k = text()
        meta[k] = text()
    state = OrderedDict()
    for _ in range(u32()):
        name = text()
        ndim = u32()
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
        state[name] = arr
    if pos != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return state, meta
