"""ResNet-style bottleneck backbones with swappable spatial filters.

Four downsampling arrangements are supported: the original network
(stride in each stage's first 1x1 convolution), variant B (stride moved
into the spatial filter), variant D (B plus average pooling on the skip
path and a deep three-conv stem), and variant E (original stride
placement, deep stem without the max pool, and a low-pass downsampling
filter inserted before every striding stage).

A checkpoint is a versioned binary file: magic ``CADA``, a u32 format
version, the backbone config as canonical text, then named float32
little-endian blobs (params and BN running stats) in declaration order.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .canet import (ConstantAttentionFilter, ContextAttentionFilter,
                    ContextMapNet, ConstantMapNet, MultiHeadDwConv)
from .errors import CheckpointError, ConfigurationError
from .layers import (AvgPool2d, BatchNorm2d, Conv2d, GlobalAvgPool, Layer,
                     Linear, MaxPool2d, ReLU, Sequential)
from .lowpass import make_downsampling_filter

VARIANTS = ("original", "b", "d", "e")
STEMS = ("auto", "classic", "deep", "deep-nopool")
SPATIAL_FILTERS = ("conv3x3", "dwconv", "cada", "cadasp", "da", "dasp")
DOWNSAMPLING_FILTERS = ("ideal", "box", "binomial3", "avgpool", "dwconv",
                        "cadasp")
NORM_ACTS = ("auto", "none", "bn", "relu", "bn+relu")

CHECKPOINT_MAGIC = b"CADA"
CHECKPOINT_VERSION = 1


@dataclass
class StageConfig:
    blocks: int
    width: int
    stride: int = 1
    filter: str = "conv3x3"
    bases: int = 4
    head_channels: int = 8
    ca_kernel: int = 3
    agg_kernel: int = 7
    norm_act: str = "auto"
    pos_encoding: bool = True

    def resolved_norm_act(self):
        if self.norm_act != "auto":
            return self.norm_act
        return "bn+relu" if self.filter == "conv3x3" else "none"

    def validate(self, idx):
        where = f"stage{idx}"
        if self.blocks < 1:
            raise ConfigurationError(f"{where}: blocks must be >= 1")
        if self.width < 1:
            raise ConfigurationError(f"{where}: width must be >= 1")
        if self.stride not in (1, 2):
            raise ConfigurationError(f"{where}: stride must be 1 or 2")
        if self.filter not in SPATIAL_FILTERS:
            raise ConfigurationError(
                f"{where}: unknown spatial filter {self.filter!r}")
        if self.norm_act not in NORM_ACTS:
            raise ConfigurationError(
                f"{where}: norm_act must be one of {NORM_ACTS}")
        if self.filter != "conv3x3":
            if self.head_channels < 1 or self.width % self.head_channels:
                raise ConfigurationError(
                    f"{where}: head_channels={self.head_channels} must divide "
                    f"width={self.width}")
            if self.agg_kernel % 2 == 0:
                raise ConfigurationError(
                    f"{where}: aggregation kernel G={self.agg_kernel} must be odd")
        if self.filter in ("cada", "cadasp", "da", "dasp"):
            if self.bases < 1:
                raise ConfigurationError(f"{where}: bases must be >= 1")
            if self.ca_kernel % 2 == 0:
                raise ConfigurationError(
                    f"{where}: context kernel T={self.ca_kernel} must be odd")


@dataclass
class DownsampleSpec:
    kind: str = "ideal"
    k: int = 3
    head_channels: int = 0          # 0 means one head over all channels
    bases: int = 8
    ca_kernel: int = 3
    geometry: str = "square"

    def validate(self):
        if self.kind not in DOWNSAMPLING_FILTERS:
            raise ConfigurationError(
                f"downsample: unknown filter kind {self.kind!r}")
        if self.kind == "avgpool" and self.k not in (2, 3, 5):
            raise ConfigurationError(
                f"downsample: avgpool size k={self.k} must be 2, 3, or 5")
        if self.kind in ("dwconv", "cadasp") and self.k % 2 == 0:
            raise ConfigurationError(
                f"downsample: kernel k={self.k} must be odd")
        if self.kind == "cadasp" and self.ca_kernel % 2 == 0:
            raise ConfigurationError(
                f"downsample: context kernel {self.ca_kernel} must be odd")


@dataclass
class BackboneConfig:
    variant: str = "d"
    stem: str = "auto"
    num_classes: int = 10
    input_hw: tuple = (224, 224)
    stages: tuple = field(default_factory=tuple)
    downsample: DownsampleSpec | None = None

    def resolved_stem(self):
        if self.stem != "auto":
            return self.stem
        return {"original": "classic", "b": "classic", "d": "deep",
                "e": "deep-nopool"}[self.variant]

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.stem not in STEMS:
            raise ConfigurationError(f"unknown stem {self.stem!r}")
        if not self.stages:
            raise ConfigurationError("at least one stage is required")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        for i, st in enumerate(self.stages, 1):
            st.validate(i)
        if self.variant == "e" and self.downsample is None:
            raise ConfigurationError(
                "variant e inserts a downsampling filter before each "
                "striding stage; set the downsample section")
        if self.variant != "e" and self.downsample is not None:
            raise ConfigurationError(
                "downsampling filters are only valid for variant e")
        if self.downsample is not None:
            self.downsample.validate()


def resnet50_stages(**overrides):
    """The 50-layer bottleneck stage layout (3,4,6,3 blocks)."""
    base = dict(filter="conv3x3")
    base.update(overrides)
    widths = (64, 128, 256, 512)
    blocks = (3, 4, 6, 3)
    strides = (1, 2, 2, 2)
    return tuple(StageConfig(blocks=b, width=w, stride=s, **base)
                 for b, w, s in zip(blocks, widths, strides))


def _make_spatial_filter(cfg, width, stride, rng, dtype):
    kind = cfg.filter
    if kind == "conv3x3":
        return Conv2d(width, width, 3, stride=stride, padding=1, bias=False,
                      rng=rng, dtype=dtype)
    if kind == "dwconv":
        return MultiHeadDwConv(width, cfg.head_channels, cfg.agg_kernel,
                               stride=stride, bias=False, rng=rng, dtype=dtype)
    if kind in ("cada", "cadasp"):
        return ContextAttentionFilter(
            width, cfg.head_channels, cfg.bases, cfg.ca_kernel,
            cfg.agg_kernel, stride=stride, shared=(kind == "cadasp"),
            pos_encoding=cfg.pos_encoding, rng=rng, dtype=dtype)
    if kind in ("da", "dasp"):
        return ConstantAttentionFilter(
            width, cfg.head_channels, cfg.bases, cfg.ca_kernel,
            cfg.agg_kernel, stride=stride, shared=(kind == "dasp"),
            pos_encoding=cfg.pos_encoding, rng=rng, dtype=dtype)
    raise ConfigurationError(f"unknown spatial filter kind {kind!r}")


class Bottleneck(Layer):
    """1x1 reduce -> (optional BN/ReLU) -> spatial filter -> BN/ReLU ->
    1x1 expand -> BN -> add skip -> ReLU.

    Stride lives in the first 1x1 for the original/E arrangements and in
    the spatial filter for B/D; variant D average-pools the skip path
    before its 1x1 projection.
    """

    def __init__(self, c_in, stage_cfg, stride, variant, rng, dtype):
        super().__init__()
        width = stage_cfg.width
        c_out = 4 * width
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        s1, s2 = (stride, 1) if variant in ("original", "e") else (1, stride)
        self.pre_bn = None
        self.pre_act = None
        self.skip_pool = None
        self.skip_conv = None
        self.skip_bn = None

        self.conv1 = Conv2d(c_in, width, 1, stride=s1, padding=0, bias=False,
                            rng=rng, dtype=dtype)
        norm_act = stage_cfg.resolved_norm_act()
        if norm_act in ("bn", "bn+relu"):
            self.pre_bn = BatchNorm2d(width, dtype=dtype)
        if norm_act in ("relu", "bn+relu"):
            self.pre_act = ReLU()
        self.filter = _make_spatial_filter(stage_cfg, width, s2, rng, dtype)
        self.bn2 = BatchNorm2d(width, dtype=dtype)
        self.act2 = ReLU()
        self.conv3 = Conv2d(width, c_out, 1, stride=1, padding=0, bias=False,
                            rng=rng, dtype=dtype)
        self.bn3 = BatchNorm2d(c_out, dtype=dtype)
        if stride != 1 or c_in != c_out:
            if variant == "d" and stride != 1:
                self.skip_pool = AvgPool2d(2, 2)
                skip_stride = 1
            else:
                skip_stride = stride
            self.skip_conv = Conv2d(c_in, c_out, 1, stride=skip_stride,
                                    padding=0, bias=False, rng=rng,
                                    dtype=dtype)
            self.skip_bn = BatchNorm2d(c_out, dtype=dtype)
        self._x = None
        self._pre_act_sum = None

    def forward(self, x, train=False):
        self._x = x
        z = self.conv1.forward(x, train)
        if self.pre_bn is not None:
            z = self.pre_bn.forward(z, train)
        if self.pre_act is not None:
            z = self.pre_act.forward(z, train)
        z = self.filter.forward(z, train)
        z = self.bn2.forward(z, train)
        z = self.act2.forward(z, train)
        z = self.conv3.forward(z, train)
        z = self.bn3.forward(z, train)
        if self.skip_conv is not None:
            s = x
            if self.skip_pool is not None:
                s = self.skip_pool.forward(s, train)
            s = self.skip_conv.forward(s, train)
            s = self.skip_bn.forward(s, train)
        else:
            s = x
        if z.shape != s.shape:
            raise ConfigurationError(
                f"residual add mismatch: main {z.shape} vs skip {s.shape} "
                f"(feature sizes must stay even ahead of stride-2 blocks)")
        y = z + s
        self._pre_act_sum = y
        return ops.relu(y)

    def backward(self, grad_out):
        g = ops.relu_backward(grad_out, self._pre_act_sum)
        if self.skip_conv is not None:
            gs = self.skip_bn.backward(g)
            gs = self.skip_conv.backward(gs)
            if self.skip_pool is not None:
                gs = self.skip_pool.backward(gs)
        else:
            gs = g
        gm = self.bn3.backward(g)
        gm = self.conv3.backward(gm)
        gm = self.act2.backward(gm)
        gm = self.bn2.backward(gm)
        gm = self.filter.backward(gm)
        if self.pre_act is not None:
            gm = self.pre_act.backward(gm)
        if self.pre_bn is not None:
            gm = self.pre_bn.backward(gm)
        gm = self.conv1.backward(gm)
        return gm + gs

    def profile_rows(self, name, in_shape, rows):
        shape = self.conv1.profile_rows(name + ".conv1", in_shape, rows)
        if self.pre_bn is not None:
            shape = self.pre_bn.profile_rows(name + ".pre_bn", shape, rows)
        shape = self.filter.profile_rows(name + ".filter", shape, rows)
        shape = self.bn2.profile_rows(name + ".bn2", shape, rows)
        shape = self.conv3.profile_rows(name + ".conv3", shape, rows)
        out = self.bn3.profile_rows(name + ".bn3", shape, rows)
        if self.skip_conv is not None:
            sshape = in_shape
            if self.skip_pool is not None:
                sshape = self.skip_pool.profile_rows(name + ".skip_pool",
                                                     sshape, rows)
            sshape = self.skip_conv.profile_rows(name + ".skip_conv", sshape,
                                                 rows)
            self.skip_bn.profile_rows(name + ".skip_bn", sshape, rows)
        return out


def _make_stem(kind, width, rng, dtype):
    if kind == "classic":
        return Sequential(
            conv=Conv2d(3, width, 7, stride=2, padding=3, bias=False,
                        rng=rng, dtype=dtype),
            bn=BatchNorm2d(width, dtype=dtype),
            act=ReLU(),
            pool=MaxPool2d(3, 2, 1),
        )
    mid = max(width // 2, 1)
    layers = dict(
        conv1=Conv2d(3, mid, 3, stride=2, padding=1, bias=False, rng=rng,
                     dtype=dtype),
        bn1=BatchNorm2d(mid, dtype=dtype),
        act1=ReLU(),
        conv2=Conv2d(mid, mid, 3, stride=1, padding=1, bias=False, rng=rng,
                     dtype=dtype),
        bn2=BatchNorm2d(mid, dtype=dtype),
        act2=ReLU(),
        conv3=Conv2d(mid, width, 3, stride=1, padding=1, bias=False, rng=rng,
                     dtype=dtype),
        bn3=BatchNorm2d(width, dtype=dtype),
        act3=ReLU(),
    )
    if kind == "deep":
        layers["pool"] = MaxPool2d(3, 2, 1)
    elif kind != "deep-nopool":
        raise ConfigurationError(f"unknown stem {kind!r}")
    return Sequential(**layers)


class Backbone(Layer):
    def __init__(self, config, rng=None, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        rng = rng or np.random.default_rng(0)
        stem_width = config.stages[0].width
        self.stem = _make_stem(config.resolved_stem(), stem_width, rng, dtype)
        c_in = stem_width
        for idx, st in enumerate(config.stages, 1):
            if config.variant == "e" and st.stride == 2:
                ds = config.downsample
                hc = ds.head_channels or c_in
                setattr(self, f"down{idx}", make_downsampling_filter(
                    ds.kind, c_in, k=ds.k, head_channels=hc, bases=ds.bases,
                    ca_kernel=ds.ca_kernel, geometry=ds.geometry, rng=rng,
                    dtype=dtype))
            blocks = {}
            for b in range(1, st.blocks + 1):
                stride = st.stride if b == 1 else 1
                blocks[f"block{b}"] = Bottleneck(c_in, st, stride,
                                                 config.variant, rng, dtype)
                c_in = 4 * st.width
            setattr(self, f"stage{idx}", Sequential(**blocks))
        self.gap = GlobalAvgPool()
        self.fc = Linear(c_in, config.num_classes, bias=True, rng=rng,
                         dtype=dtype)

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ConfigurationError(
                f"backbone expects (N, 3, H, W) input, got {x.shape}")
        for child in self._children.values():
            x = child.forward(x, train)
        return x

    def backward(self, grad_out):
        for child in reversed(list(self._children.values())):
            grad_out = child.backward(grad_out)
        return grad_out

    def map_networks(self):
        """Named context/seed networks, for pruning and correlation."""
        nets = []
        for name, child in self.named_children():
            if isinstance(child, (ContextMapNet, ConstantMapNet)):
                nets.append((name, child))
        return nets

    def dw_kernels(self):
        """Named per-head depthwise kernels, for spectra export."""
        out = []
        for name, child in self.named_children():
            if isinstance(child, MultiHeadDwConv):
                for h in range(child.weight.data.shape[0]):
                    out.append((f"{name}.head{h}", child.weight.data[h]))
        return out


def build(config, seed=0, dtype=np.float32):
    return Backbone(config, np.random.default_rng(seed), dtype)


# ---------------------------------------------------------------------------
# Config <-> flat key serialization (the checkpoint's canonical text).

def backbone_to_keys(config):
    keys = {
        "backbone.variant": config.variant,
        "backbone.stem": config.stem,
        "backbone.num_classes": str(config.num_classes),
        "backbone.input_hw": f"{config.input_hw[0]}x{config.input_hw[1]}",
    }
    for i, st in enumerate(config.stages, 1):
        p = f"stage{i}."
        keys[p + "blocks"] = str(st.blocks)
        keys[p + "width"] = str(st.width)
        keys[p + "stride"] = str(st.stride)
        keys[p + "filter"] = st.filter
        keys[p + "bases"] = str(st.bases)
        keys[p + "head_channels"] = str(st.head_channels)
        keys[p + "ca_kernel"] = str(st.ca_kernel)
        keys[p + "agg_kernel"] = str(st.agg_kernel)
        keys[p + "norm_act"] = st.norm_act
        keys[p + "pos_encoding"] = "true" if st.pos_encoding else "false"
    if config.downsample is not None:
        ds = config.downsample
        keys["downsample.kind"] = ds.kind
        keys["downsample.k"] = str(ds.k)
        keys["downsample.head_channels"] = str(ds.head_channels)
        keys["downsample.bases"] = str(ds.bases)
        keys["downsample.ca_kernel"] = str(ds.ca_kernel)
        keys["downsample.geometry"] = ds.geometry
    return keys


def keys_to_backbone(keys):
    def get(name, default=None):
        return keys.get(name, default)

    hw = get("backbone.input_hw", "224x224")
    parts = hw.split("x") if "x" in hw else [hw, hw]
    input_hw = (int(parts[0]), int(parts[1]))
    stages = []
    i = 1
    while f"stage{i}.width" in keys:
        p = f"stage{i}."
        stages.append(StageConfig(
            blocks=int(get(p + "blocks", "1")),
            width=int(get(p + "width")),
            stride=int(get(p + "stride", "1")),
            filter=get(p + "filter", "conv3x3"),
            bases=int(get(p + "bases", "4")),
            head_channels=int(get(p + "head_channels", "8")),
            ca_kernel=int(get(p + "ca_kernel", "3")),
            agg_kernel=int(get(p + "agg_kernel", "7")),
            norm_act=get(p + "norm_act", "auto"),
            pos_encoding=get(p + "pos_encoding", "true") == "true",
        ))
        i += 1
    downsample = None
    if "downsample.kind" in keys:
        downsample = DownsampleSpec(
            kind=get("downsample.kind"),
            k=int(get("downsample.k", "3")),
            head_channels=int(get("downsample.head_channels", "0")),
            bases=int(get("downsample.bases", "8")),
            ca_kernel=int(get("downsample.ca_kernel", "3")),
            geometry=get("downsample.geometry", "square"),
        )
    return BackboneConfig(
        variant=get("backbone.variant", "d"),
        stem=get("backbone.stem", "auto"),
        num_classes=int(get("backbone.num_classes", "10")),
        input_hw=input_hw,
        stages=tuple(stages),
        downsample=downsample,
    )


def canonical_text(keys):
    lines = (f"{k} = {v}" for k, v in sorted(keys.items()))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Checkpoint IO.

def save_checkpoint(model, path):
    """Write magic, version, config text, then named f32 LE blobs."""
    text = canonical_text(backbone_to_keys(model.config)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        for name, arr in model.named_arrays():
            nm = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nm)))
            fh.write(nm)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            data = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(data.tobytes())


def load_checkpoint(path, seed=0, dtype=np.float32):
    """Rebuild the model from the embedded config and restore all blobs."""
    with open(path, "rb") as fh:
        def need(n, what):
            raw = fh.read(n)
            if len(raw) != n:
                raise CheckpointError(f"truncated checkpoint at {what}")
            return raw

        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(
                f"bad checkpoint magic {magic!r} (expected {CHECKPOINT_MAGIC!r})")
        (version,) = struct.unpack("<I", need(4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {version} not supported "
                f"(expected {CHECKPOINT_VERSION})", version_mismatch=True)
        (tlen,) = struct.unpack("<Q", need(8, "config length"))
        text = need(tlen, "config text").decode("utf-8")
        keys = {}
        for line in text.splitlines():
            if line.strip():
                k, _, v = line.partition(" = ")
                keys[k.strip()] = v.strip()
        config = keys_to_backbone(keys)
        model = build(config, seed=seed, dtype=dtype)
        for name, arr in model.named_arrays():
            (nlen,) = struct.unpack("<I", need(4, name))
            got = need(nlen, name).decode("utf-8")
            if got != name:
                raise CheckpointError(
                    f"checkpoint blob order mismatch: expected {name}, "
                    f"found {got}")
            (ndim,) = struct.unpack("<I", need(4, name))
            shape = struct.unpack(f"<{ndim}I", need(4 * ndim, name))
            if tuple(shape) != tuple(arr.shape):
                raise CheckpointError(
                    f"shape mismatch for {name}: file {shape}, model {arr.shape}")
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(need(count * 4, name), dtype="<f4")
            arr[...] = data.reshape(shape).astype(arr.dtype, copy=False)
        if fh.read(1):
            raise CheckpointError("trailing bytes after final blob")
    return model
