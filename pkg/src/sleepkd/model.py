"""U-shaped 1-D segmentation network with a per-epoch classifier head.

Five encoder blocks (two conv-BN-ELU subblocks each, then max pool by
2), a two-subblock bottleneck, five mirrored decoder blocks (nearest
upsample by 2, skip concat, two subblocks), then a head that average
pools the dense per-sample map down to one position per scoring epoch
and applies two pointwise convolutions.

Input length is padded symmetrically to a multiple of 32 so the five
pools halve evenly; the dense map is cropped back before the head, so
any whole number of epochs works at inference.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffArray
from .errors import ConfigError, DataError, ShapeError

DEPTH = 5
_MAGIC = b"SKD1"
_VERSION = 1


@dataclass
class NetConfig:
    """Architecture knobs; depth is fixed at 5."""

    n_classes: int
    samples_per_epoch: int
    in_channels: int = 1
    base_filters: int = 8
    kernel_size: int = 5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def validate(self):
        problems = []
        if self.n_classes < 2:
            problems.append(f"n_classes must be >= 2, got {self.n_classes}")
        if self.samples_per_epoch < 1:
            problems.append(f"samples_per_epoch must be >= 1, got {self.samples_per_epoch}")
        if self.in_channels < 1:
            problems.append(f"in_channels must be >= 1, got {self.in_channels}")
        if self.base_filters < 1:
            problems.append(f"base_filters must be >= 1, got {self.base_filters}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            problems.append(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if not 0.0 < self.bn_eps < 1.0:
            problems.append(f"bn_eps must be in (0, 1), got {self.bn_eps}")
        if not 0.0 <= self.bn_momentum <= 1.0:
            problems.append(f"bn_momentum must be in [0, 1], got {self.bn_momentum}")
        if problems:
            raise ConfigError("invalid NetConfig: " + "; ".join(problems))


class _ConvBNElu:
    """conv -> batch norm -> ELU, with He-uniform conv init."""

    def __init__(self, name, ci, co, k, rng):
        self.name = name
        bound = np.sqrt(6.0 / (ci * k))
        self.w = ad.param(rng.uniform(-bound, bound, (co, ci, k)))
        self.b = ad.param(np.zeros(co))
        self.gamma = ad.param(np.ones(co))
        self.beta = ad.param(np.zeros(co))
        self.running_mean = np.zeros(co)
        self.running_var = np.ones(co)

    def params(self):
        return [
            (self.name + ".w", self.w),
            (self.name + ".b", self.b),
            (self.name + ".gamma", self.gamma),
            (self.name + ".beta", self.beta),
        ]

    def buffers(self):
        return [
            (self.name + ".running_mean", self.running_mean),
            (self.name + ".running_var", self.running_var),
        ]

    def forward(self, x, training, eps, momentum):
        y = ad.conv1d(x, self.w, self.b)
        if training:
            y, mean, var = ad.batchnorm_train(y, self.gamma, self.beta, eps)
            n = x.data.shape[0] * y.data.shape[2]
            unbiased = var * (n / (n - 1.0)) if n > 1 else var
            self.running_mean *= 1.0 - momentum
            self.running_mean += momentum * mean
            self.running_var *= 1.0 - momentum
            self.running_var += momentum * unbiased
        else:
            y = ad.batchnorm_eval(
                y, self.gamma, self.beta, self.running_mean, self.running_var, eps
            )
        return ad.elu(y)


class SegNet:
    """The segmentation network; teacher and student share this class."""

    def __init__(self, config: NetConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.forward_count = 0
        self._frozen = False
        rng = np.random.default_rng(seed)
        bf = config.base_filters
        k = config.kernel_size
        widths = [bf * (1 << j) for j in range(DEPTH)]

        self.enc = []
        ci = config.in_channels
        for j, w in enumerate(widths):
            self.enc.append(
                (
                    _ConvBNElu(f"enc{j}.sub1", ci, w, k, rng),
                    _ConvBNElu(f"enc{j}.sub2", w, w, k, rng),
                )
            )
            ci = w
        wb = widths[-1] * 2
        self.bottleneck = (
            _ConvBNElu("bottleneck.sub1", widths[-1], wb, k, rng),
            _ConvBNElu("bottleneck.sub2", wb, wb, k, rng),
        )
        self.dec = []
        for j in reversed(range(DEPTH)):
            w = widths[j]
            self.dec.append(
                (
                    _ConvBNElu(f"dec{j}.sub1", 3 * w, w, k, rng),
                    _ConvBNElu(f"dec{j}.sub2", w, w, k, rng),
                )
            )
        hb = np.sqrt(6.0 / bf)
        self.head1_w = ad.param(rng.uniform(-hb, hb, (bf, bf, 1)))
        self.head1_b = ad.param(np.zeros(bf))
        self.head2_w = ad.param(rng.uniform(-hb, hb, (config.n_classes, bf, 1)))
        self.head2_b = ad.param(np.zeros(config.n_classes))

    # -- parameter plumbing ------------------------------------------------

    def _subblocks(self):
        for pair in self.enc:
            yield from pair
        yield from self.bottleneck
        for pair in self.dec:
            yield from pair

    def named_parameters(self):
        out = []
        for sb in self._subblocks():
            out.extend(sb.params())
        out.extend(
            [
                ("head1.w", self.head1_w),
                ("head1.b", self.head1_b),
                ("head2.w", self.head2_w),
                ("head2.b", self.head2_b),
            ]
        )
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self):
        out = []
        for sb in self._subblocks():
            out.extend(sb.buffers())
        return out

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def set_trainable(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = bool(flag)
        self._frozen = not flag

    def freeze(self):
        """Stop gradients and pin batch norm to its running statistics."""
        self.set_trainable(False)

    # -- forward -----------------------------------------------------------

    def forward_with_features(self, x, training: bool = False):
        """Returns (logits (B, C, T), list of 11 captured feature maps).

        Captures each encoder block's output before pooling, the
        bottleneck output, and each decoder block's output; encoder
        feature j has length padded_len / 2**j.
        """
        self.forward_count += 1
        data = x.data if isinstance(x, DiffArray) else np.asarray(x, dtype=np.float64)
        if data.ndim != 3 or data.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected (B, {self.config.in_channels}, L) input, got {data.shape}"
            )
        b, _, l = data.shape
        spe = self.config.samples_per_epoch
        if l == 0 or l % spe != 0:
            raise ShapeError(
                f"input length {l} is not a whole number of {spe}-sample epochs"
            )
        n_epochs = l // spe
        training = training and not self._frozen

        mult = 1 << DEPTH
        lp = ((l + mult - 1) // mult) * mult
        left = (lp - l) // 2
        if lp != l:
            padded = np.zeros((b, self.config.in_channels, lp))
            padded[:, :, left : left + l] = data
        else:
            padded = data
        h = ad.constant(padded)

        eps = self.config.bn_eps
        mom = self.config.bn_momentum
        features = []
        skips = []
        for sub1, sub2 in self.enc:
            h = sub1.forward(h, training, eps, mom)
            h = sub2.forward(h, training, eps, mom)
            features.append(h)
            skips.append(h)
            h = ad.maxpool2(h)
        h = self.bottleneck[0].forward(h, training, eps, mom)
        h = self.bottleneck[1].forward(h, training, eps, mom)
        features.append(h)
        for (sub1, sub2), skip in zip(self.dec, reversed(skips)):
            h = ad.upsample2(h)
            h = ad.concat_channels([skip, h])
            h = sub1.forward(h, training, eps, mom)
            h = sub2.forward(h, training, eps, mom)
            features.append(h)

        dense = ad.crop_length(h, left, l) if lp != l else h
        pooled = ad.avgpool1d(dense, spe)
        hid = ad.elu(ad.conv1d(pooled, self.head1_w, self.head1_b))
        logits = ad.conv1d(hid, self.head2_w, self.head2_b)
        if logits.data.shape != (b, self.config.n_classes, n_epochs):
            raise ShapeError(f"head produced {logits.data.shape}")
        return logits, features

    def forward(self, x, training: bool = False):
        return self.forward_with_features(x, training)[0]


# ---------------------------------------------------------------------------
# checkpoints: magic, version, JSON config, named f64 tensors

def save_checkpoint(net: SegNet, path):
    tensors = [(n, p.data) for n, p in net.named_parameters()]
    tensors += net.named_buffers()
    blob = json.dumps(asdict(net.config), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> SegNet:
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        out = raw[off : off + n]
        off += n
        return out

    if take(4) != _MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (clen,) = struct.unpack("<I", take(4))
    config = NetConfig(**json.loads(take(clen).decode()))
    net = SegNet(config, seed=0)
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(size * 8), dtype="<f8").reshape(shape).copy()
        tensors[name] = arr
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes after tensors")

    expected = dict(net.named_parameters())
    buffers = dict(net.named_buffers())
    missing = (set(expected) | set(buffers)) - set(tensors)
    if missing:
        raise DataError(f"{path}: missing tensors {sorted(missing)}")
    for name, arr in tensors.items():
        if name in expected:
            if expected[name].data.shape != arr.shape:
                raise DataError(
                    f"{path}: tensor {name} has shape {arr.shape}, "
                    f"expected {expected[name].data.shape}"
                )
            expected[name].data = arr
        elif name in buffers:
            buffers[name][...] = arr
        else:
            raise DataError(f"{path}: unexpected tensor {name}")
    return net
