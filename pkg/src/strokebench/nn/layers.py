"""Layer specifications, shape-chain validation and the default architecture."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ArchitectureError, ShapeError
from .ops import conv3d_out_extent

KINDS = ("conv3d", "maxpool3d", "relu", "flatten", "linear")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple[int, int, int] = (0, 0, 0)
    stride: int = 1
    pad: int = 0
    window: tuple[int, int, int] = field(default=(0, 0, 0))
    in_features: int = 0
    out_features: int = 0


def conv3d(in_channels: int, out_channels: int, kernel=(3, 3, 3), stride=1, pad=1) -> LayerSpec:
    kernel = tuple(int(k) for k in kernel)
    if in_channels < 1 or out_channels < 1:
        raise ArchitectureError(f"conv3d channels must be >= 1, got {in_channels}/{out_channels}")
    if min(kernel) < 1 or stride < 1 or pad < 0:
        raise ArchitectureError(
            f"conv3d needs kernel extents >= 1, stride >= 1, pad >= 0: "
            f"kernel={kernel} stride={stride} pad={pad}"
        )
    return LayerSpec("conv3d", in_channels=in_channels, out_channels=out_channels,
                     kernel=kernel, stride=stride, pad=pad)


def maxpool3d(window) -> LayerSpec:
    window = tuple(int(x) for x in window)
    if min(window) < 1:
        raise ArchitectureError(f"maxpool3d window extents must be >= 1, got {window}")
    return LayerSpec("maxpool3d", window=window)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def linear(in_features: int, out_features: int) -> LayerSpec:
    if in_features < 1 or out_features < 1:
        raise ArchitectureError(f"linear features must be >= 1, got {in_features}/{out_features}")
    return LayerSpec("linear", in_features=in_features, out_features=out_features)


def output_shape(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape produced by one layer from `shape` (without the batch axis)."""
    if spec.kind == "conv3d":
        if len(shape) != 4:
            raise ShapeError(f"conv3d expects a (C,T,H,W) input, got {shape}")
        if shape[0] != spec.in_channels:
            raise ShapeError(f"conv3d expects {spec.in_channels} channels, got {shape[0]}")
        outs = tuple(
            conv3d_out_extent(shape[1 + i], spec.kernel[i], spec.stride, spec.pad)
            for i in range(3)
        )
        if min(outs) < 1:
            raise ShapeError(
                f"conv3d kernel {spec.kernel} stride={spec.stride} pad={spec.pad} "
                f"does not fit extents {shape[1:]}"
            )
        return (spec.out_channels,) + outs
    if spec.kind == "maxpool3d":
        if len(shape) != 4:
            raise ShapeError(f"maxpool3d expects a (C,T,H,W) input, got {shape}")
        pt, ph, pw = spec.window
        c, t, h, w = shape
        if t % pt or h % ph or w % pw:
            raise ShapeError(f"extents {(t, h, w)} not divisible by pool window {spec.window}")
        return (c, t // pt, h // ph, w // pw)
    if spec.kind == "relu":
        return shape
    if spec.kind == "flatten":
        if len(shape) < 2:
            raise ShapeError(f"flatten expects a multi-axis input, got {shape}")
        n = 1
        for s in shape:
            n *= s
        return (n,)
    if spec.kind == "linear":
        if shape != (spec.in_features,):
            raise ShapeError(f"linear expects ({spec.in_features},) features, got {shape}")
        return (spec.out_features,)
    raise ArchitectureError(f"unknown layer kind {spec.kind!r}")


def chain_shapes(specs: list[LayerSpec], input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Per-layer output shapes; raises naming the first offending layer."""
    shapes = []
    cur = tuple(input_shape)
    for i, spec in enumerate(specs):
        try:
            cur = output_shape(spec, cur)
        except ShapeError as e:
            raise ArchitectureError(f"layer {i} ({spec.kind}): {e}") from e
        shapes.append(cur)
    return shapes


def param_entries(specs: list[LayerSpec]) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs for every parameter the chain declares."""
    entries = []
    n_conv = n_fc = 0
    for spec in specs:
        if spec.kind == "conv3d":
            n_conv += 1
            entries.append((f"conv{n_conv}.weight",
                            (spec.out_channels, spec.in_channels) + spec.kernel))
            entries.append((f"conv{n_conv}.bias", (spec.out_channels,)))
        elif spec.kind == "linear":
            n_fc += 1
            entries.append((f"fc{n_fc}.weight", (spec.out_features, spec.in_features)))
            entries.append((f"fc{n_fc}.bias", (spec.out_features,)))
    return entries


def fan_in(spec: LayerSpec) -> int:
    if spec.kind == "conv3d":
        return spec.in_channels * spec.kernel[0] * spec.kernel[1] * spec.kernel[2]
    if spec.kind == "linear":
        return spec.in_features
    raise ArchitectureError(f"{spec.kind} has no parameters")


def to_descriptor(spec: LayerSpec) -> str:
    if spec.kind == "conv3d":
        kt, kh, kw = spec.kernel
        return (f"conv3d in={spec.in_channels} out={spec.out_channels} "
                f"kernel={kt}x{kh}x{kw} stride={spec.stride} pad={spec.pad}")
    if spec.kind == "maxpool3d":
        pt, ph, pw = spec.window
        return f"maxpool3d window={pt}x{ph}x{pw}"
    if spec.kind in ("relu", "flatten"):
        return spec.kind
    if spec.kind == "linear":
        return f"linear in={spec.in_features} out={spec.out_features}"
    raise ArchitectureError(f"unknown layer kind {spec.kind!r}")


def from_descriptor(line: str) -> LayerSpec:
    parts = line.split()
    if not parts:
        raise ValueError("empty layer descriptor")
    kind, kv = parts[0], {}
    for p in parts[1:]:
        if "=" not in p:
            raise ValueError(f"bad descriptor field {p!r} in {line!r}")
        key, val = p.split("=", 1)
        kv[key] = val

    def triple(s):
        xs = s.split("x")
        if len(xs) != 3:
            raise ValueError(f"expected AxBxC, got {s!r}")
        return tuple(int(x) for x in xs)

    try:
        if kind == "conv3d":
            return conv3d(int(kv["in"]), int(kv["out"]), triple(kv["kernel"]),
                          int(kv["stride"]), int(kv["pad"]))
        if kind == "maxpool3d":
            return maxpool3d(triple(kv["window"]))
        if kind == "relu":
            return relu()
        if kind == "flatten":
            return flatten()
        if kind == "linear":
            return linear(int(kv["in"]), int(kv["out"]))
    except KeyError as e:
        raise ValueError(f"descriptor {line!r} missing field {e}") from e
    raise ValueError(f"unknown layer kind in descriptor {line!r}")


def _pool_extent(n: int) -> int:
    """Pool window for one axis: halve when possible, else the smallest prime
    factor so the divisibility contract always holds (1 when nothing divides)."""
    if n <= 1:
        return 1
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n  # prime extent: collapse the axis


def default_architecture(input_shape=(3, 98, 120, 120), filters=(30, 60, 80),
                         hidden: int = 500, n_classes: int = 20) -> list[LayerSpec]:
    """Conv/relu/pool blocks followed by a two-layer classifier head.

    Pool windows adapt to the running extents (see _pool_extent) so any input
    shape yields a valid chain; with the defaults the temporal axis pools
    2/7/7 (98 -> 49 -> 7 -> 1) and the spatial axes 2/2/2 (120 -> 15).
    """
    c, t, h, w = input_shape
    specs: list[LayerSpec] = []
    for f in filters:
        specs.append(conv3d(c, f, kernel=(3, 3, 3), stride=1, pad=1))
        specs.append(relu())
        win = (_pool_extent(t), _pool_extent(h), _pool_extent(w))
        specs.append(maxpool3d(win))
        c, t, h, w = f, t // win[0], h // win[1], w // win[2]
    specs.append(flatten())
    specs.append(linear(c * t * h * w, hidden))
    specs.append(relu())
    specs.append(linear(hidden, n_classes))
    chain_shapes(specs, input_shape)
    return specs
