"""Domain-vector algebra and the masked two-branch generator / critic.

The generator owns two structurally identical backbones with disjoint
parameters: a translation branch ending in a 3-filter tanh head and an
attention branch ending in a 1-filter sigmoid head. Their outputs are
blended per pixel: y = M * y' + (1 - M) * x.

The conditioning vector (a label vector or an action vector, chosen by
the variant) is spatially replicated and concatenated either with the
input image ("raw") or with the downsampled latent ("latent").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .layers import (
    ConvParams,
    NormParams,
    ResBlockParams,
    conv2d,
    conv_out_size,
    conv_params,
    conv_transpose2d,
    deconv_params,
    instance_norm,
    norm_params,
    res_block_params,
    residual_block,
)
from .tensor import (
    Tensor,
    add_scalar,
    add,
    concat_channels,
    leaky_relu,
    mul,
    neg,
    relu,
    replicate_spatial,
    scalar_mul,
    sigmoid,
    sum_per_sample,
    tanh,
)

VALID_IMAGE_SIZES = (32, 64, 128)

VARIANT_NAMES = {
    "lr": ("label", "raw"),
    "ll": ("label", "latent"),
    "ar": ("action", "raw"),
    "al": ("action", "latent"),
}


# ---------------------------------------------------------------------------
# domain vectors
# ---------------------------------------------------------------------------

def action_from_labels(c_t: np.ndarray, c_s: np.ndarray) -> np.ndarray:
    """Target action: c_t - c_s. Entries -1/0/+1 remove/preserve/add a domain."""
    c_t = np.asarray(c_t, dtype=np.float32)
    c_s = np.asarray(c_s, dtype=np.float32)
    if c_t.shape != c_s.shape:
        raise ValueError(f"label vectors disagree in shape: {c_t.shape} vs {c_s.shape}")
    return c_t - c_s


def reverse_action(a_t: np.ndarray) -> np.ndarray:
    """Action of the reverse translation: exactly -a_t."""
    return -np.asarray(a_t, dtype=np.float32)


def zero_action(n: int) -> np.ndarray:
    return np.zeros(n, dtype=np.float32)


@dataclass(frozen=True)
class VariantConfig:
    """Which vector kind is injected at which phase of the backbone."""

    vector_kind: str  # "label" | "action"
    inject_phase: str  # "raw" | "latent"

    def __post_init__(self):
        if self.vector_kind not in ("label", "action"):
            raise ValueError(f"unknown vector kind {self.vector_kind!r}")
        if self.inject_phase not in ("raw", "latent"):
            raise ValueError(f"unknown inject phase {self.inject_phase!r}")

    @classmethod
    def from_name(cls, name: str) -> "VariantConfig":
        if name not in VARIANT_NAMES:
            raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANT_NAMES)}")
        return cls(*VARIANT_NAMES[name])

    @property
    def name(self) -> str:
        return self.vector_kind[0] + self.inject_phase[0]


@dataclass(frozen=True)
class Architecture:
    """Structural hyperparameters shared by generator and critic."""

    n_domains: int = 3
    image_size: int = 32
    base_filters: int = 16
    n_resblocks: int = 2

    def __post_init__(self):
        if self.image_size not in VALID_IMAGE_SIZES:
            raise ValueError(f"image_size must be one of {VALID_IMAGE_SIZES}")
        if self.n_domains < 1 or self.base_filters < 1 or self.n_resblocks < 0:
            raise ValueError(f"invalid architecture {self}")

    @property
    def latent_size(self) -> int:
        return self.image_size // 4

    @property
    def d_layers(self) -> int:
        # Each k4s2p1 stage halves the map; stop before it collapses below 1.
        return min(6, int(np.log2(self.image_size)))

    @property
    def d_final_size(self) -> int:
        return self.image_size // (2 ** self.d_layers)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass
class BackboneParams:
    enc_convs: list[ConvParams]
    enc_norms: list[NormParams]
    resblocks: list[ResBlockParams]
    dec_convs: list[ConvParams]
    dec_norms: list[NormParams]
    head: ConvParams

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (c, nm) in enumerate(zip(self.enc_convs, self.enc_norms)):
            out[f"{prefix}.enc{i}.w"] = c.weight
            out[f"{prefix}.in{i}.g"] = nm.gamma
            out[f"{prefix}.in{i}.b"] = nm.beta
        for i, rb in enumerate(self.resblocks):
            out[f"{prefix}.res{i}.c1.w"] = rb.conv1.weight
            out[f"{prefix}.res{i}.n1.g"] = rb.norm1.gamma
            out[f"{prefix}.res{i}.n1.b"] = rb.norm1.beta
            out[f"{prefix}.res{i}.c2.w"] = rb.conv2.weight
            out[f"{prefix}.res{i}.n2.g"] = rb.norm2.gamma
            out[f"{prefix}.res{i}.n2.b"] = rb.norm2.beta
        for i, (c, nm) in enumerate(zip(self.dec_convs, self.dec_norms)):
            out[f"{prefix}.dec{i}.w"] = c.weight
            out[f"{prefix}.dn{i}.g"] = nm.gamma
            out[f"{prefix}.dn{i}.b"] = nm.beta
        out[f"{prefix}.head.w"] = self.head.weight
        out[f"{prefix}.head.b"] = self.head.bias
        return out


@dataclass
class GeneratorParams:
    arch: Architecture
    variant: VariantConfig
    tn: BackboneParams
    an: BackboneParams

    def named(self) -> dict[str, Tensor]:
        out = self.tn.named("g.tn")
        out.update(self.an.named("g.an"))
        return out


@dataclass
class DiscriminatorParams:
    arch: Architecture
    convs: list[ConvParams]
    adv_head: ConvParams
    cls_head: ConvParams

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, c in enumerate(self.convs):
            out[f"d.c{i}.w"] = c.weight
            out[f"d.c{i}.b"] = c.bias
        out["d.adv.w"] = self.adv_head.weight
        out["d.adv.b"] = self.adv_head.bias
        out["d.cls.w"] = self.cls_head.weight
        out["d.cls.b"] = self.cls_head.bias
        return out


class _SeedCounter:
    def __init__(self, seed: int):
        self.seed = seed
        self.k = 0

    def next(self) -> int:
        s = rng.derive_seed(self.seed, rng.INIT, self.k)
        self.k += 1
        return s


def _build_backbone(arch: Architecture, variant: VariantConfig, head_filters: int,
                    seeds: _SeedCounter, dtype=np.float32) -> BackboneParams:
    f = arch.base_filters
    n = arch.n_domains
    in_ch = 3 + (n if variant.inject_phase == "raw" else 0)
    # residual stage width; latent injection widens it by n
    r = 4 * f + (n if variant.inject_phase == "latent" else 0)
    enc_convs = [
        conv_params(in_ch, f, 7, seeds.next(), bias=False, dtype=dtype),
        conv_params(f, 2 * f, 4, seeds.next(), bias=False, dtype=dtype),
        conv_params(2 * f, 4 * f, 4, seeds.next(), bias=False, dtype=dtype),
    ]
    enc_norms = [norm_params(f, dtype), norm_params(2 * f, dtype), norm_params(4 * f, dtype)]
    resblocks = [
        res_block_params(r, seeds.next(), seeds.next(), dtype=dtype)
        for _ in range(arch.n_resblocks)
    ]
    dec_convs = [
        deconv_params(r, 2 * f, 4, seeds.next(), bias=False, dtype=dtype),
        deconv_params(2 * f, f, 4, seeds.next(), bias=False, dtype=dtype),
    ]
    dec_norms = [norm_params(2 * f, dtype), norm_params(f, dtype)]
    head = conv_params(f, head_filters, 7, seeds.next(), bias=True, dtype=dtype)
    return BackboneParams(enc_convs, enc_norms, resblocks, dec_convs, dec_norms, head)


def build_generator(arch: Architecture, variant: VariantConfig, seed: int,
                    dtype=np.float32) -> GeneratorParams:
    seeds = _SeedCounter(seed)
    tn = _build_backbone(arch, variant, 3, seeds, dtype)
    an = _build_backbone(arch, variant, 1, seeds, dtype)
    return GeneratorParams(arch, variant, tn, an)


def build_discriminator(arch: Architecture, seed: int, dtype=np.float32) -> DiscriminatorParams:
    seeds = _SeedCounter(seed + 1_000_003)
    f = arch.base_filters
    convs = []
    in_ch = 3
    size = arch.image_size
    for i in range(arch.d_layers):
        out_ch = f * (2 ** i)
        convs.append(conv_params(in_ch, out_ch, 4, seeds.next(), bias=True, dtype=dtype))
        in_ch = out_ch
        size = conv_out_size(size, 4, 2, 1)
        if size < 1:
            raise ValueError("discriminator spatial size collapsed below 1")
    adv_head = conv_params(in_ch, 1, 3, seeds.next(), bias=True, dtype=dtype)
    cls_head = conv_params(in_ch, arch.n_domains, size, seeds.next(), bias=True, dtype=dtype)
    return DiscriminatorParams(arch, convs, adv_head, cls_head)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _as_vector_tensor(v, n_expected: int, batch: int, dtype) -> Tensor:
    t = v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=dtype))
    if len(t.shape) == 1:
        t = Tensor(np.ascontiguousarray(np.broadcast_to(t.data, (batch,) + t.shape)))
    if t.shape != (batch, n_expected):
        raise ValueError(f"conditioning vector shape {t.shape}, expected ({batch}, {n_expected})")
    if t.dtype != dtype:
        t = Tensor(t.data.astype(dtype))
    return t


def inject_vector(x: Tensor, v: Tensor, phase: str) -> Tensor:
    """Replicate v over the map's H x W and concatenate along channels."""
    if phase not in ("raw", "latent"):
        raise ValueError(f"unknown phase {phase!r}")
    if len(x.shape) != 4:
        raise ValueError(f"inject_vector expects a feature map, got shape {x.shape}")
    h, w = x.shape[2:]
    return concat_channels(x, replicate_spatial(v, h, w))


def backbone_forward(x: Tensor, v, variant: VariantConfig, bb: BackboneParams,
                     arch: Architecture) -> Tensor:
    n, c, h, w = x.shape
    if c != 3 or h != w or h != arch.image_size:
        raise ValueError(f"backbone expects (N,3,{arch.image_size},{arch.image_size}), got {x.shape}")
    if h % 4 != 0:
        raise ValueError("spatial size must be divisible by 4")
    vt = _as_vector_tensor(v, arch.n_domains, n, x.dtype)

    out = x
    if variant.inject_phase == "raw":
        out = inject_vector(out, vt, "raw")
    paddings = (3, 1, 1)
    strides = (1, 2, 2)
    for conv, norm, s, p in zip(bb.enc_convs, bb.enc_norms, strides, paddings):
        out = conv2d(out, conv.weight, conv.bias, stride=s, padding=p)
        out = instance_norm(out, norm.gamma, norm.beta)
        out = relu(out)
    if variant.inject_phase == "latent":
        out = inject_vector(out, vt, "latent")
    for rb in bb.resblocks:
        out = residual_block(out, rb)
    for conv, norm in zip(bb.dec_convs, bb.dec_norms):
        out = conv_transpose2d(out, conv.weight, conv.bias, stride=2, padding=1)
        out = instance_norm(out, norm.gamma, norm.beta)
        out = relu(out)
    return out


def translation_net(x: Tensor, v, params: GeneratorParams) -> Tensor:
    feat = backbone_forward(x, v, params.variant, params.tn, params.arch)
    y = conv2d(feat, params.tn.head.weight, params.tn.head.bias, stride=1, padding=3)
    return tanh(y)


def attention_net(x: Tensor, v, params: GeneratorParams) -> Tensor:
    feat = backbone_forward(x, v, params.variant, params.an, params.arch)
    m = conv2d(feat, params.an.head.weight, params.an.head.bias, stride=1, padding=3)
    return sigmoid(m)


def blend(x: Tensor, y_prime: Tensor, mask: Tensor) -> Tensor:
    """y = M * y' + (1 - M) * x, the mask broadcast over the color channels."""
    if y_prime.shape != x.shape:
        raise ValueError(f"blend: image shapes differ: {x.shape} vs {y_prime.shape}")
    if mask.shape != (x.shape[0], 1) + x.shape[2:]:
        raise ValueError(f"blend: mask shape {mask.shape} does not match images {x.shape}")
    return add(mul(mask, y_prime), mul(add_scalar(neg(mask), 1.0), x))


def generator_forward(x: Tensor, v, params: GeneratorParams,
                      vector_kind: str | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Full generator: returns (y, y_prime, mask)."""
    if vector_kind is not None and vector_kind != params.variant.vector_kind:
        raise ValueError(
            f"vector kind {vector_kind!r} does not match variant "
            f"{params.variant.name!r} ({params.variant.vector_kind})"
        )
    y_prime = translation_net(x, v, params)
    mask = attention_net(x, v, params)
    return blend(x, y_prime, mask), y_prime, mask


def discriminator_forward(x: Tensor, params: DiscriminatorParams) -> tuple[Tensor, Tensor]:
    """Returns per-sample adversarial scores (N,) and class logits (N, n)."""
    arch = params.arch
    n, c, h, w = x.shape
    if c != 3 or h != arch.image_size or w != arch.image_size:
        raise ValueError(f"discriminator expects (N,3,{arch.image_size},{arch.image_size}), got {x.shape}")
    out = x
    for conv in params.convs:
        out = conv2d(out, conv.weight, conv.bias, stride=2, padding=1)
        out = leaky_relu(out, 0.01)
    patches = conv2d(out, params.adv_head.weight, params.adv_head.bias, stride=1, padding=1)
    adv = scalar_mul(sum_per_sample(patches), 1.0 / (patches.numel // n))
    logits = conv2d(out, params.cls_head.weight, params.cls_head.bias, stride=1, padding=0)
    if logits.shape != (n, arch.n_domains, 1, 1):
        raise ValueError(f"classification head produced {logits.shape}")
    # (N, n, 1, 1) -> (N, n): summing the singleton map keeps the graph intact
    from .tensor import sum_spatial

    return adv, sum_spatial(logits)
