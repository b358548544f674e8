"""Toy neural components.

All parameters live in one flat name -> array map governed by an
architecture descriptor, and every forward pass is an autodiff graph so
training and guided sampling share one code path.

Components and their name prefixes:

- ``reg.``   residual restoration CNN (identity at init: last conv zero)
- ``codec.`` learned 2x conv autoencoder (absent in identity mode)
- ``den.``   conditional denoiser: 3-resolution U-Net trunk, sinusoidal
             timestep embedding, text FiLM at each resolution
- ``br.``    condition branch: trainable encoder copy over the
             channel-concatenated (reg, pose, attention) latents, fused
             into the trunk through zero-initialized 1x1 projections, so
             a fresh branch leaves the trunk output untouched
- ``text.``  token embedding table (captions are mean-pooled tokens)
- ``ext.``   body-part feature extractor: shared conv trunk + masked
             average pooling per part + a part-identity classifier head
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import anatomy
from . import autodiff as ad
from .autodiff import Tensor
from .curation import CaptionRecord
from .errors import MissingArtifactError

CHECKPOINT_VERSION = "1"


def caption_vocabulary() -> tuple[str, ...]:
    """Every word token the synthetic caption generator can emit."""
    words: set[str] = set()
    for group in (anatomy.ETHNICITIES, anatomy.AGES, anatomy.GENDERS,
                  anatomy.UPPER_TYPES, anatomy.LOWER_TYPES, anatomy.SHOE_TYPES):
        for phrase in group:
            words.update(phrase.split())
    words.update(anatomy.GARMENT_COLORS)
    words.update(anatomy.HAIR_COLORS)
    for name in anatomy.SHOE_COLORS:
        words.update(name.split())
    words.update("hair sunglasses necklace scarf".split())
    words.update("wearing a watch".split())
    words.update("carrying tote bag".split())
    return tuple(sorted(words))


@dataclass(frozen=True)
class ArchConfig:
    image_hw: tuple[int, int] = (128, 64)
    codec_mode: str = "identity"          # identity | conv2x
    latent_channels: int = 3
    trunk_channels: tuple[int, int, int] = (16, 24, 32)
    time_dim: int = 16
    text_dim: int = 16
    vocab: tuple[str, ...] = field(default_factory=caption_vocabulary)
    regressor_channels: int = 16
    codec_hidden: int = 8
    part_feat_dim: int = 12
    part_hidden: int = 8

    def __post_init__(self):
        if self.codec_mode not in ("identity", "conv2x"):
            raise ValueError(f"codec_mode must be identity|conv2x, got {self.codec_mode}")
        if self.codec_mode == "identity" and self.latent_channels != 3:
            raise ValueError("identity codec requires latent_channels == 3")

    @property
    def downsample_factor(self) -> int:
        return 1 if self.codec_mode == "identity" else 2

    @property
    def cond_channels(self) -> int:
        return 2 * self.latent_channels + 1

    def to_dict(self) -> dict:
        return {
            "image_hw": list(self.image_hw),
            "codec_mode": self.codec_mode,
            "latent_channels": self.latent_channels,
            "trunk_channels": list(self.trunk_channels),
            "time_dim": self.time_dim,
            "text_dim": self.text_dim,
            "vocab": list(self.vocab),
            "regressor_channels": self.regressor_channels,
            "codec_hidden": self.codec_hidden,
            "part_feat_dim": self.part_feat_dim,
            "part_hidden": self.part_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(image_hw=tuple(d["image_hw"]), codec_mode=d["codec_mode"],
                   latent_channels=d["latent_channels"],
                   trunk_channels=tuple(d["trunk_channels"]), time_dim=d["time_dim"],
                   text_dim=d["text_dim"], vocab=tuple(d["vocab"]),
                   regressor_channels=d["regressor_channels"],
                   codec_hidden=d["codec_hidden"], part_feat_dim=d["part_feat_dim"],
                   part_hidden=d["part_hidden"])


@dataclass
class ModelParams:
    arch: ArchConfig
    arrays: dict[str, np.ndarray]

    def validate_finite(self) -> None:
        for name, arr in self.arrays.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name!r} contains non-finite values")

    def subset(self, prefixes: tuple[str, ...]) -> "ModelParams":
        keep = {k: v for k, v in self.arrays.items()
                if any(k.startswith(p) for p in prefixes)}
        return ModelParams(arch=self.arch, arrays=keep)

    def merged_with(self, other: "ModelParams") -> "ModelParams":
        if other.arch != self.arch:
            raise ValueError("cannot merge params with different architectures")
        merged = dict(self.arrays)
        merged.update(other.arrays)
        return ModelParams(arch=self.arch, arrays=merged)


@dataclass
class ConditionBundle:
    """Spatial + text conditioning for one denoiser call (batched)."""

    reg_latent: np.ndarray    # (N,h,w,C)
    pose_latent: np.ndarray   # (N,h,w,C)
    attn_latent: np.ndarray   # (N,h,w,1) in [0,1]
    text_emb: object          # (N,text_dim) ndarray or Tensor

    def __post_init__(self):
        if self.reg_latent.shape != self.pose_latent.shape:
            raise ValueError("reg/pose latents must share shape")
        if self.attn_latent.shape[:3] != self.reg_latent.shape[:3]:
            raise ValueError("attention map must share batch and spatial dims")
        if self.attn_latent.min() < 0.0 or self.attn_latent.max() > 1.0:
            raise ValueError("attention values must lie in [0,1]")
        if isinstance(self.text_emb, np.ndarray) and not np.all(np.isfinite(self.text_emb)):
            raise ValueError("text embedding contains non-finite values")


@dataclass
class PartFeatureSet:
    """Per-part pooled feature vectors with visibility flags."""

    features: np.ndarray  # (5, F)
    visible: np.ndarray   # (5,) bool


# ---------------------------------------------------------------------------
# initialization

def _conv_init(rng, k, cin, cout, dtype=np.float32):
    scale = np.sqrt(2.0 / (k * k * cin))
    return (rng.standard_normal((k, k, cin, cout)) * scale).astype(dtype)


def _dense_init(rng, fan_in, fan_out, dtype=np.float32):
    scale = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal((fan_in, fan_out)) * scale).astype(dtype)


def init_params(arch: ArchConfig, rng: np.random.Generator) -> ModelParams:
    c0, c1, c2 = arch.trunk_channels
    cl = arch.latent_channels
    rc = arch.regressor_channels
    a: dict[str, np.ndarray] = {}

    a["reg.c1.w"] = _conv_init(rng, 3, 3, rc)
    a["reg.c1.b"] = np.zeros(rc, np.float32)
    a["reg.c2.w"] = _conv_init(rng, 3, rc, rc)
    a["reg.c2.b"] = np.zeros(rc, np.float32)
    a["reg.c3.w"] = np.zeros((3, 3, rc, 3), np.float32)
    a["reg.c3.b"] = np.zeros(3, np.float32)

    if arch.codec_mode == "conv2x":
        ch = arch.codec_hidden
        a["codec.e1.w"] = _conv_init(rng, 3, 3, ch)
        a["codec.e1.b"] = np.zeros(ch, np.float32)
        a["codec.e2.w"] = _conv_init(rng, 3, ch, cl)
        a["codec.e2.b"] = np.zeros(cl, np.float32)
        a["codec.d1.w"] = _conv_init(rng, 3, cl, ch)
        a["codec.d1.b"] = np.zeros(ch, np.float32)
        a["codec.d2.w"] = _conv_init(rng, 3, ch, ch)
        a["codec.d2.b"] = np.zeros(ch, np.float32)
        a["codec.d3.w"] = _conv_init(rng, 3, ch, 3)
        a["codec.d3.b"] = np.zeros(3, np.float32)

    a["text.table"] = (rng.standard_normal((len(arch.vocab), arch.text_dim)) * 0.05
                       ).astype(np.float32)
    a["time.w1"] = _dense_init(rng, arch.time_dim, arch.time_dim)
    a["time.b1"] = np.zeros(arch.time_dim, np.float32)

    # denoiser trunk: per-resolution residual blocks (identity at init:
    # second conv zero), conditioned by time and text FiLM, plus a
    # time-gated linear shortcut from the input latent to the output so
    # eps ~ c(t) * z is representable from step one
    chans = (c0, c1, c2)
    ins = (cl, c0, c1)
    dec_ins = (c1 + c0, c2 + c1)
    for i in range(3):
        a[f"den.in{i}.w"] = _conv_init(rng, 3, ins[i], chans[i])
        a[f"den.in{i}.b"] = np.zeros(chans[i], np.float32)
    a["den.d1.w"] = _conv_init(rng, 3, dec_ins[1], c1)
    a["den.d1.b"] = np.zeros(c1, np.float32)
    a["den.d0.w"] = _conv_init(rng, 3, dec_ins[0], c0)
    a["den.d0.b"] = np.zeros(c0, np.float32)
    blocks = (("e0", c0), ("e1", c1), ("e2", c2), ("d1", c1), ("d0", c0))
    for name, c in blocks:
        a[f"den.{name}a.w"] = _conv_init(rng, 3, c, c)
        a[f"den.{name}a.b"] = np.zeros(c, np.float32)
        a[f"den.{name}b.w"] = np.zeros((3, 3, c, c), np.float32)
        a[f"den.{name}b.b"] = np.zeros(c, np.float32)
        a[f"den.tfilm_{name}.w"] = (rng.standard_normal(
            (arch.time_dim, 2 * c)) * 0.02).astype(np.float32)
        a[f"den.tfilm_{name}.b"] = np.zeros(2 * c, np.float32)
        a[f"den.film_{name}.w"] = np.zeros((arch.text_dim, 2 * c), np.float32)
        a[f"den.film_{name}.b"] = np.zeros(2 * c, np.float32)
    a["den.short.w"] = np.eye(cl, dtype=np.float32)
    a["den.short.b"] = np.zeros(cl, np.float32)
    a["den.sfilm.w"] = np.zeros((arch.time_dim, 2 * cl), np.float32)
    a["den.sfilm.b"] = np.zeros(2 * cl, np.float32)
    a["den.out.w"] = np.zeros((3, 3, c0, cl), np.float32)
    a["den.out.b"] = np.zeros(cl, np.float32)

    bins = (arch.cond_channels, c0, c1)
    for i in range(3):
        a[f"br.c{i}.w"] = _conv_init(rng, 3, bins[i], chans[i])
        a[f"br.c{i}.b"] = np.zeros(chans[i], np.float32)
        a[f"br.f{i}.w"] = np.zeros((chans[i], chans[i]), np.float32)
        a[f"br.f{i}.b"] = np.zeros(chans[i], np.float32)

    ph, pf = arch.part_hidden, arch.part_feat_dim
    a["ext.c1.w"] = _conv_init(rng, 3, 3, ph)
    a["ext.c1.b"] = np.zeros(ph, np.float32)
    a["ext.c2.w"] = _conv_init(rng, 3, ph, pf)
    a["ext.c2.b"] = np.zeros(pf, np.float32)
    a["ext.head.w"] = _dense_init(rng, pf, anatomy.NUM_PARTS)
    a["ext.head.b"] = np.zeros(anatomy.NUM_PARTS, np.float32)

    return ModelParams(arch=arch, arrays=a)


def as_tensors(params: ModelParams, trainable: tuple[str, ...] = ()) -> dict[str, Tensor]:
    out = {}
    for name, arr in params.arrays.items():
        req = any(name.startswith(p) for p in trainable)
        out[name] = Tensor(arr, requires=req) if req else Tensor(arr)
    return out


# ---------------------------------------------------------------------------
# forwards (autodiff graphs; P maps parameter name -> Tensor)

def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    return x, False


def _as_float(x: np.ndarray) -> np.ndarray:
    """Contiguous float array; float64 stays float64 (for gradient probes)."""
    arr = np.ascontiguousarray(x)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def regressor_forward(x: Tensor, P: dict) -> Tensor:
    h = ad.silu(ad.conv3x3(x, P["reg.c1.w"], P["reg.c1.b"]))
    h = ad.silu(ad.conv3x3(h, P["reg.c2.w"], P["reg.c2.b"]))
    r = ad.conv3x3(h, P["reg.c3.w"], P["reg.c3.b"])
    return ad.clip01(ad.add(x, r))


def regress_restore(I_LQ: np.ndarray, params: ModelParams) -> np.ndarray:
    """Toy restoration network; identity when freshly initialized."""
    if I_LQ.shape[-1] != 3:
        raise ValueError(f"expected 3-channel image, got shape {I_LQ.shape}")
    x, squeeze = _batched(_as_float(I_LQ))
    P = as_tensors(params)
    out = regressor_forward(Tensor(x), P).data
    return out[0] if squeeze else out


def encode_forward(x: Tensor, P: dict, arch: ArchConfig) -> Tensor:
    if arch.codec_mode == "identity":
        return x
    h = ad.silu(ad.conv3x3(x, P["codec.e1.w"], P["codec.e1.b"]))
    return ad.conv3x3(h, P["codec.e2.w"], P["codec.e2.b"], stride=2)


def decode_forward(z: Tensor, P: dict, arch: ArchConfig) -> Tensor:
    if arch.codec_mode == "identity":
        return ad.clip01(z)
    h = ad.silu(ad.conv3x3(z, P["codec.d1.w"], P["codec.d1.b"]))
    h = ad.upsample2(h)
    h = ad.silu(ad.conv3x3(h, P["codec.d2.w"], P["codec.d2.b"]))
    return ad.clip01(ad.conv3x3(h, P["codec.d3.w"], P["codec.d3.b"]))


def encode(image: np.ndarray, params: ModelParams) -> np.ndarray:
    f = params.arch.downsample_factor
    if image.shape[-3] % f or image.shape[-2] % f:
        raise ValueError(f"spatial dims {image.shape} not divisible by factor {f}")
    x, squeeze = _batched(_as_float(image))
    out = encode_forward(Tensor(x), as_tensors(params), params.arch).data
    return out[0] if squeeze else out


def decode(latent: np.ndarray, params: ModelParams) -> np.ndarray:
    z, squeeze = _batched(_as_float(latent))
    out = decode_forward(Tensor(z), as_tensors(params), params.arch).data
    return out[0] if squeeze else out


def sinusoidal_embedding(t_arr: np.ndarray, dim: int) -> np.ndarray:
    t_arr = np.atleast_1d(np.asarray(t_arr, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t_arr[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)


def tokenize_caption(caption: CaptionRecord | str) -> list[str]:
    if isinstance(caption, CaptionRecord):
        return [w.lower() for w in caption.tokens()]
    return [w.lower() for w in caption.replace(",", " ").split()]


def caption_pool_matrix(captions, vocab: tuple[str, ...]) -> np.ndarray:
    """(N, V) matrix P with P @ table = mean-pooled caption embeddings."""
    index = {w: i for i, w in enumerate(vocab)}
    pool = np.zeros((len(captions), len(vocab)), dtype=np.float32)
    for i, caption in enumerate(captions):
        toks = tokenize_caption(caption)
        for tok in toks:
            if tok not in index:
                raise ValueError(f"token {tok!r} not in the caption vocabulary")
            pool[i, index[tok]] += 1.0
        if toks:
            pool[i] /= len(toks)
    return pool


def embed_caption(caption: CaptionRecord | str, params: ModelParams) -> np.ndarray:
    """Mean of embedding-table rows; empty captions embed to zero."""
    pool = caption_pool_matrix([caption], params.arch.vocab)
    return (pool @ params.arrays["text.table"])[0]


def _film(h: Tensor, emb: Tensor, P: dict, name: str) -> Tensor:
    """Feature-wise affine modulation: h * (1 + scale) + shift."""
    sb = ad.matmul(emb, P[f"den.{name}.w"]) + P[f"den.{name}.b"]
    c = h.shape[-1]
    n = sb.shape[0]
    s = ad.reshape(ad.slice_last(sb, 0, c), (n, 1, 1, c))
    b = ad.reshape(ad.slice_last(sb, c, 2 * c), (n, 1, 1, c))
    return ad.add(ad.mul(h, ad.add(s, 1.0)), b)


def denoiser_forward(z: Tensor, t_arr: np.ndarray, cond, P: dict,
                     arch: ArchConfig) -> Tensor:
    """Noise prediction. cond is a ConditionBundle or None (unconditional)."""
    n = z.shape[0]
    temb = sinusoidal_embedding(t_arr, arch.time_dim)
    if temb.shape[0] == 1 and n > 1:
        temb = np.repeat(temb, n, axis=0)
    tfeat = ad.silu(ad.matmul(Tensor(temb.astype(z.data.dtype)), P["time.w1"]) + P["time.b1"])

    if cond is not None:
        text = cond.text_emb if isinstance(cond.text_emb, Tensor) else \
            Tensor(np.ascontiguousarray(cond.text_emb, dtype=z.data.dtype).reshape(n, -1))
        cin = ad.concat_channels([
            cond.reg_latent if isinstance(cond.reg_latent, Tensor)
            else Tensor(np.ascontiguousarray(cond.reg_latent, dtype=z.data.dtype)),
            cond.pose_latent if isinstance(cond.pose_latent, Tensor)
            else Tensor(np.ascontiguousarray(cond.pose_latent, dtype=z.data.dtype)),
            cond.attn_latent if isinstance(cond.attn_latent, Tensor)
            else Tensor(np.ascontiguousarray(cond.attn_latent, dtype=z.data.dtype)),
        ])
        f = ad.silu(ad.conv3x3(cin, P["br.c0.w"], P["br.c0.b"]))
        branch = [f]
        for i in (1, 2):
            f = ad.silu(ad.conv3x3(ad.avgpool2(f), P[f"br.c{i}.w"], P[f"br.c{i}.b"]))
            branch.append(f)
    else:
        text = Tensor(np.zeros((n, arch.text_dim), dtype=z.data.dtype))
        branch = None

    def res_block(h, name):
        r = ad.conv3x3(h, P[f"den.{name}a.w"], P[f"den.{name}a.b"])
        r = _film(r, tfeat, P, f"tfilm_{name}")
        r = ad.silu(_film(r, text, P, f"film_{name}"))
        r = ad.conv3x3(r, P[f"den.{name}b.w"], P[f"den.{name}b.b"])
        return ad.add(h, r)

    skips = []
    h = z
    for i, name in enumerate(("e0", "e1", "e2")):
        h = ad.conv3x3(h if i == 0 else ad.avgpool2(ad.silu(skips[-1])),
                       P[f"den.in{i}.w"], P[f"den.in{i}.b"])
        if branch is not None:
            h = ad.add(h, ad.conv1x1(branch[i], P[f"br.f{i}.w"], P[f"br.f{i}.b"]))
        h = res_block(h, name)
        skips.append(h)

    m = ad.silu(skips[2])
    d1 = ad.conv3x3(ad.concat_channels([ad.upsample2(m), skips[1]]),
                    P["den.d1.w"], P["den.d1.b"])
    d1 = res_block(d1, "d1")
    d0 = ad.conv3x3(ad.concat_channels([ad.upsample2(ad.silu(d1)), skips[0]]),
                    P["den.d0.w"], P["den.d0.b"])
    d0 = res_block(d0, "d0")
    short = _film(ad.conv1x1(z, P["den.short.w"], P["den.short.b"]),
                  tfeat, P, "sfilm")
    return ad.add(ad.conv3x3(ad.silu(d0), P["den.out.w"], P["den.out.b"]), short)


def denoise_predict(z_t: np.ndarray, t, cond: ConditionBundle | None,
                    params: ModelParams) -> np.ndarray:
    """Predicted noise for z_t at timestep(s) t (no gradient tape)."""
    params.validate_finite()
    z, squeeze = _batched(_as_float(z_t))
    t_arr = np.full(z.shape[0], t) if np.isscalar(t) else np.asarray(t)
    out = denoiser_forward(Tensor(z), t_arr, cond, as_tensors(params), params.arch).data
    return out[0] if squeeze else out


def extractor_feature_map(img: Tensor, P: dict) -> Tensor:
    h = ad.silu(ad.conv3x3(img, P["ext.c1.w"], P["ext.c1.b"]))
    return ad.silu(ad.conv3x3(h, P["ext.c2.w"], P["ext.c2.b"]))


def masked_pool(fmap: Tensor, mask: np.ndarray) -> Tensor:
    """Average of fmap rows under a boolean (N,H,W) mask -> (N,F)."""
    counts = mask.reshape(mask.shape[0], -1).sum(axis=1)
    weights = mask.astype(fmap.data.dtype) / np.maximum(counts, 1)[:, None, None]
    weighted = ad.mul(fmap, Tensor(weights[..., None]))
    return ad.tsum(weighted, axis=(1, 2))


def extract_part_features(image: np.ndarray, part_masks: np.ndarray,
                          params: ModelParams) -> PartFeatureSet:
    """Pooled per-part features of a single image; empty mask -> zeros."""
    if part_masks.shape != (anatomy.NUM_PARTS,) + image.shape[:2]:
        raise ValueError(
            f"part_masks shape {part_masks.shape} does not match image {image.shape}")
    x, _ = _batched(_as_float(image))
    P = as_tensors(params)
    fmap = extractor_feature_map(Tensor(x), P)
    feats = np.zeros((anatomy.NUM_PARTS, params.arch.part_feat_dim), dtype=np.float32)
    visible = np.zeros(anatomy.NUM_PARTS, dtype=bool)
    for k in range(anatomy.NUM_PARTS):
        if part_masks[k].any():
            visible[k] = True
            feats[k] = masked_pool(fmap, part_masks[k][None]).data[0]
    return PartFeatureSet(features=feats, visible=visible)


def part_logits(features: Tensor, P: dict) -> Tensor:
    return ad.matmul(features, P["ext.head.w"]) + P["ext.head.b"]


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: str | Path, params: ModelParams) -> None:
    """Single-archive checkpoint with fixed timestamps (byte-reproducible)."""
    params.validate_finite()
    meta = {"format_version": CHECKPOINT_VERSION, "arch": params.arch.to_dict()}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(meta, sort_keys=True))
        for name in sorted(params.arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, params.arrays[name], allow_pickle=False)
            info = zipfile.ZipInfo(f"arrays/{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path: str | Path, expect_arch: ArchConfig | None = None) -> ModelParams:
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(f"checkpoint not found: {p}")
    with zipfile.ZipFile(p) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise MissingArtifactError(
                f"checkpoint {p} has format version {meta.get('format_version')!r}, "
                f"expected {CHECKPOINT_VERSION!r}")
        arch = ArchConfig.from_dict(meta["arch"])
        if expect_arch is not None and arch != expect_arch:
            raise MissingArtifactError(
                f"checkpoint {p} architecture descriptor does not match the expected one")
        arrays = {}
        for entry in zf.namelist():
            if entry.startswith("arrays/") and entry.endswith(".npy"):
                name = entry[len("arrays/"):-len(".npy")]
                arrays[name] = np.lib.format.read_array(
                    io.BytesIO(zf.read(entry)), allow_pickle=False)
    params = ModelParams(arch=arch, arrays=arrays)
    params.validate_finite()
    return params
