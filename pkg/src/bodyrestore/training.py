"""Training objectives and loops.

Two objectives: plain L2 for the regression pre-restorer, and the
attention-weighted denoising loss for the conditional diffusion model,
where each element's residual is scaled by (1 + a) for attention value
a, so foreground errors cost up to 4x background errors.

Loops are plain Adam, bit-reproducible given (seed, config, dataset):
batch selection, noise, and timestep draws all come from named Philox
substreams of the run seed.

``train_diffusion`` also fits the auxiliary components the sampler
needs (the part-feature extractor, and the codec when a learned codec
is configured) before the denoiser itself; everything lands in one
checkpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import anatomy
from . import autodiff as ad
from . import models, structural
from .autodiff import Tensor
from .diffusion import NoiseSchedule
from .errors import NumericError
from .imageio import load_image, load_index_map, to_uint8
from .models import ArchConfig, ConditionBundle, ModelParams
from .rng import substream


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    iterations: int = 2000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_interval: int = 500
    codec_mode: str = "identity"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0:
            raise ValueError("learning_rate and batch_size must be positive")
        if self.iterations < 0 or self.checkpoint_interval <= 0:
            raise ValueError("iterations must be >= 0, checkpoint_interval > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam moments")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def regression_loss(I_out: np.ndarray, I_HQ: np.ndarray) -> float:
    """Mean squared pixel difference."""
    if I_out.shape != I_HQ.shape:
        raise ValueError(f"shape mismatch: {I_out.shape} vs {I_HQ.shape}")
    d = I_out.astype(np.float64) - I_HQ.astype(np.float64)
    return float(np.mean(d * d))


@dataclass
class DiffusionBatch:
    """One training batch for the weighted denoising objective."""

    z0: np.ndarray           # (N,h,w,C) float32 clean latents
    reg_latent: np.ndarray   # (N,h,w,C)
    pose_latent: np.ndarray  # (N,h,w,C)
    attn_latent: np.ndarray  # (N,h,w,1) in [0,1]
    caption_pool: np.ndarray  # (N,V) mean-pooling matrix over the vocabulary


def diffusion_loss(batch: DiffusionBatch, params: ModelParams, sched: NoiseSchedule,
                   rng_seed: int, trainable: tuple[str, ...] = (),
                   param_tensors: dict | None = None) -> Tensor:
    """Attention-weighted noise-prediction loss (scalar Tensor, float64).

    Per item, draws t uniform on {1..T} and standard-normal noise from
    the seed, then averages [(1 + a) * (eps - eps_hat)]^2 over the batch
    and all elements. Pass ``param_tensors`` to keep references to the
    parameter leaves (for reading gradients after backward()).
    """
    if batch.attn_latent.min() < 0.0 or batch.attn_latent.max() > 1.0:
        raise ValueError("attention values must lie in [0,1]")
    n = batch.z0.shape[0]
    dt = batch.z0.dtype  # float32 for training, float64 for gradient probes
    rng = substream(rng_seed, "diffusion-loss")
    t_arr = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(batch.z0.shape).astype(dt)
    abar = sched.alpha_bar[t_arr - 1][:, None, None, None]
    z_t = (np.sqrt(abar) * batch.z0 + np.sqrt(1.0 - abar) * eps).astype(dt)

    P = param_tensors if param_tensors is not None else models.as_tensors(params, trainable)
    text = ad.matmul(Tensor(batch.caption_pool.astype(dt)), P["text.table"])
    cond = ConditionBundle(reg_latent=batch.reg_latent, pose_latent=batch.pose_latent,
                           attn_latent=batch.attn_latent, text_emb=text)
    eps_pred = models.denoiser_forward(Tensor(z_t), t_arr, cond, P, params.arch)
    weight = Tensor((1.0 + batch.attn_latent).astype(dt))
    resid = ad.mul(weight, ad.sub(Tensor(eps), eps_pred))
    return ad.mean_all(ad.mul(resid, resid))


class Adam:
    def __init__(self, names: list[str], cfg: TrainConfig):
        self.names = names
        self.cfg = cfg
        self.m = {n: None for n in names}
        self.v = {n: None for n in names}
        self.step_count = 0

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for n in self.names:
            g = grads.get(n)
            if g is None:
                continue
            if self.m[n] is None:
                self.m[n] = np.zeros_like(arrays[n])
                self.v[n] = np.zeros_like(arrays[n])
            self.m[n] = b1 * self.m[n] + (1 - b1) * g
            self.v[n] = b2 * self.v[n] + (1 - b2) * (g * g)
            update = (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + eps)
            arrays[n] -= (self.cfg.learning_rate * update).astype(arrays[n].dtype)


@dataclass
class RestorationDataset:
    """In-memory training arrays (uint8 images, decoded per batch)."""

    ids: list[str]
    hq: np.ndarray                # (N,H,W,3) uint8
    lq: np.ndarray                # (N,H,W,3) uint8
    captions: list[str]
    part_ids: np.ndarray | None = None   # (N,H,W) uint8 label maps
    split: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)


def load_dataset(manifest_path: str | Path, split: str | None = None,
                 require_lq: bool = True, load_parts: bool = True) -> RestorationDataset:
    """Materialize a (degraded) manifest into memory."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records = []
    with open(manifest_path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                if split is None or rec.get("split") == split:
                    records.append(rec)
    ids, hqs, lqs, captions, parts, splits = [], [], [], [], [], []
    for rec in records:
        ids.append(rec["id"])
        hqs.append(to_uint8(load_image(root / rec["image"])))
        if require_lq:
            lqs.append(to_uint8(load_image(root / rec["lq"])))
        captions.append(rec.get("caption", ""))
        if load_parts and "parts" in rec:
            parts.append(load_index_map(root / rec["parts"]))
        splits.append(rec.get("split", "train"))
    return RestorationDataset(
        ids=ids, hq=np.stack(hqs) if hqs else np.zeros((0, 1, 1, 3), np.uint8),
        lq=np.stack(lqs) if require_lq and lqs else np.zeros((0, 1, 1, 3), np.uint8),
        captions=captions,
        part_ids=np.stack(parts) if parts else None,
        split=splits)


def _f32(u8: np.ndarray) -> np.ndarray:
    return u8.astype(np.float32) / np.float32(255.0)


def _loss_value(loss: Tensor) -> float:
    value = float(loss.data)
    return value


def _run_loop(config: TrainConfig, n_items: int, loss_fn, arrays, trainable_names,
              log_label: str, out_dir: Path | None, params: ModelParams,
              log: list, base_iteration: int = 0,
              checkpoint_prefixes: tuple[str, ...] | None = None):
    """Shared Adam loop; loss_fn(batch_indices, iteration) -> (loss, tensors)."""
    opt = Adam(trainable_names, config)
    rng = substream(config.seed, f"data-{log_label}")
    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, n_items, size=min(config.batch_size, n_items))
        loss, tensors = loss_fn(idx, it)
        value = _loss_value(loss)
        if not np.isfinite(value):
            raise NumericError(f"non-finite {log_label} loss at iteration {base_iteration + it}")
        loss.backward()
        grads = {}
        for name in trainable_names:
            t = tensors[name]
            if t.grad is not None:
                grads[name] = t.grad
        opt.step(arrays, grads)
        log.append((base_iteration + it, value))
        if out_dir is not None and it % config.checkpoint_interval == 0:
            snap = params if checkpoint_prefixes is None else \
                params.subset(checkpoint_prefixes)
            models.save_checkpoint(out_dir / f"ckpt_{base_iteration + it:06d}.zip", snap)


def write_loss_log(path: str | Path, log: list[tuple[int, float]]) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,loss\n")
        for it, value in log:
            fh.write(f"{it},{value!r}\n")


def train_regressor(config: TrainConfig, dataset: RestorationDataset,
                    out_dir: str | Path | None = None,
                    arch: ArchConfig | None = None) -> tuple[ModelParams, list]:
    """Fit the toy restoration network on (LQ, HQ) pairs."""
    arch = arch or ArchConfig(codec_mode=config.codec_mode,
                              latent_channels=3 if config.codec_mode == "identity" else 4)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    params = models.init_params(arch, substream(config.seed, "init"))
    log: list[tuple[int, float]] = []
    trainable = [n for n in params.arrays if n.startswith("reg.")]

    def loss_fn(idx, it):
        lq = _f32(dataset.lq[idx])
        hq = _f32(dataset.hq[idx])
        P = models.as_tensors(params, ("reg.",))
        out = models.regressor_forward(Tensor(lq), P)
        d = ad.sub(out, Tensor(hq))
        return ad.mean_all(ad.mul(d, d)), P

    _run_loop(config, len(dataset), loss_fn, params.arrays, trainable,
              "regressor", out_dir, params, log, checkpoint_prefixes=("reg.",))
    if out_dir is not None:
        models.save_checkpoint(out_dir / "regressor.zip", params.subset(("reg.",)))
        write_loss_log(out_dir / "loss_regressor.csv", log)
    return params.subset(("reg.",)), log


def _train_extractor(config: TrainConfig, dataset: RestorationDataset,
                     params: ModelParams, log: list) -> None:
    """Part-identity classifier: pooled part features must name their part."""
    if dataset.part_ids is None:
        raise ValueError("extractor training requires part masks")
    iters = min(400, config.iterations) if config.iterations else 0
    sub = TrainConfig(learning_rate=3e-3, batch_size=config.batch_size,
                      iterations=iters, seed=config.seed,
                      checkpoint_interval=config.checkpoint_interval)
    trainable = [n for n in params.arrays if n.startswith("ext.")]

    def loss_fn(idx, it):
        imgs = _f32(dataset.hq[idx])
        pids = dataset.part_ids[idx]
        P = models.as_tensors(params, ("ext.",))
        fmap = models.extractor_feature_map(Tensor(imgs), P)
        total = None
        n_vis = 0
        for k in range(anatomy.NUM_PARTS):
            mask = pids == k + 1
            vis = mask.reshape(mask.shape[0], -1).any(axis=1)
            if not vis.any():
                continue
            pooled = models.masked_pool(fmap, mask)
            ls = ad.log_softmax(models.part_logits(pooled, P), axis=-1)
            picked = ad.slice_last(ls, k, k + 1)
            w = vis.astype(np.float32)[:, None]
            term = ad.mul(ad.tsum(ad.mul(picked, Tensor(w))), -1.0)
            total = term if total is None else ad.add(total, term)
            n_vis += int(vis.sum())
        return ad.div(total, float(max(n_vis, 1))), P

    _run_loop(sub, len(dataset), loss_fn, params.arrays, trainable, "extractor",
              None, params, log)


def _train_codec(config: TrainConfig, dataset: RestorationDataset,
                 params: ModelParams, log: list) -> None:
    sub = TrainConfig(learning_rate=2e-3, batch_size=config.batch_size,
                      iterations=min(800, config.iterations), seed=config.seed,
                      checkpoint_interval=config.checkpoint_interval)
    trainable = [n for n in params.arrays if n.startswith("codec.")]

    def loss_fn(idx, it):
        hq = _f32(dataset.hq[idx])
        P = models.as_tensors(params, ("codec.",))
        rec = models.decode_forward(
            models.encode_forward(Tensor(hq), P, params.arch), P, params.arch)
        d = ad.sub(rec, Tensor(hq))
        return ad.mean_all(ad.mul(d, d)), P

    _run_loop(sub, len(dataset), loss_fn, params.arrays, trainable, "codec",
              None, params, log)


def area_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downsampling of (...,H,W,C) by an integer factor."""
    if factor == 1:
        return img
    h, w = img.shape[-3], img.shape[-2]
    shape = img.shape[:-3] + (h // factor, factor, w // factor, factor, img.shape[-1])
    return img.reshape(shape).mean(axis=(-4, -2))


def prepare_conditions(dataset: RestorationDataset, reg_params: ModelParams,
                       params: ModelParams, batch: int = 32):
    """Precompute I_reg and heuristic pose/attention for every item.

    Returns uint8 arrays (reg, pose, attn) at image resolution.
    """
    n = len(dataset)
    h, w = dataset.hq.shape[1:3]
    reg_u8 = np.zeros((n, h, w, 3), np.uint8)
    pose_u8 = np.zeros((n, h, w, 3), np.uint8)
    attn_u8 = np.zeros((n, h, w), np.uint8)
    for start in range(0, n, batch):
        lq = _f32(dataset.lq[start:start + batch])
        reg = models.regress_restore(lq, reg_params)
        reg_u8[start:start + batch] = to_uint8(reg)
        for j in range(reg.shape[0]):
            pose = structural.extract_pose(reg[j], mode="heuristic")
            if pose is not None:
                pose_u8[start + j] = to_uint8(pose)
            attn = structural.extract_attention(reg[j], mode="heuristic")
            attn_u8[start + j] = to_uint8(attn)
    return reg_u8, pose_u8, attn_u8


def train_diffusion(config: TrainConfig, dataset: RestorationDataset,
                    reg_params: ModelParams, out_dir: str | Path | None = None,
                    sched: NoiseSchedule | None = None,
                    arch: ArchConfig | None = None) -> tuple[ModelParams, list]:
    """Train extractor (and codec if learned), then the conditional denoiser.

    Returns params holding den./br./text./ext. (and codec.) arrays.
    """
    from .diffusion import build_schedule
    arch = arch or ArchConfig(codec_mode=config.codec_mode,
                              latent_channels=3 if config.codec_mode == "identity" else 4)
    sched = sched or build_schedule(1000, 1e-4, 0.02, 50)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    params = models.init_params(arch, substream(config.seed, "init"))
    log: list[tuple[int, float]] = []
    aux_logs: dict[str, list] = {"extractor": [], "codec": []}

    _train_extractor(config, dataset, params, aux_logs["extractor"])
    if arch.codec_mode == "conv2x":
        _train_codec(config, dataset, params, aux_logs["codec"])

    reg_u8, pose_u8, attn_u8 = prepare_conditions(dataset, reg_params, params)
    f = arch.downsample_factor
    pool = models.caption_pool_matrix(dataset.captions, arch.vocab)
    trainable = [n for n in params.arrays
                 if n.startswith(("den.", "br.", "text.", "time."))]

    def loss_fn(idx, it):
        hq = _f32(dataset.hq[idx])
        reg = _f32(reg_u8[idx])
        pose = _f32(pose_u8[idx])
        attn = _f32(attn_u8[idx])[..., None]
        z0 = models.encode(hq, params)
        reg_lat = models.encode(reg, params)
        pose_lat = models.encode(pose, params)
        attn_lat = area_downsample(attn, f).astype(np.float32)
        batch_data = DiffusionBatch(z0=z0, reg_latent=reg_lat, pose_latent=pose_lat,
                                    attn_latent=attn_lat, caption_pool=pool[idx])
        P = models.as_tensors(params, ("den.", "br.", "text.", "time."))
        loss = diffusion_loss(batch_data, params, sched, config.seed * 1000003 + it,
                              param_tensors=P)
        return loss, P

    keep = ("den.", "br.", "text.", "time.", "ext.", "codec.")
    _run_loop(config, len(dataset), loss_fn, params.arrays, trainable,
              "diffusion", out_dir, params, log, checkpoint_prefixes=keep)
    result = params.subset(keep)
    if out_dir is not None:
        models.save_checkpoint(out_dir / "diffusion.zip", result)
        write_loss_log(out_dir / "loss_diffusion.csv", log)
        for name, aux in aux_logs.items():
            if aux:
                write_loss_log(out_dir / f"loss_{name}.csv", aux)
    return result, log
