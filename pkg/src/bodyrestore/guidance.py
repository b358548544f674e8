"""Body-part guided reverse diffusion.

Each reverse step estimates the clean latent, decodes it, measures a
body-part feature loss against the regression-restored image, and
shifts the posterior mean by -s times the loss gradient before adding
the step noise:

    z_{t-1} ~ N( mu(z_t) - s * grad_z L_part , sigma_t^2 )

With s=0 the chain is exactly the plain sampler (the noise stream is
drawn once per step from a counter-based generator either way, so the
two runs consume identical noise).

The part loss compares L2-normalized pooled part features (squared
distance, summed over visible parts) by default; a logit-CE variant
compares the part-identity classifier's label distributions instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import anatomy
from . import autodiff as ad
from . import models, structural
from .autodiff import Tensor
from .diffusion import (LatentState, NoiseSchedule, estimate_x0, posterior_mean,
                        posterior_step, respace)
from .errors import NumericError
from .models import ConditionBundle, ModelParams
from .rng import substream
from .training import area_downsample

VARIANTS = ("normalized-L2", "logit-CE")
GRADIENT_MODES = ("full-chain", "truncated")

# gradient scale calibrated by the published sweep (benchmarks/sweep);
# see the recorded sweep results committed next to the reference run
CALIBRATED_SCALE = 10.0


@dataclass
class GuidanceConfig:
    scale: float = 0.0
    mode: str = "full-chain"
    seed: int = 0
    sched: NoiseSchedule | None = None
    variant: str = "normalized-L2"

    def __post_init__(self):
        if self.scale < 0.0:
            raise ValueError(f"gradient scale must be >= 0, got {self.scale}")
        if self.mode not in GRADIENT_MODES:
            raise ValueError(f"mode must be one of {GRADIENT_MODES}, got {self.mode!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


def _normalize_rows(f: Tensor) -> Tensor:
    sq = ad.tsum(ad.mul(f, f), axis=-1, keepdims=True)
    return ad.div(f, ad.sqrt(ad.add(sq, 1e-12)))


def _part_terms_graph(fmap: Tensor, masks: np.ndarray, ref_feats: np.ndarray,
                      ref_logits_p: np.ndarray | None, visible: np.ndarray,
                      P: dict, variant: str):
    """Sum-over-items part loss Tensor plus per-item values.

    masks: (N,5,H,W) bool; ref_feats: (N,5,F); visible: (N,5) bool.
    The logit-CE variant is the KL form (entropy-shifted cross-entropy),
    so both variants vanish when the images match.
    """
    n = masks.shape[0]
    total = None
    per_item = np.zeros(n, dtype=np.float64)
    for k in range(anatomy.NUM_PARTS):
        vis_k = visible[:, k]
        if not vis_k.any():
            continue
        pooled = models.masked_pool(fmap, masks[:, k])
        w = vis_k.astype(pooled.data.dtype)[:, None]
        if variant == "normalized-L2":
            ref = ref_feats[:, k]
            ref_norm = ref / np.sqrt((ref * ref).sum(axis=-1, keepdims=True) + 1e-12)
            d = ad.sub(_normalize_rows(pooled), Tensor(ref_norm.astype(pooled.data.dtype)))
            term_items = ad.tsum(ad.mul(ad.mul(d, d), Tensor(w)), axis=-1)
        else:
            logq = ad.log_softmax(models.part_logits(pooled, P), axis=-1)
            p_ref = ref_logits_p[:, k]
            logp = np.log(np.maximum(p_ref, 1e-30))
            gap = ad.sub(Tensor(logp.astype(pooled.data.dtype)), logq)
            weighted = ad.mul(gap, Tensor((p_ref * w).astype(pooled.data.dtype)))
            term_items = ad.tsum(weighted, axis=-1)
        per_item += term_items.data.astype(np.float64)
        t_sum = ad.tsum(term_items)
        total = t_sum if total is None else ad.add(total, t_sum)
    return total, per_item


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _ref_part_data(I_reg: np.ndarray, masks: np.ndarray, params: ModelParams):
    """Reference features/label distributions from I_reg (no tape)."""
    P = models.as_tensors(params)
    fmap = models.extractor_feature_map(Tensor(models._as_float(I_reg)), P)
    n = masks.shape[0]
    feat_dim = params.arch.part_feat_dim
    visible = masks.reshape(n, anatomy.NUM_PARTS, -1).any(axis=-1)
    feats = np.zeros((n, anatomy.NUM_PARTS, feat_dim), dtype=np.float32)
    for k in range(anatomy.NUM_PARTS):
        if visible[:, k].any():
            feats[:, k] = models.masked_pool(fmap, masks[:, k]).data
    logits = feats @ params.arrays["ext.head.w"] + params.arrays["ext.head.b"]
    return feats, _softmax(logits), visible


def part_loss(decoded: np.ndarray, I_reg: np.ndarray, masks: np.ndarray,
              extractor_params: ModelParams, variant: str = "normalized-L2",
              ref_masks: np.ndarray | None = None) -> float:
    """Body-part feature alignment loss between two images.

    Parts correspond by index: the decoded features under ``masks[k]``
    are compared against the reference features under ``ref_masks[k]``
    (default: the same masks), so misregistered masks raise the loss.
    Invisible parts (empty masks) are skipped; if every part is
    invisible there is no guidance signal and this raises.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if masks.shape != (anatomy.NUM_PARTS,) + decoded.shape[:2]:
        raise ValueError(f"masks shape {masks.shape} does not match image")
    if not masks.any():
        raise ValueError("all parts invisible: no guidance signal")
    m = masks[None]
    rm = m if ref_masks is None else ref_masks[None]
    ref_feats, ref_p, ref_visible = _ref_part_data(I_reg[None], rm, extractor_params)
    visible = m.reshape(1, anatomy.NUM_PARTS, -1).any(axis=-1) & ref_visible
    P = models.as_tensors(extractor_params)
    fmap = models.extractor_feature_map(Tensor(models._as_float(decoded)[None]), P)
    total, per_item = _part_terms_graph(fmap, m, ref_feats, ref_p, visible,
                                        P, variant)
    return float(per_item[0])


def _masks_from_reg(I_reg_batch: np.ndarray) -> np.ndarray:
    """Heuristic part masks per item; all-empty when nothing is detected."""
    n, h, w = I_reg_batch.shape[:3]
    masks = np.zeros((n, anatomy.NUM_PARTS, h, w), dtype=bool)
    for i in range(n):
        skel = structural.detect_skeleton(I_reg_batch[i])
        if skel is not None:
            masks[i] = structural.part_masks_from_skeleton(skel, (h, w))
    return masks


def _guidance_graph(z_arr: np.ndarray, step_t: int, model_t, cond, P: dict,
                    params: ModelParams, sched: NoiseSchedule, masks: np.ndarray,
                    ref_feats: np.ndarray, ref_p: np.ndarray, visible: np.ndarray,
                    gcfg: GuidanceConfig):
    """One guided step's graph: returns (grad wrt z, eps data, per-item loss)."""
    z = Tensor(z_arr, requires=True)
    eps_graph = models.denoiser_forward(z, model_t, cond, P, params.arch)
    if gcfg.mode == "truncated":
        eps_for_x0 = eps_graph.detach()
    else:
        eps_for_x0 = eps_graph
    abar = sched.alpha_bar[step_t - 1]
    inv = 1.0 / np.sqrt(abar)
    x0 = ad.sub(ad.mul(z, float(inv)), ad.mul(eps_for_x0, float(np.sqrt(1.0 - abar) * inv)))
    dec = models.decode_forward(x0, P, params.arch)
    fmap = models.extractor_feature_map(dec, P)
    total, per_item = _part_terms_graph(fmap, masks, ref_feats, ref_p, visible,
                                        P, gcfg.variant)
    if total is None:
        return np.zeros_like(z_arr), eps_graph.data, per_item
    total.backward()
    grad = z.grad if z.grad is not None else np.zeros_like(z_arr)
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite guidance gradient at step t={step_t}")
    return grad, eps_graph.data, per_item


def guidance_gradient(state: LatentState, cond: ConditionBundle, params: ModelParams,
                      I_reg: np.ndarray, gcfg: GuidanceConfig,
                      masks: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the part loss at z_t (s is applied by the caller).

    ``state`` is a LatentState (z, t) against gcfg.sched. Full-chain
    mode differentiates through the denoiser, decoder, and extractor;
    truncated mode treats the noise prediction as constant.
    """
    if gcfg.sched is None:
        raise ValueError("gcfg.sched is required")
    if state.t < 1:
        raise ValueError("guidance requires t >= 1")
    z_arr, squeeze = models._batched(np.ascontiguousarray(state.z))
    I_reg_b, _ = models._batched(I_reg)
    if masks is None:
        masks = _masks_from_reg(I_reg_b)
    elif masks.ndim == 3:
        masks = masks[None]
    ref_feats, ref_p, visible = _ref_part_data(I_reg_b, masks, params)
    P = models.as_tensors(params)
    grad, _, _ = _guidance_graph(z_arr, state.t, state.t, cond, P, params,
                                 gcfg.sched, masks, ref_feats, ref_p, visible, gcfg)
    return grad[0] if squeeze else grad


def build_conditions(I_reg: np.ndarray, captions, params: ModelParams,
                     pose_maps: np.ndarray, attn_maps: np.ndarray) -> ConditionBundle:
    """Encode spatial maps and pool caption embeddings into one bundle."""
    f = params.arch.downsample_factor
    reg_lat = models.encode(I_reg, params)
    pose_lat = models.encode(pose_maps, params)
    attn_lat = area_downsample(attn_maps[..., None], f).astype(np.float32)
    pool = models.caption_pool_matrix(captions, params.arch.vocab)
    text = (pool @ params.arrays["text.table"]).astype(np.float32)
    return ConditionBundle(reg_latent=reg_lat, pose_latent=pose_lat,
                           attn_latent=attn_lat, text_emb=text)


def prepare_inputs(I_LQ: np.ndarray, captions, params: ModelParams):
    """Regress, extract structural conditions, and derive part masks."""
    x, squeeze = models._batched(np.ascontiguousarray(I_LQ, dtype=np.float32))
    n, h, w = x.shape[:3]
    I_reg = models.regress_restore(x, params)
    pose_maps = np.zeros((n, h, w, 3), dtype=np.float32)
    attn_maps = np.zeros((n, h, w), dtype=np.float32)
    for i in range(n):
        pose = structural.extract_pose(I_reg[i], mode="heuristic")
        if pose is None:
            warnings.warn(f"no pose detected for item {i}; using zero conditions")
        else:
            pose_maps[i] = pose
            attn_maps[i] = structural.extract_attention(I_reg[i], mode="heuristic")
    if isinstance(captions, (str,)) or not isinstance(captions, (list, tuple)):
        captions = [captions] * n
    cond = build_conditions(I_reg, list(captions), params, pose_maps, attn_maps)
    masks = _masks_from_reg(I_reg)
    return I_reg, cond, masks, squeeze


def guided_sample(I_LQ: np.ndarray, caption, params: ModelParams,
                  sched: NoiseSchedule, gcfg: GuidanceConfig):
    """Full restoration: regress, condition, sample with guidance.

    Returns (restored images in [0,1], per-item step traces). Each trace
    entry is {"t": original timestep, "part_loss": value}; items whose
    parts are all undetected sample unguided and trace 0.0.
    """
    I_reg, cond, masks, squeeze = prepare_inputs(I_LQ, caption, params)
    n, h, w = I_reg.shape[:3]
    f = params.arch.downsample_factor
    lat_shape = (n, h // f, w // f, params.arch.latent_channels)
    ref_feats, ref_p, visible = _ref_part_data(I_reg, masks, params)

    rs = respace(sched)
    compact, orig = rs.schedule, rs.orig_steps
    rng = substream(gcfg.seed, "sampler")
    z = rng.standard_normal(lat_shape).astype(np.float32)
    traces: list[list[dict]] = [[] for _ in range(n)]
    P = models.as_tensors(params)
    x0 = None
    for j in range(compact.T, 0, -1):
        t_orig = orig[j - 1]
        if gcfg.scale > 0.0 and visible.any():
            grad, eps, per_item = _guidance_graph(
                z, j, t_orig, cond, P, params, compact, masks,
                ref_feats, ref_p, visible, gcfg)
        else:
            eps = models.denoise_predict(z, t_orig, cond, params)
            grad = None
            x0_est = estimate_x0(z, j, eps, compact).astype(np.float32)
            dec = models.decode(x0_est, params)
            fmap = models.extractor_feature_map(Tensor(dec), P)
            _, per_item = _part_terms_graph(fmap, masks, ref_feats, ref_p,
                                            visible, P, gcfg.variant)
        x0 = estimate_x0(z, j, eps, compact).astype(np.float32)
        for i in range(n):
            traces[i].append({"t": int(t_orig), "part_loss": float(per_item[i])})
        noise = rng.standard_normal(lat_shape).astype(np.float32)
        if grad is not None:
            mu = posterior_mean(z, j, eps, compact)
            var = compact.posterior_var[j - 1]
            step = mu - gcfg.scale * grad
            if var > 0.0:
                step = step + np.sqrt(var) * noise
            z = step.astype(np.float32)
        else:
            z = posterior_step(z, j, eps, compact, noise).astype(np.float32)
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite latent at step t={t_orig}")
    out = models.decode(x0, params)
    if squeeze:
        return out[0], traces[0]
    return out, traces


def sweep_scale(I_LQ: np.ndarray, captions, params: ModelParams,
                sched: NoiseSchedule, seed: int,
                values=(0.1, 1.0, 10.0, 100.0),
                variant: str = "normalized-L2") -> dict:
    """Mean part loss of restored outputs for each gradient scale.

    The recorded minimizer becomes the calibrated scale for acceptance
    runs. All runs share one seed so they consume identical noise.
    """
    I_reg, _, masks, _ = prepare_inputs(I_LQ, captions, params)
    results = {}
    for s in values:
        gcfg = GuidanceConfig(scale=float(s), seed=seed, variant=variant)
        out, _ = guided_sample(I_LQ, captions, params, sched, gcfg)
        losses = []
        for i in range(out.shape[0]):
            if masks[i].any():
                losses.append(part_loss(out[i], I_reg[i], masks[i], params, variant))
        results[float(s)] = float(np.mean(losses)) if losses else float("nan")
    best = min(results, key=lambda k: results[k])
    return {"values": results, "best": best}
