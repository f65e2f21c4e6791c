"""Prior training, three-stage avatar fitting and evaluation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Bindings, ToyHeadModel, build_bindings_from_uv, pose_head, scalp_gaussian_mask
from .losses import LossWeights, l1_loss, ssim, total_loss
from .optim import AdamState, adam_step
from .prior import PriorModel, decode_avatar, decode_backward, decode_with_code, init_prior
from .renderer import PoseContext, RenderSettings, render, render_backward
from .renderer.gaussians import FIELDS, LocalGaussianSet

PSNR_CAP = 99.0


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    uv_resolution: int = 48
    d_z: int = 32
    hidden: int = 64
    lr_template: float = 0.003
    lr_decoder: float = 0.001
    lr_codes: float = 0.001
    lr_features: float = 0.001
    lr_final_fraction: float = 0.1  # learning rates decay geometrically to this fraction
    weights: LossWeights = field(default_factory=LossWeights)
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.epochs < 0 or self.uv_resolution < 1 or self.d_z < 1 or self.hidden < 1:
            raise ValueError("counts must be positive")
        for name in ("lr_template", "lr_decoder", "lr_codes", "lr_features"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["background"] = list(self.background)
        return d


@dataclass
class FitConfig:
    steps_stage1: int = 500
    steps_stage2: int = 500
    steps_stage3: int = 100
    lr_code: float = 0.01
    lr_decoder: float = 0.0002
    lr_mu: float = 0.002
    lr_log_scale: float = 0.005
    lr_rot: float = 0.001
    lr_color: float = 0.0025
    lr_opacity: float = 0.05
    steps_no_prior: int = 1100
    skip_stage1: bool = False
    skip_stage3: bool = False
    weights: LossWeights = field(default_factory=LossWeights)
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if min(self.steps_stage1, self.steps_stage2, self.steps_stage3, self.steps_no_prior) < 0:
            raise ValueError("step counts must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["background"] = list(self.background)
        return d

    def local_lrs(self):
        return {"mu": self.lr_mu, "log_scale": self.lr_log_scale, "rot": self.lr_rot,
                "color": self.lr_color, "opacity": self.lr_opacity}


def config_hash(cfg) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class FittedAvatar:
    gaussians: LocalGaussianSet
    bindings: Bindings
    identity_coeffs: np.ndarray
    anchor: LocalGaussianSet | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.bindings) != len(self.gaussians):
            raise ValueError("binding count must equal Gaussian count")
        if self.anchor is not None and len(self.anchor) != len(self.gaussians):
            raise ValueError("anchor count must equal Gaussian count")


# ---------------------------------------------------------------------------
# shared plumbing

def prior_bindings(model: ToyHeadModel, resolution: int):
    base = pose_head(model, np.zeros(model.n_identity_dims), np.zeros(model.n_expression_dims))
    bindings = build_bindings_from_uv(base, resolution)
    return bindings, scalp_gaussian_mask(model, bindings)


def float32_bindings(b: Bindings) -> Bindings:
    """Bindings at the on-disk precision, so saved avatars reload bit-exact."""
    return b.float32()


def sample_context(model: ToyHeadModel, sample, bindings: Bindings) -> PoseContext:
    mesh = pose_head(model, sample.identity_coeffs, sample.expression_coeffs)
    return PoseContext.from_mesh(mesh, bindings)


def _check_finite(value, where):
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss at {where}")


def image_loss(local, ctx, sample, scalp, w: LossWeights, anchor=None, background=(0.0, 0.0, 0.0),
               settings: RenderSettings | None = None, need_grad=True):
    """Render one sample and return (loss, parts, d_local or None)."""
    tgt = render(local, ctx, sample.camera, background, settings)
    value, parts, d_rgb, d_alpha, d_reg = total_loss(tgt.rgb, tgt.alpha, sample.rgb, sample.alpha,
                                                     local, scalp, w, anchor)
    if not need_grad:
        return value, parts, None
    g = render_backward(tgt, d_rgb, d_alpha).local
    for f in FIELDS:
        setattr(g, f, getattr(g, f) + getattr(d_reg, f))
    return value, parts, g


def batch_loss(local, contexts, samples, scalp, w, anchor=None, background=(0.0, 0.0, 0.0)):
    """Mean loss and gradient over every sample (full batch)."""
    total, grad = 0.0, LocalGaussianSet.zeros(len(local))
    parts_sum = {}
    for ctx, s in zip(contexts, samples):
        v, parts, g = image_loss(local, ctx, s, scalp, w, anchor, background)
        total += v / len(samples)
        for k, p in parts.items():
            parts_sum[k] = parts_sum.get(k, 0.0) + p / len(samples)
        for f in FIELDS:
            setattr(grad, f, getattr(grad, f) + getattr(g, f) / len(samples))
    return total, parts_sum, grad


def _lr_factor(step, total, final_fraction):
    if total <= 1:
        return 1.0
    return final_fraction ** (step / (total - 1))


# ---------------------------------------------------------------------------
# prior training

def training_params(prior: PriorModel):
    params = {f"template.{f}": getattr(prior.template, f) for f in FIELDS}
    params.update({f"decoder.{k}": v for k, v in prior.decoder.params.items()})
    params["features"] = prior.features
    for j in range(prior.n_identities):
        params[f"code.{j}"] = prior.codes[j]  # views: in-place updates land in prior.codes
    return params


def train_prior(dataset, cfg: TrainConfig, prior: PriorModel | None = None, log=None):
    """Jointly fit template, decoder, features and identity codes to the dataset.

    One image per step, visiting all images once per epoch in a seeded
    shuffled order.  Returns (prior, history).  history["epoch_loss"] holds the
    mean training loss of each epoch, history["l1_start"]/["l1_end"] the mean
    training-image L1 before and after training.
    """
    model = dataset.model
    bindings, scalp = prior_bindings(model, cfg.uv_resolution)
    if prior is None:
        prior = init_prior(len(bindings), len(dataset.identities), cfg.d_z, cfg.seed, cfg.hidden, bindings, scalp)
    elif len(prior.bindings) != len(bindings):
        raise ValueError("prior binding count does not match the dataset's UV resolution")
    contexts = [sample_context(model, s, bindings) for s in dataset.samples]
    rng = np.random.default_rng(cfg.seed)
    params = training_params(prior)
    base_lr = {}
    for k in params:
        if k.startswith("template."):
            base_lr[k] = cfg.lr_template
        elif k.startswith("decoder."):
            base_lr[k] = cfg.lr_decoder
        elif k == "features":
            base_lr[k] = cfg.lr_features
        else:
            base_lr[k] = cfg.lr_codes
    state = AdamState()
    history = {"step_loss": [], "epoch_loss": [], "epoch_l1": []}
    history["l1_start"] = mean_training_l1(prior, dataset, contexts, cfg.background)
    n = len(dataset.samples)
    total_steps = cfg.epochs * n
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        ep_loss, ep_l1 = 0.0, 0.0
        for idx in order:
            s = dataset.samples[idx]
            j = s.identity_index
            avatar, dstate = decode_with_code(prior, prior.codes[j])
            value, parts, g = image_loss(avatar, contexts[idx], s, prior.scalp_mask, cfg.weights,
                                         background=cfg.background)
            _check_finite(value, f"epoch {epoch}, sample {s.sample_id}")
            d_template, d_dec, d_feat, d_code = decode_backward(dstate, g)
            grads = {f"template.{f}": getattr(d_template, f) for f in FIELDS}
            grads.update({f"decoder.{k}": v for k, v in d_dec.items()})
            grads["features"] = d_feat
            grads[f"code.{j}"] = d_code
            fac = _lr_factor(step, total_steps, cfg.lr_final_fraction)
            adam_step(params, grads, state, {k: base_lr[k] * fac for k in grads})
            history["step_loss"].append(value)
            ep_loss += value / n
            ep_l1 += parts["l1"] / n
            step += 1
        history["epoch_loss"].append(ep_loss)
        history["epoch_l1"].append(ep_l1)
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {ep_loss:.5f} l1 {ep_l1:.5f}")
    history["l1_end"] = mean_training_l1(prior, dataset, contexts, cfg.background)
    prior.meta.update({"train_config": cfg.to_dict(), "config_hash": config_hash(cfg),
                       "head_model": dict(model.params),
                       "identities": [ident.to_dict() for ident in dataset.identities]})
    return prior, history


def mean_training_l1(prior, dataset, contexts=None, background=(0.0, 0.0, 0.0)):
    if contexts is None:
        contexts = [sample_context(dataset.model, s, prior.bindings) for s in dataset.samples]
    cache = {}
    total = 0.0
    for ctx, s in zip(contexts, dataset.samples):
        if s.identity_index not in cache:
            cache[s.identity_index] = decode_avatar(prior, s.identity_index)
        t = render(cache[s.identity_index], ctx, s.camera, background)
        total += l1_loss(t.rgb, s.rgb)[0]
    return total / len(dataset.samples)


# ---------------------------------------------------------------------------
# fitting

def _enrollment_contexts(model, prior_bindings_, enrollment):
    if not enrollment:
        raise ValueError("enrollment is empty")
    return [sample_context(model, s, prior_bindings_) for s in enrollment]


def fresh_code(prior: PriorModel, seed):
    return np.random.default_rng(seed).normal(0.0, 0.01, size=prior.d_z)


def fit_stage1_inversion(prior: PriorModel, enrollment, cfg: FitConfig, model: ToyHeadModel):
    """Optimize a fresh identity code against the enrollment with everything else frozen.

    Returns (best code, decoded anchor avatar, loss history).  The best iterate
    (lowest full-enrollment loss seen, including the initial code) is kept.
    """
    contexts = _enrollment_contexts(model, prior.bindings, enrollment)
    z = fresh_code(prior, (cfg.seed, 1))
    params = {"z": z}
    state = AdamState(lr=cfg.lr_code)
    best = (np.inf, z.copy())
    history = []
    for step in range(cfg.steps_stage1 + 1):
        avatar, dstate = decode_with_code(prior, z)
        value, _, g = batch_loss(avatar, contexts, enrollment, prior.scalp_mask, cfg.weights,
                                 background=cfg.background)
        _check_finite(value, f"stage 1 step {step}")
        history.append(value)
        if value < best[0]:
            best = (value, z.copy())
        if step == cfg.steps_stage1:
            break
        _, _, _, d_code = decode_backward(dstate, g)
        adam_step(params, {"z": d_code}, state)
    z_star = best[1]
    anchor = decode_with_code(prior, z_star)[0]
    return z_star, anchor, history


def fit_stage2_finetune(prior: PriorModel, z_star, enrollment, anchor: LocalGaussianSet, cfg: FitConfig,
                        model: ToyHeadModel):
    """Fine-tune a copy of the decoder only; code, features and template stay frozen.

    Returns (decoder, loss history); the best iterate is kept.
    """
    contexts = _enrollment_contexts(model, prior.bindings, enrollment)
    dec = prior.decoder.copy()
    state = AdamState(lr=cfg.lr_decoder)
    best_val, best_params = np.inf, None
    history = []
    for step in range(cfg.steps_stage2 + 1):
        avatar, dstate = decode_with_code(prior, z_star, dec)
        value, _, g = batch_loss(avatar, contexts, enrollment, prior.scalp_mask, cfg.weights, anchor,
                                 cfg.background)
        _check_finite(value, f"stage 2 step {step}")
        history.append(value)
        if value < best_val:
            best_val, best_params = value, {k: v.copy() for k, v in dec.params.items()}
        if step == cfg.steps_stage2:
            break
        _, d_dec, _, _ = decode_backward(dstate, g)
        adam_step(dec.params, d_dec, state)
    dec.params = best_params
    return dec, history


def optimize_gaussians(local: LocalGaussianSet, contexts, enrollment, scalp, cfg: FitConfig, steps: int,
                       anchor=None):
    """Direct Adam on per-Gaussian attributes; rotations renormalized after every step."""
    local = local.copy()
    params = local.as_dict()
    state = AdamState()
    lrs = cfg.local_lrs()
    best_val, best = np.inf, local.copy()
    history = []
    for step in range(steps + 1):
        value, _, g = batch_loss(local, contexts, enrollment, scalp, cfg.weights, anchor, cfg.background)
        _check_finite(value, f"gaussian refinement step {step}")
        history.append(value)
        if value < best_val:
            best_val, best = value, local.copy()
        if step == steps:
            break
        adam_step(params, g.as_dict(), state, lrs)
        local.normalize_rotations()
    return best, history


def fit_stage3_refine(avatar: LocalGaussianSet, enrollment, anchor: LocalGaussianSet, cfg: FitConfig,
                      model: ToyHeadModel, prior: PriorModel):
    contexts = _enrollment_contexts(model, prior.bindings, enrollment)
    return optimize_gaussians(avatar, contexts, enrollment, prior.scalp_mask, cfg, cfg.steps_stage3, anchor)


def fit(prior: PriorModel, enrollment, cfg: FitConfig, model: ToyHeadModel, mode: str = "single-image") -> FittedAvatar:
    """Inversion, decoder fine-tuning and per-Gaussian refinement, with provenance."""
    if not enrollment:
        raise ValueError("enrollment is empty")
    if cfg.skip_stage1:
        z_star = fresh_code(prior, (cfg.seed, 1))
        anchor = decode_with_code(prior, z_star)[0]
        h1 = []
    else:
        z_star, anchor, h1 = fit_stage1_inversion(prior, enrollment, cfg, model)
    dec, h2 = fit_stage2_finetune(prior, z_star, enrollment, anchor, cfg, model)
    stage2 = decode_with_code(prior, z_star, dec)[0]
    if cfg.skip_stage3:
        final, h3 = stage2, []
    else:
        final, h3 = fit_stage3_refine(stage2, enrollment, anchor, cfg, model, prior)
    final = final.to_float32_values()
    return FittedAvatar(
        gaussians=final,
        bindings=float32_bindings(prior.bindings),
        identity_coeffs=np.array(enrollment[0].identity_coeffs, dtype=np.float64),
        anchor=anchor,
        provenance={
            "mode": mode,
            "config_hash": config_hash(cfg),
            "fit_config": cfg.to_dict(),
            "prior_config_hash": prior.meta.get("config_hash", ""),
            "head_model": prior.meta.get("head_model", {}),
            "z_star": [float(x) for x in z_star],
            "stage_losses": {"stage1": h1, "stage2": h2, "stage3": h3},
            "enrollment": [s.sample_id for s in enrollment],
            "stage2_gaussians": stage2,
        },
    )


def fit_no_prior(enrollment, cfg: FitConfig, model: ToyHeadModel, bindings: Bindings, scalp) -> FittedAvatar:
    """Baseline: optimize a gray template directly on the enrollment, no prior anywhere."""
    template = init_prior(len(bindings), 1, 1, cfg.seed, 1, bindings, scalp).template
    contexts = _enrollment_contexts(model, bindings, enrollment)
    local, hist = optimize_gaussians(template, contexts, enrollment, scalp, cfg, cfg.steps_no_prior)
    return FittedAvatar(local.to_float32_values(), float32_bindings(bindings), np.array(enrollment[0].identity_coeffs),
                        provenance={"mode": "no-prior", "config_hash": config_hash(cfg), "losses": hist})


# ---------------------------------------------------------------------------
# evaluation

def psnr(pred, target):
    mse = float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def evaluate(avatar: FittedAvatar, model: ToyHeadModel, heldout, background=(0.0, 0.0, 0.0)):
    """Per-view PSNR/SSIM/L1 against ground truth, plus means."""
    if not heldout:
        raise ValueError("held-out set is empty")
    views = []
    for s in heldout:
        ctx = sample_context(model, s, avatar.bindings)
        t = render(avatar.gaussians, ctx, s.camera, background)
        views.append({"id": s.sample_id, "psnr": psnr(t.rgb, s.rgb), "ssim": ssim(t.rgb, s.rgb),
                      "l1": l1_loss(t.rgb, s.rgb)[0]})
    report = {"views": views}
    for k in ("psnr", "ssim", "l1"):
        report["mean_" + k] = float(np.mean([v[k] for v in views]))
    report["config_hash"] = avatar.provenance.get("config_hash", "")
    return report
