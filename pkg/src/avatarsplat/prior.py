"""Autodecoder identity prior: template avatar + per-Gaussian features + identity codes + branch MLP.

Every Gaussian i of identity j is decoded as template_i + D(f_i, z_j), with the
offsets living in the stored (pre-activation) parameterization.  Forward and
reverse passes of the decoder are written out by hand.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quaternion as quat
from .geometry import Bindings
from .renderer.gaussians import FIELDS, WIDTHS, LocalGaussianSet

FEATURE_DIM = 8
HEADS = FIELDS  # one branch per attribute group
OUT_DIM = sum(WIDTHS.values())  # 14
TRUNK_DEPTH = 6


def _relu(x):
    return np.maximum(x, 0.0)


def wn_weight(v, g):
    """Row-wise weight normalization: W = g * v / |v|."""
    norm = np.linalg.norm(v, axis=1)
    return (g / norm)[:, None] * v, norm


def wn_backward(v, g, norm, dW):
    vhat = v / norm[:, None]
    dg = np.sum(dW * vhat, axis=1)
    dv = (g / norm)[:, None] * (dW - dg[:, None] * vhat)
    return dv, dg


class DecoderMLP:
    """Trunk of weight-normalized affine+ReLU layers feeding one branch per attribute group.

    Parameters live in ``self.params`` keyed ``<layer>.v``, ``<layer>.g``,
    ``<layer>.b``.  Layer names: ``trunk0`` .. ``trunk5``, then
    ``<head>.hidden`` and ``<head>.out`` for each head.
    """

    def __init__(self, params: dict, d_z: int, hidden: int):
        self.params = params
        self.d_z = int(d_z)
        self.hidden = int(hidden)

    @property
    def in_dim(self):
        return FEATURE_DIM + self.d_z

    @staticmethod
    def layer_names():
        names = [f"trunk{i}" for i in range(TRUNK_DEPTH)]
        for h in HEADS:
            names += [f"{h}.hidden", f"{h}.out"]
        return names

    @classmethod
    def init(cls, d_z: int, hidden: int, rng: np.random.Generator):
        params = {}

        def layer(name, n_in, n_out, zero_out=False):
            v = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
            params[name + ".v"] = v
            params[name + ".g"] = np.zeros(n_out) if zero_out else np.linalg.norm(v, axis=1)
            params[name + ".b"] = np.zeros(n_out)

        n_in = FEATURE_DIM + d_z
        for i in range(TRUNK_DEPTH):
            layer(f"trunk{i}", n_in if i == 0 else hidden, hidden)
        for h in HEADS:
            layer(f"{h}.hidden", hidden, hidden)
            layer(f"{h}.out", hidden, WIDTHS[h], zero_out=True)
        return cls(params, d_z, hidden)

    def copy(self):
        return DecoderMLP({k: v.copy() for k, v in self.params.items()}, self.d_z, self.hidden)

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, features, code):
        """Offsets (N, 14) for features (N, 8) sharing one code (D_z,), or per-row codes (N, D_z)."""
        features = np.asarray(features, dtype=np.float64)
        code = np.asarray(code, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
            raise ValueError(f"features must be (N, {FEATURE_DIM})")
        if code.shape[-1] != self.d_z or code.ndim not in (1, 2) or (code.ndim == 2 and len(code) != len(features)):
            raise ValueError(f"code must be ({self.d_z},) or (N, {self.d_z})")
        p = self.params
        cache = {"features": features, "code": code, "layers": {}}
        W0, n0 = wn_weight(p["trunk0.v"], p["trunk0.g"])
        Wf, Wz = W0[:, :FEATURE_DIM], W0[:, FEATURE_DIM:]
        # the code part of the first layer is shared by every Gaussian of an identity
        pre = features @ Wf.T + (code @ Wz.T + p["trunk0.b"])
        h = _relu(pre)
        cache["layers"]["trunk0"] = (None, pre, W0, n0)
        for i in range(1, TRUNK_DEPTH):
            name = f"trunk{i}"
            W, nrm = wn_weight(p[name + ".v"], p[name + ".g"])
            x = h
            pre = x @ W.T + p[name + ".b"]
            h = _relu(pre)
            cache["layers"][name] = (x, pre, W, nrm)
        trunk_out = h
        outs = []
        for hd in HEADS:
            W1, n1 = wn_weight(p[hd + ".hidden.v"], p[hd + ".hidden.g"])
            pre1 = trunk_out @ W1.T + p[hd + ".hidden.b"]
            a1 = _relu(pre1)
            W2, n2 = wn_weight(p[hd + ".out.v"], p[hd + ".out.g"])
            outs.append(a1 @ W2.T + p[hd + ".out.b"])
            cache["layers"][hd + ".hidden"] = (trunk_out, pre1, W1, n1)
            cache["layers"][hd + ".out"] = (a1, None, W2, n2)
        return np.concatenate(outs, axis=1), cache

    def backward(self, cache, d_out):
        """Returns (param grads, d_features (N, 8), d_code shaped like the input code)."""
        if cache is None:
            raise ValueError("no cached forward state")
        p = self.params
        d_out = np.asarray(d_out, dtype=np.float64)
        grads = {}
        layers = cache["layers"]

        def affine_back(name, x, dy):
            _, _, W, nrm = layers[name]
            dW = dy.T @ x
            dv, dg = wn_backward(p[name + ".v"], p[name + ".g"], nrm, dW)
            grads[name + ".v"], grads[name + ".g"], grads[name + ".b"] = dv, dg, dy.sum(axis=0)
            return dy @ W

        d_trunk = 0.0
        col = 0
        for hd in HEADS:
            w = WIDTHS[hd]
            dy = d_out[:, col:col + w]
            col += w
            a1 = layers[hd + ".out"][0]
            da1 = affine_back(hd + ".out", a1, dy)
            x, pre1, _, _ = layers[hd + ".hidden"]
            d_trunk = d_trunk + affine_back(hd + ".hidden", x, da1 * (pre1 > 0))
        dh = d_trunk
        for i in range(TRUNK_DEPTH - 1, 0, -1):
            name = f"trunk{i}"
            x, pre, _, _ = layers[name]
            dh = affine_back(name, x, dh * (pre > 0))
        _, pre0, W0, n0 = layers["trunk0"]
        dpre = dh * (pre0 > 0)
        features, code = cache["features"], cache["code"]
        if code.ndim == 1:
            x0 = np.concatenate([features, np.broadcast_to(code, (len(features), self.d_z))], axis=1)
        else:
            x0 = np.concatenate([features, code], axis=1)
        dx0 = affine_back("trunk0", x0, dpre)
        d_feat = dx0[:, :FEATURE_DIM]
        d_code = dx0[:, FEATURE_DIM:]
        if code.ndim == 1:
            d_code = d_code.sum(axis=0)
        return grads, d_feat, d_code


def decode(feature, code, decoder: DecoderMLP):
    """14 attribute offsets for a single Gaussian feature and identity code."""
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (FEATURE_DIM,):
        raise ValueError(f"feature must have {FEATURE_DIM} entries")
    out, _ = decoder.forward(feature[None, :], code)
    return out[0]


@dataclass
class PriorModel:
    template: LocalGaussianSet
    features: np.ndarray  # (N_G, 8)
    codes: np.ndarray  # (N_id, D_z)
    decoder: DecoderMLP
    bindings: Bindings
    scalp_mask: np.ndarray  # (N_G,) bool
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.template)
        if self.features.shape != (n, FEATURE_DIM):
            raise ValueError("feature count must match template count")
        if len(self.bindings) != n or len(self.scalp_mask) != n:
            raise ValueError("bindings and scalp mask must match template count")
        if self.codes.ndim != 2 or self.codes.shape[1] != self.decoder.d_z:
            raise ValueError("codes must be (N_id, D_z)")

    @property
    def n_gaussians(self):
        return len(self.template)

    @property
    def n_identities(self):
        return len(self.codes)

    @property
    def d_z(self):
        return self.decoder.d_z

    def copy(self):
        return PriorModel(self.template.copy(), self.features.copy(), self.codes.copy(), self.decoder.copy(),
                          Bindings(self.bindings.face_index.copy(), self.bindings.barycentric.copy()),
                          self.scalp_mask.copy(), dict(self.meta))


def combine(template: LocalGaussianSet, offsets):
    """template + offsets in stored space; rotation renormalized after the addition."""
    off = LocalGaussianSet.from_packed(offsets)
    raw_rot = template.rot + off.rot
    out = LocalGaussianSet(template.mu + off.mu, template.log_scale + off.log_scale,
                           quat.normalize(raw_rot), template.color + off.color, template.opacity + off.opacity)
    return out, raw_rot


def decode_with_code(prior: PriorModel, code, decoder: DecoderMLP | None = None):
    """Avatar for an arbitrary code; also returns the state needed by ``decode_backward``."""
    dec = decoder or prior.decoder
    offsets, cache = dec.forward(prior.features, code)
    avatar, raw_rot = combine(prior.template, offsets)
    return avatar, {"decoder": cache, "raw_rot": raw_rot, "dec": dec}


def decode_avatar(prior: PriorModel, identity_index: int) -> LocalGaussianSet:
    if not 0 <= identity_index < prior.n_identities:
        raise IndexError(f"identity {identity_index} out of range [0, {prior.n_identities})")
    return decode_with_code(prior, prior.codes[identity_index])[0]


def decode_backward(state, d_avatar: LocalGaussianSet):
    """Gradients for (template, decoder params, features, code) from avatar gradients."""
    if state is None:
        raise ValueError("no cached forward state")
    raw = state["raw_rot"]
    nrm = np.linalg.norm(raw, axis=1, keepdims=True)
    d_raw = quat.normalize_backward(raw / nrm, nrm, d_avatar.rot)
    d_template = LocalGaussianSet(d_avatar.mu, d_avatar.log_scale, d_raw, d_avatar.color, d_avatar.opacity)
    d_off = d_template.packed()
    grads, d_feat, d_code = state["dec"].backward(state["decoder"], d_off)
    return d_template, grads, d_feat, d_code


def init_prior(n_gaussians: int, n_identities: int, d_z: int = 32, seed: int = 0, hidden: int = 64,
               bindings: Bindings | None = None, scalp_mask=None, init_log_scale: float = -1.2) -> PriorModel:
    """Fresh prior: zero-output decoder heads, so every identity decodes to the template."""
    if n_gaussians < 1 or n_identities < 1 or d_z < 1 or hidden < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    features = rng.normal(0.0, 0.01, size=(n_gaussians, FEATURE_DIM))
    codes = rng.normal(0.0, 0.01, size=(n_identities, d_z))
    decoder = DecoderMLP.init(d_z, hidden, rng)
    rot = np.zeros((n_gaussians, 4))
    rot[:, 0] = 1.0
    template = LocalGaussianSet(
        mu=np.zeros((n_gaussians, 3)),
        log_scale=np.full((n_gaussians, 3), init_log_scale),
        rot=rot,
        color=np.full((n_gaussians, 3), 0.5),
        opacity=np.zeros(n_gaussians),
    )
    if bindings is None:
        bindings = Bindings(np.zeros(n_gaussians, dtype=np.int64), np.full((n_gaussians, 3), 1.0 / 3.0))
    if scalp_mask is None:
        scalp_mask = np.zeros(n_gaussians, dtype=bool)
    return PriorModel(template, features, codes, decoder, bindings, np.asarray(scalp_mask, dtype=bool),
                      {"seed": seed})


def feature_matrix(prior: PriorModel):
    """Read-only (N_G, 8) view of the per-Gaussian features."""
    view = prior.features.view()
    view.flags.writeable = False
    return view
