"""Mixture-of-adapters feature rewriting with a frequency-split routing.

Each adapted block owns up to three bottleneck experts. The spatial
expert sees the raw token features; the low and high experts see the
low- and high-band parts of the features after mapping tokens onto
their 2D grid and splitting at a square cutoff in the centered
spectrum. A token-pooled linear router mixes the expert deltas and a
learned scalar gate scales the mixture into the residual stream:

    F_out = F + alpha * sum_k w_k * delta_k(F)

Up-projections start at zero, so a freshly built stack is an exact
identity and training starts from the frozen model's behavior.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .spectral import lowpass_op

EXPERT_KINDS = ("spatial", "low", "high")


class AdapterExpert:
    """Bottleneck map F -> relu(F w_down) w_up, biasless; w_up starts
    zero so the expert's delta is exactly zero at init."""

    def __init__(self, dim, rank, rng):
        self.w_down = Tensor(rng.normal(0.0, 1.0 / math.sqrt(dim), (dim, rank)),
                             requires_grad=True)
        self.w_up = Tensor(np.zeros((rank, dim)), requires_grad=True)

    def delta(self, feat):
        return ad.matmul(ad.relu(ad.matmul(feat, self.w_down)), self.w_up)

    def named_params(self, prefix):
        return [(f"{prefix}/w_down", self.w_down), (f"{prefix}/w_up", self.w_up)]


def spatial_delta(feat, expert):
    return expert.delta(feat)


def to_grid(feat, grid):
    """(n,c) tokens -> (c,grid,grid) channel maps."""
    return ad.reshape(ad.transpose(feat), (feat.shape[1], grid, grid))


def to_tokens(channel_maps):
    c, h, w = channel_maps.shape
    return ad.transpose(ad.reshape(channel_maps, (c, h * w)))


def frequency_deltas(feat, low_expert, high_expert, rho, grid):
    """Expert deltas on the two spectral bands of the token grid.

    The high band is computed as feat minus the low band, so the two
    inputs partition the features exactly for every rho.
    """
    low_tok = to_tokens(lowpass_op(to_grid(feat, grid), rho))
    high_tok = ad.sub(feat, low_tok)
    return low_expert.delta(low_tok), high_expert.delta(high_tok)


def router_weights(feat, router_w, router_b):
    """Convex mixture weights from token-mean pooled features, (1,m)."""
    pooled = ad.reshape(ad.tmean(feat, axis=0), (1, feat.shape[1]))
    return ad.softmax(ad.add_bias(ad.matmul(pooled, router_w), router_b),
                      axis=-1)


class MoALayer:
    """All experts, the router, and the gate for one backbone block."""

    def __init__(self, dim, rank, grid, rng, rho=0.3, has_frequency=True,
                 enabled=EXPERT_KINDS, alpha_init=0.01):
        kinds = [k for k in EXPERT_KINDS if k in enabled]
        if not has_frequency:
            kinds = [k for k in kinds if k == "spatial"]
        if not kinds:
            raise ValueError("a MoA layer needs at least one expert")
        self.kinds = tuple(kinds)
        self.grid = grid
        self.rho = rho
        self.has_frequency = has_frequency
        self.experts = {k: AdapterExpert(dim, rank, rng) for k in self.kinds}
        if len(self.kinds) >= 2:
            self.router_w = Tensor(np.zeros((dim, len(self.kinds))),
                                   requires_grad=True)
            self.router_b = Tensor(np.zeros(len(self.kinds)),
                                   requires_grad=True)
        else:
            self.router_w = None
            self.router_b = None
        self.alpha = Tensor(np.asarray(float(alpha_init)), requires_grad=True)

    def named_params(self, prefix):
        out = []
        for kind in self.kinds:
            out.extend(self.experts[kind].named_params(f"{prefix}/{kind}"))
        if self.router_w is not None:
            out.append((f"{prefix}/router_w", self.router_w))
            out.append((f"{prefix}/router_b", self.router_b))
        out.append((f"{prefix}/alpha", self.alpha))
        return out

    def deltas(self, feat):
        out = {}
        if "spatial" in self.kinds:
            out["spatial"] = spatial_delta(feat, self.experts["spatial"])
        if "low" in self.kinds or "high" in self.kinds:
            low_tok = to_tokens(lowpass_op(to_grid(feat, self.grid), self.rho))
            if "low" in self.kinds:
                out["low"] = self.experts["low"].delta(low_tok)
            if "high" in self.kinds:
                out["high"] = self.experts["high"].delta(ad.sub(feat, low_tok))
        return out

    def apply(self, feat, capture=None):
        deltas = self.deltas(feat)
        if len(self.kinds) == 1:
            mixed = deltas[self.kinds[0]]
            weights = None
        else:
            weights = router_weights(feat, self.router_w, self.router_b)
            terms = [ad.mul(deltas[k], weights[:, j:j + 1])
                     for j, k in enumerate(self.kinds)]
            mixed = terms[0]
            for term in terms[1:]:
                mixed = ad.add(mixed, term)
        out = ad.add(feat, ad.mul(mixed, self.alpha))
        if capture is not None:
            capture["deltas"] = {k: d.data.copy() for k, d in deltas.items()}
            capture["weights"] = (None if weights is None
                                  else weights.data.ravel().copy())
            capture["mixed"] = mixed.data.copy()
            capture["input"] = feat.data.copy()
            capture["output"] = out.data.copy()
        return out


class MoAStack:
    """Per-block adapter layers, usable directly as a backbone hook."""

    def __init__(self, layers):
        self.layers = layers
        self.capture = None  # set to a dict to record per-layer internals

    def __call__(self, i, feat):
        layer = self.layers[i]
        if layer is None:
            return feat
        sink = None
        if self.capture is not None:
            sink = self.capture.setdefault(i, {})
        return layer.apply(feat, capture=sink)

    def named_params(self):
        out = []
        for i, layer in enumerate(self.layers):
            if layer is not None:
                out.extend(layer.named_params(f"peft/l{i}"))
        return out

    def set_frozen(self, frozen=True):
        for _, t in self.named_params():
            t.requires_grad = not frozen

    @property
    def freq_layers(self):
        return [i for i, l in enumerate(self.layers)
                if l is not None and l.has_frequency]


def build_moa(depth, dim, grid, rng, rank=16, rho=0.3, freq_layers=(5, 6, 7),
              alpha_init=0.01, enabled=EXPERT_KINDS):
    """Stack with a spatial expert at every block and the frequency
    experts plus router only at freq_layers. Disabling all expert kinds
    for a block leaves that block unadapted."""
    freq_layers = set(freq_layers)
    for i in freq_layers:
        if not 0 <= i < depth:
            raise ValueError(f"freq layer {i} outside depth {depth}")
    layers = []
    for i in range(depth):
        has_freq = i in freq_layers
        kinds = [k for k in EXPERT_KINDS if k in enabled]
        if not has_freq:
            kinds = [k for k in kinds if k == "spatial"]
        if kinds:
            layers.append(MoALayer(dim, rank, grid, rng, rho=rho,
                                   has_frequency=has_freq, enabled=enabled,
                                   alpha_init=alpha_init))
        else:
            layers.append(None)
    return MoAStack(layers)
