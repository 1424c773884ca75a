"""Segmentation model glue: frozen backbone + adapter stack + decoder.

A SegModel owns the three pieces and exposes the parameter groups the
trainer optimizes (decoder, adapters) separately from the backbone. A
teacher copy shares the frozen backbone object but deep-copies every
trainable tensor with gradients disabled, so teacher forwards build no
graph and teacher weights move only through explicit moving-average
updates.
"""

from __future__ import annotations

import copy

import numpy as np

from .autodiff import Tensor
from .backbone import param_checksum


class SegModel:
    def __init__(self, backbone, decoder, moa=None):
        self.backbone = backbone
        self.decoder = decoder
        self.moa = moa

    def logits(self, img, attn_sink=None):
        """Pixel logits Tensor, (S*S, K)."""
        feats = self.backbone.forward_features(img, hook=self.moa,
                                               attn_sink=attn_sink)
        return self.decoder.logits(feats[-1])

    def features(self, img):
        return self.backbone.forward_features(img, hook=self.moa)

    def predict(self, img):
        """(S,S) label map; argmax ties resolve to the lowest class."""
        feats = self.backbone.forward_features(img, hook=self.moa)
        return self.decoder.predict(feats[-1].data)

    def trainable_params(self):
        out = list(self.decoder.named_params())
        if self.moa is not None:
            out.extend(self.moa.named_params())
        return out

    def decoder_params(self):
        return self.decoder.named_params()

    def peft_params(self):
        return [] if self.moa is None else self.moa.named_params()

    def all_params(self):
        return self.backbone.named_params() + self.trainable_params()

    def backbone_checksum(self):
        return param_checksum(self.backbone.named_params())

    def zero_grads(self):
        for _, t in self.all_params():
            t.grad = None


def clone_teacher(model):
    """Frozen-weight copy sharing the backbone object.

    The backbone is already frozen and never updated, so sharing it is
    safe and keeps the copy cheap; decoder and adapter tensors are
    duplicated and detached.
    """
    return SegModel(model.backbone,
                    _copy_decoder(model.decoder),
                    None if model.moa is None else _copy_moa(model.moa))


def _copy_decoder(decoder):
    dup = copy.copy(decoder)
    dup.params = {k: Tensor(t.data.copy(), requires_grad=False)
                  for k, t in decoder.params.items()}
    return dup


def _copy_moa(moa):
    from .adapters import MoAStack

    layers = []
    for layer in moa.layers:
        if layer is None:
            layers.append(None)
            continue
        dup = copy.copy(layer)
        dup.experts = {}
        for kind, ex in layer.experts.items():
            ex_dup = copy.copy(ex)
            ex_dup.w_down = Tensor(ex.w_down.data.copy(), requires_grad=False)
            ex_dup.w_up = Tensor(ex.w_up.data.copy(), requires_grad=False)
            dup.experts[kind] = ex_dup
        if layer.router_w is not None:
            dup.router_w = Tensor(layer.router_w.data.copy(),
                                  requires_grad=False)
            dup.router_b = Tensor(layer.router_b.data.copy(),
                                  requires_grad=False)
        dup.alpha = Tensor(layer.alpha.data.copy(), requires_grad=False)
        layers.append(dup)
    return MoAStack(layers)


def load_param_arrays(named, arrays, strict=True):
    """Copy checkpoint arrays into live tensors by name, validating shape."""
    byname = dict(named)
    for name, arr in arrays.items():
        if name not in byname:
            if strict:
                raise KeyError(f"checkpoint array {name!r} has no target")
            continue
        t = byname[name]
        if t.data.shape != arr.shape:
            raise ValueError(
                f"shape mismatch for {name}: model {t.data.shape}, "
                f"checkpoint {arr.shape}")
        t.data = arr.astype(np.float64).copy()
    missing = set(byname) - set(arrays)
    if strict and missing:
        raise KeyError(f"checkpoint missing arrays: {sorted(missing)[:4]}")
