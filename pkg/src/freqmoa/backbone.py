"""Tiny vision transformer backbone and per-token segmentation decoder.

The backbone is a plain pre-norm ViT over non-overlapping patches with
fixed sinusoidal position encodings and no class token. After each
block an optional hook may rewrite the token features, which is how the
adapter stack injects its deltas; the backbone itself stays agnostic of
what the hook does. All parameters are float64 and live in an ordered
name -> Tensor map so checkpointing and freezing stay trivial.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError
from .optim import AdamW


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 4
    depth: int = 8
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.dim % 2 != 0:
            raise ValueError("dim must be even for sinusoidal encodings")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def tokens(self):
        return self.grid * self.grid


def sinusoidal_positions(n, dim):
    """Fixed (n,dim) interleaved sin/cos position table."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * idx / dim)
    pe = np.zeros((n, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def patchify(img, patch):
    """(3,S,S) image -> (n, 3*patch*patch) rows in row-major token order."""
    img = np.asarray(img, dtype=np.float64)
    c, s, s2 = img.shape
    if s != s2 or s % patch != 0:
        raise ValueError(f"bad image shape {img.shape} for patch {patch}")
    g = s // patch
    x = img.reshape(c, g, patch, g, patch)
    return x.transpose(1, 3, 0, 2, 4).reshape(g * g, c * patch * patch)


def param_checksum(named):
    """sha256 over raw parameter bytes in name order; detects any drift."""
    h = hashlib.sha256()
    for name, t in named:
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


class ViTBackbone:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.params = {}
        c = cfg.dim
        pdim = 3 * cfg.patch_size * cfg.patch_size
        self._add("embed/w", rng.normal(0.0, 1.0 / math.sqrt(pdim), (pdim, c)))
        self._add("embed/b", np.zeros(c))
        mdim = int(c * cfg.mlp_ratio)
        for i in range(cfg.depth):
            b = f"b{i}"
            self._add(f"{b}/ln1/g", np.ones(c))
            self._add(f"{b}/ln1/b", np.zeros(c))
            for w in ("wq", "wk", "wv", "wo"):
                self._add(f"{b}/attn/{w}", rng.normal(0.0, 1.0 / math.sqrt(c), (c, c)))
            for bias in ("bq", "bk", "bv", "bo"):
                self._add(f"{b}/attn/{bias}", np.zeros(c))
            self._add(f"{b}/ln2/g", np.ones(c))
            self._add(f"{b}/ln2/b", np.zeros(c))
            self._add(f"{b}/mlp/w1", rng.normal(0.0, 1.0 / math.sqrt(c), (c, mdim)))
            self._add(f"{b}/mlp/b1", np.zeros(mdim))
            self._add(f"{b}/mlp/w2", rng.normal(0.0, 1.0 / math.sqrt(mdim), (mdim, c)))
            self._add(f"{b}/mlp/b2", np.zeros(c))
        self.posenc = Tensor(sinusoidal_positions(cfg.tokens, c))

    def _add(self, name, arr):
        self.params[name] = Tensor(np.asarray(arr, dtype=np.float64),
                                   requires_grad=True)

    def named_params(self):
        return [(f"backbone/{k}", v) for k, v in self.params.items()]

    def set_frozen(self, frozen=True):
        for t in self.params.values():
            t.requires_grad = not frozen

    @property
    def frozen(self):
        return not next(iter(self.params.values())).requires_grad

    def patch_embed(self, img):
        rows = Tensor(patchify(img, self.cfg.patch_size))
        x = ad.add_bias(ad.matmul(rows, self.params["embed/w"]),
                        self.params["embed/b"])
        return ad.add(x, self.posenc)

    def _attention(self, i, x, attn_sink):
        p = self.params
        dh = self.cfg.dim // self.cfg.heads
        scale = 1.0 / math.sqrt(dh)
        h = ad.layer_norm(x, p[f"b{i}/ln1/g"], p[f"b{i}/ln1/b"])
        q = ad.add_bias(ad.matmul(h, p[f"b{i}/attn/wq"]), p[f"b{i}/attn/bq"])
        k = ad.add_bias(ad.matmul(h, p[f"b{i}/attn/wk"]), p[f"b{i}/attn/bk"])
        v = ad.add_bias(ad.matmul(h, p[f"b{i}/attn/wv"]), p[f"b{i}/attn/bv"])
        heads = []
        for j in range(self.cfg.heads):
            cols = slice(j * dh, (j + 1) * dh)
            scores = ad.matmul(q[:, cols], ad.transpose(k[:, cols])) * scale
            att = ad.softmax(scores, axis=-1)
            if attn_sink is not None:
                attn_sink.append(att.data.copy())
            heads.append(ad.matmul(att, v[:, cols]))
        out = ad.concat(heads, axis=1)
        return ad.add_bias(ad.matmul(out, p[f"b{i}/attn/wo"]),
                           p[f"b{i}/attn/bo"])

    def _mlp(self, i, x):
        p = self.params
        h = ad.layer_norm(x, p[f"b{i}/ln2/g"], p[f"b{i}/ln2/b"])
        h = ad.relu(ad.add_bias(ad.matmul(h, p[f"b{i}/mlp/w1"]),
                                p[f"b{i}/mlp/b1"]))
        return ad.add_bias(ad.matmul(h, p[f"b{i}/mlp/w2"]), p[f"b{i}/mlp/b2"])

    def forward_features(self, img, hook=None, attn_sink=None):
        """Run all blocks; returns the post-hook feature of every block.

        hook(i, F) -> F may rewrite block i's output before it feeds
        block i+1; the returned list holds the rewritten features.
        """
        x = self.patch_embed(img)
        feats = []
        for i in range(self.cfg.depth):
            x = ad.add(x, self._attention(i, x, attn_sink))
            x = ad.add(x, self._mlp(i, x))
            if hook is not None:
                x = hook(i, x)
            if not np.isfinite(x.data).all():
                raise NumericError(f"non-finite features after block {i}")
            feats.append(x)
        return feats


class TokenDecoder:
    """Two-layer per-token classifier with nearest-neighbor upsampling
    from the token grid back to pixels."""

    def __init__(self, dim, num_classes, grid, patch, rng, hidden=None):
        hidden = dim if hidden is None else hidden
        self.grid = grid
        self.patch = patch
        self.num_classes = num_classes
        self.params = {
            "w1": Tensor(rng.normal(0.0, 1.0 / math.sqrt(dim), (dim, hidden)),
                         requires_grad=True),
            "b1": Tensor(np.zeros(hidden), requires_grad=True),
            "w2": Tensor(rng.normal(0.0, 1.0 / math.sqrt(hidden),
                                    (hidden, num_classes)), requires_grad=True),
            "b2": Tensor(np.zeros(num_classes), requires_grad=True),
        }
        reps = np.repeat(np.arange(grid), patch)
        self.pix2tok = (reps[:, None] * grid + reps[None, :]).ravel()

    def named_params(self):
        return [(f"decoder/{k}", v) for k, v in self.params.items()]

    def set_frozen(self, frozen=True):
        for t in self.params.values():
            t.requires_grad = not frozen

    def token_logits(self, feat):
        p = self.params
        h = ad.relu(ad.add_bias(ad.matmul(feat, p["w1"]), p["b1"]))
        return ad.add_bias(ad.matmul(h, p["w2"]), p["b2"])

    def logits(self, feat):
        """Pixel logits, (S*S, K) in row-major pixel order."""
        return ad.gather_rows(self.token_logits(feat), self.pix2tok)

    def predict(self, feat_data):
        """Label map from raw token features, no graph involved."""
        p = self.params
        h = np.maximum(feat_data @ p["w1"].data + p["b1"].data, 0.0)
        tok = np.argmax(h @ p["w2"].data + p["b2"].data, axis=1)
        s = self.grid * self.patch
        grid_lab = tok.reshape(self.grid, self.grid)
        return np.repeat(np.repeat(grid_lab, self.patch, 0), self.patch, 1)


def pretrain_source(cfg, samples, steps, lr=1e-3, batch=4, seed=0,
                    callback=None):
    """Train backbone and decoder jointly on labeled source samples.

    Returns (backbone, decoder). The callback, if given, is invoked as
    callback(step, loss) after each optimizer step.
    """
    rng = np.random.default_rng(seed)
    backbone = ViTBackbone(cfg, rng)
    decoder = TokenDecoder(cfg.dim, cfg.num_classes, cfg.grid, cfg.patch_size,
                           rng)
    opt = AdamW([{
        "params": backbone.named_params() + decoder.named_params(),
        "lr": lr,
        "weight_decay": 0.0,
    }])
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(samples), size=batch)
        parts, labels = [], []
        for i in idx:
            feats = backbone.forward_features(samples[i].image)
            parts.append(decoder.logits(feats[-1]))
            labels.append(samples[i].label.ravel())
        loss = ad.cross_entropy(ad.concat(parts, axis=0), np.concatenate(labels))
        if not np.isfinite(loss.data):
            raise NumericError(f"pretraining diverged at step {step}")
        ad.backward(loss)
        opt.step()
        opt.zero_grad()
        if callback is not None:
            callback(step, float(loss.data))
    return backbone, decoder
