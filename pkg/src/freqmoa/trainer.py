"""Supervised and self-training step logic.

Domain-generalization steps are plain supervised cross-entropy on
source batches. Adaptation steps follow the usual mean-teacher recipe:
the frozen-copy teacher pseudo-labels target images, source classes are
pasted onto target images to build mixed samples, and the student
minimizes source loss plus a weighted loss on the mixed batch. After
every optimizer step the teacher tracks the student with an exponential
moving average over the trainable tensors only; the backbone is shared
and frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import evaluate


@dataclass
class LossReport:
    step: int
    l_src: float
    l_mix: float
    total: float


@dataclass
class MixBatch:
    """One class-pasted sample plus everything needed to audit it."""

    image: np.ndarray
    label: np.ndarray
    mask: np.ndarray            # True where source pixels were pasted
    source_classes: np.ndarray  # classes chosen from the source label


def pseudo_label(teacher, img):
    """Teacher argmax labels; ties resolve to the lowest class index."""
    return teacher.predict(img)


def ema_update(teacher, student, alpha):
    """teacher <- alpha * teacher + (1 - alpha) * student, trainables only."""
    t_named = teacher.trainable_params()
    s_named = student.trainable_params()
    for (tn, tt), (sn, st) in zip(t_named, s_named):
        if tn != sn:
            raise ValueError(f"teacher/student parameter mismatch: {tn} vs {sn}")
        tt.data = alpha * tt.data + (1.0 - alpha) * st.data


def classmix(source_img, source_label, target_img, target_pseudo, rng):
    """Paste half of the source classes (rounded up) onto the target.

    Class choice is uniform without replacement over the classes present
    in the source label; pixel selection is exact set membership.
    """
    classes = np.unique(source_label)
    n_pick = math.ceil(len(classes) / 2)
    chosen = np.sort(rng.choice(classes, size=n_pick, replace=False))
    mask = np.isin(source_label, chosen)
    image = np.where(mask[None, :, :], source_img, target_img)
    label = np.where(mask, source_label, target_pseudo)
    return MixBatch(image=image, label=label, mask=mask, source_classes=chosen)


def batch_ce(model, images, labels):
    parts = [model.logits(img) for img in images]
    flat = np.concatenate([np.asarray(lab).ravel() for lab in labels])
    return ad.cross_entropy(ad.concat(parts, axis=0), flat)


def dg_step(model, opt, samples, step):
    """One supervised step on labeled samples."""
    loss = batch_ce(model, [s.image for s in samples],
                    [s.label for s in samples])
    ad.backward(loss)
    opt.step()
    opt.zero_grad()
    l_src = float(loss.data)
    return LossReport(step=step, l_src=l_src, l_mix=0.0, total=l_src)


def uda_step(student, teacher, opt, source_samples, target_images,
             lambda_uda, ema_alpha, rng, step):
    """One adaptation step on paired source samples and target images."""
    if len(source_samples) != len(target_images):
        raise ValueError("source and target batches must pair up")
    pseudo = [pseudo_label(teacher, img) for img in target_images]
    mixes = [classmix(s.image, s.label, t, p, rng)
             for s, t, p in zip(source_samples, target_images, pseudo)]
    l_src = batch_ce(student, [s.image for s in source_samples],
                     [s.label for s in source_samples])
    l_mix = batch_ce(student, [m.image for m in mixes],
                     [m.label for m in mixes])
    total = ad.add(l_src, ad.mul(l_mix, lambda_uda))
    ad.backward(total)
    opt.step()
    opt.zero_grad()
    ema_update(teacher, student, ema_alpha)
    return LossReport(step=step, l_src=float(l_src.data),
                      l_mix=float(l_mix.data), total=float(total.data))


def evaluate_model(model, samples, num_classes):
    """(per-class IoU, mIoU) of model predictions over labeled samples."""
    preds = [model.predict(s.image) for s in samples]
    return evaluate(preds, [s.label for s in samples], num_classes)
