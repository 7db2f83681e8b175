"""Training objectives.

All cross-entropy style losses use per-domain batch means, so their scale
does not depend on batch size, and clamp log arguments at 1e-12 so a
saturated discriminator yields a large finite loss rather than infinity.
Encodings enter as constants; no gradient flows into them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import LOG_EPS, Tensor, softmax_t
from .encodings import DomainEncoding, encoding_matrix
from .errors import DegenerateBatchError, ParameterError, ShapeError


@dataclass
class LossValue:
    value: Tensor            # differentiable scalar
    count: int               # number of (valid) samples that contributed

    def item(self) -> float:
        return float(self.value.values)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ParameterError(f"labels outside [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _check_rows_sum_to_one(values: np.ndarray, what: str):
    if values.ndim != 2:
        raise ShapeError(f"{what} must be a 2-D batch, got shape {values.shape}")
    if np.abs(values.sum(axis=1) - 1.0).max() > 1e-6:
        raise ParameterError(f"{what} rows must sum to 1")


def task_loss(probs: Tensor, targets: np.ndarray) -> LossValue:
    """Mean cross-entropy between predicted probabilities and true labels.

    targets may be integer labels (n,) or one-hot rows (n, K).
    """
    _check_rows_sum_to_one(probs.values, "probabilities")
    n, k = probs.values.shape
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = one_hot(targets, k)
    if targets.shape != (n, k):
        raise ShapeError(f"targets shape {targets.shape} does not match batch ({n}, {k})")
    value = -((Tensor(targets) * probs.log()).sum()) / n
    return LossValue(value, count=n)


def _column_mask(n: int, width: int, column: int) -> Tensor:
    m = np.zeros((n, width))
    m[:, column] = 1.0
    return Tensor(m)


def binary_disc_loss(p_source: Tensor, p_target: Tensor) -> LossValue:
    """Two-channel discriminator loss: source rows at channel 0, target at 1."""
    _check_rows_sum_to_one(p_source.values, "source domain probabilities")
    _check_rows_sum_to_one(p_target.values, "target domain probabilities")
    ns, nt = p_source.values.shape[0], p_target.values.shape[0]
    src = (_column_mask(ns, 2, 0) * p_source.log()).sum() / ns
    tgt = (_column_mask(nt, 2, 1) * p_target.log()).sum() / nt
    return LossValue(-(src + tgt), count=ns + nt)


def binary_adv_loss(p_target: Tensor) -> LossValue:
    """Confusion loss: push target samples toward the source channel."""
    _check_rows_sum_to_one(p_target.values, "target domain probabilities")
    nt = p_target.values.shape[0]
    value = -((_column_mask(nt, 2, 0) * p_target.log()).sum()) / nt
    return LossValue(value, count=nt)


def _masked_ce(joint: Tensor, weights: np.ndarray, valid: np.ndarray,
               side: str) -> tuple[Tensor, int]:
    if joint.values.shape != weights.shape:
        raise ShapeError(f"{side} encodings shape {weights.shape} does not match "
                         f"joint batch {joint.values.shape}")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DegenerateBatchError(side)
    return -((Tensor(weights) * joint.log()).sum()) / n_valid, n_valid


def class_disc_loss(joint_source: Tensor, enc_source: list[DomainEncoding],
                    joint_target: Tensor, enc_target: list[DomainEncoding]) -> LossValue:
    """Class-aware discriminator loss over the joint (domain, class) channels.

    Each valid sample contributes the cross-entropy between its domain
    encoding and the 2K-channel joint output; invalid samples are excluded
    from both the sum and the per-domain denominator.
    """
    ws, vs = encoding_matrix(enc_source)
    wt, vt = encoding_matrix(enc_target)
    src, n_s = _masked_ce(joint_source, ws, vs, "source")
    tgt, n_t = _masked_ce(joint_target, wt, vt, "target")
    return LossValue(src + tgt, count=n_s + n_t)


def class_adv_loss(joint_target: Tensor, enc_target: list[DomainEncoding]) -> LossValue:
    """Confusion loss for target samples at the source channels of their class.

    The target encoding's knowledge half is mirrored onto channels [0, K),
    so target features are pushed toward source alignment without losing
    their class assignment.
    """
    wt, vt = encoding_matrix(enc_target)
    k = wt.shape[1] // 2
    mirrored = np.zeros_like(wt)
    mirrored[:, :k] = wt[:, k:]
    value, n_t = _masked_ce(joint_target, mirrored, vt, "target")
    return LossValue(value, count=n_t)


def distill_loss(student_logits: Tensor, teacher_logits, temperature: float) -> LossValue:
    """Mean temperature-scaled KL from softened teacher to softened student.

    The teacher side is a constant: its logits receive no gradient. The
    usual T^2 factor keeps gradient magnitudes comparable across
    temperatures.
    """
    if temperature <= 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    t_logits = teacher_logits.values if isinstance(teacher_logits, Tensor) \
        else np.asarray(teacher_logits, dtype=np.float64)
    if t_logits.shape != student_logits.values.shape:
        raise ShapeError(f"teacher shape {t_logits.shape} does not match "
                         f"student {student_logits.values.shape}")
    n = t_logits.shape[0]

    scaled = t_logits / temperature
    e = np.exp(scaled - scaled.max(axis=1, keepdims=True))
    t_probs = e / e.sum(axis=1, keepdims=True)
    entropy_part = float((t_probs * np.log(np.maximum(t_probs, LOG_EPS))).sum())

    s_log = softmax_t(student_logits, temperature).log()
    cross_part = (Tensor(t_probs) * s_log).sum()
    value = (cross_part * -1.0 + entropy_part) * (temperature * temperature / n)
    return LossValue(value, count=n)
