"""Supervision signals for the class-aware discriminator.

Class knowledge is a K-vector of non-negative weights extracted from
classifier outputs (one-hot above a confidence threshold, or a clipped
temperature softmax). It is packed into a 2K domain encoding: [a; 0] for
source samples and [0; a] for target samples. Encodings are constants:
no gradient ever flows through them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

SOURCE = 0
TARGET = 1


@dataclass
class ClassKnowledge:
    probs: np.ndarray        # K non-negative reals, summing to 1 when valid
    valid: bool


@dataclass
class DomainEncoding:
    vector: np.ndarray       # 2K; invalid encodings are all-zero
    domain: int
    valid: bool


def _check_domain(domain: int):
    if domain not in (SOURCE, TARGET):
        raise ParameterError(f"domain must be 0 (source) or 1 (target), got {domain}")


def binary_encoding(domain: int) -> np.ndarray:
    """[1, 0] for source, [0, 1] for target."""
    _check_domain(domain)
    e = np.zeros(2)
    e[domain] = 1.0
    return e


def hard_knowledge(p: np.ndarray, threshold: float) -> ClassKnowledge:
    """One-hot at the most confident class, invalid below the threshold.

    Ties pick the smallest class index so runs stay deterministic.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1 or not np.isfinite(p).all() or (p < 0).any() \
            or abs(p.sum() - 1.0) > 1e-6:
        raise ParameterError(f"expected a probability vector summing to 1, got {p!r}")
    if not 0.0 < threshold <= 1.0:
        raise ParameterError(f"confidence threshold must be in (0, 1], got {threshold}")
    best = int(np.argmax(p))
    if p[best] < threshold:
        return ClassKnowledge(np.zeros_like(p), valid=False)
    a = np.zeros_like(p)
    a[best] = 1.0
    return ClassKnowledge(a, valid=True)


def soft_knowledge(z: np.ndarray, temperature: float, clip: float) -> ClassKnowledge:
    """Temperature softmax of logits, entries truncated at clip, renormalized.

    clip=1.0 disables the truncation. Renormalizing keeps the result a
    distribution; entries may end slightly above the clip value afterwards.
    """
    if temperature <= 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    if not 0.0 < clip <= 1.0:
        raise ParameterError(f"clip threshold must be in (0, 1], got {clip}")
    z = np.asarray(z, dtype=np.float64)
    scaled = z / temperature
    e = np.exp(scaled - scaled.max())
    a = e / e.sum()
    a = np.minimum(a, clip)
    return ClassKnowledge(a / a.sum(), valid=True)


def domain_encoding(knowledge: ClassKnowledge, domain: int) -> DomainEncoding:
    """Place class knowledge in the domain's half of a 2K vector."""
    _check_domain(domain)
    k = knowledge.probs.shape[0]
    e = np.zeros(2 * k)
    if knowledge.valid:
        start = domain * k
        e[start:start + k] = knowledge.probs
    return DomainEncoding(e, domain=domain, valid=knowledge.valid)


def batch_encodings(logits: np.ndarray, domain: int, strategy: str, *,
                    hard_threshold: float = 0.9, temperature: float = 1.8,
                    clip: float = 0.9,
                    true_labels: np.ndarray | None = None) -> list[DomainEncoding]:
    """Build one encoding per row of logits under the chosen strategy.

    With true_labels given, knowledge is the ground-truth one-hot instead of
    a classifier-derived value (strategy "binary" ignores class knowledge
    entirely and uses the plain two-channel domain label). Vectorized, but
    row for row identical to the per-sample operations above.
    """
    _check_domain(domain)
    logits = np.asarray(logits, dtype=np.float64)
    n, k = logits.shape
    if strategy == "binary":
        weights = np.ones((n, 1))
        valid = np.ones(n, dtype=bool)
    elif true_labels is not None:
        weights = np.zeros((n, k))
        weights[np.arange(n), np.asarray(true_labels, dtype=np.int64)] = 1.0
        valid = np.ones(n, dtype=bool)
    elif strategy == "hard":
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        if not 0.0 < hard_threshold <= 1.0:
            raise ParameterError(f"confidence threshold must be in (0, 1], "
                                 f"got {hard_threshold}")
        best = p.argmax(axis=1)
        valid = p[np.arange(n), best] >= hard_threshold
        weights = np.zeros((n, k))
        weights[np.arange(n), best] = 1.0
        weights[~valid] = 0.0
    elif strategy == "soft":
        if temperature <= 0.0:
            raise ParameterError(f"temperature must be positive, got {temperature}")
        if not 0.0 < clip <= 1.0:
            raise ParameterError(f"clip threshold must be in (0, 1], got {clip}")
        scaled = logits / temperature
        e = np.exp(scaled - scaled.max(axis=1, keepdims=True))
        a = e / e.sum(axis=1, keepdims=True)
        a = np.minimum(a, clip)
        weights = a / a.sum(axis=1, keepdims=True)
        valid = np.ones(n, dtype=bool)
    else:
        raise ParameterError(f"unknown encoding strategy {strategy!r}")

    half = weights.shape[1]
    out = []
    for i in range(n):
        e = np.zeros(2 * half)
        if valid[i]:
            e[domain * half:domain * half + half] = weights[i]
        out.append(DomainEncoding(e, domain=domain, valid=bool(valid[i])))
    return out


def encoding_matrix(encodings: list[DomainEncoding]) -> tuple[np.ndarray, np.ndarray]:
    """Stack encodings into (n, 2K) rows plus a validity mask."""
    rows = np.stack([e.vector for e in encodings])
    valid = np.array([e.valid for e in encodings], dtype=bool)
    return rows, valid
