"""Training losses, computed in the wavelet coefficient domain.

Four local objectives plus one global (multi-modality) one. All are squared
residuals reduced by a mean over every element of the coefficient grid, so
the loss scale does not depend on volume size; masked terms keep the same
denominator (total element count, not mask cardinality).

  D    mean(r^2)                                   r = x0_hat - x0
  DC   mean(r^2) + lambda1 * mean((m r)^2)         m = union(m_h, m_uh)
  AK   mean(r^2) + lambda1 * mean((m_h r)^2)
  AKH  mean(((1 - m_uh) r)^2) + lambda1 * mean((m_h r)^2)
  Dg   mean over the four modality blocks jointly

Masks live at subband resolution (one spatial grid broadcast over channels)
and must be binary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingMask, ShapeMismatch, WrongModalityCount

LOCAL_OBJECTIVES = ("D", "DC", "AK", "AKH")
OBJECTIVES = LOCAL_OBJECTIVES + ("Dg",)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.lambda1) or self.lambda1 < 0:
            raise ShapeMismatch(f"lambda1 must be finite and >= 0, got {self.lambda1}")


def _as_broadcast_mask(m: np.ndarray, shape: tuple[int, ...], name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if not np.isin(m, (0.0, 1.0)).all():
        raise ShapeMismatch(f"{name} must be binary")
    if m.shape == shape:
        return m
    if m.shape == shape[1:]:
        return m[None]  # spatial mask broadcast over the channel axis
    raise ShapeMismatch(f"{name} shape {m.shape} incompatible with data {shape}")


def _check_pair(x0_hat: np.ndarray, x0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x0_hat, dtype=np.float64)
    b = np.asarray(x0, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"x0_hat {a.shape} vs x0 {b.shape}")
    return a, b


def _weight_field(
    objective: str,
    shape: tuple[int, ...],
    m_h: np.ndarray | None,
    m_uh: np.ndarray | None,
    w: LossWeights,
) -> tuple[np.ndarray | float, np.ndarray | float]:
    """Per-element weights (w_base, w_masked) so that
    loss = mean(w_base * r^2) + lambda1 * mean(w_masked * r^2).

    Weights are 0/1 fields; for binary m, (m*r)^2 == m*r^2.
    """
    if objective == "D":
        return 1.0, 0.0
    if objective == "DC":
        if m_h is None or m_uh is None:
            raise MissingMask("DC needs both the healthy and unhealthy mask")
        mh = _as_broadcast_mask(m_h, shape, "m_h")
        muh = _as_broadcast_mask(m_uh, shape, "m_uh")
        return 1.0, np.maximum(mh, muh)
    if objective == "AK":
        if m_h is None:
            raise MissingMask("AK needs the healthy mask")
        return 1.0, _as_broadcast_mask(m_h, shape, "m_h")
    if objective == "AKH":
        if m_h is None or m_uh is None:
            raise MissingMask("AKH needs both the healthy and unhealthy mask")
        mh = _as_broadcast_mask(m_h, shape, "m_h")
        muh = _as_broadcast_mask(m_uh, shape, "m_uh")
        return 1.0 - muh, mh
    raise MissingMask(f"unknown local objective {objective!r}")


def loss_local(
    objective: str,
    x0_hat: np.ndarray,
    x0: np.ndarray,
    m_h: np.ndarray | None = None,
    m_uh: np.ndarray | None = None,
    w: LossWeights = LossWeights(),
) -> float:
    """Evaluate one of the local objectives."""
    a, b = _check_pair(x0_hat, x0)
    r = a - b
    wb, wm = _weight_field(objective, a.shape, m_h, m_uh, w)
    n = r.size
    base = float(np.sum(wb * r * r)) / n
    masked = float(np.sum(wm * r * r)) / n if w.lambda1 != 0.0 or np.any(wm) else 0.0
    return base + w.lambda1 * masked


def loss_local_grad(
    objective: str,
    x0_hat: np.ndarray,
    x0: np.ndarray,
    m_h: np.ndarray | None = None,
    m_uh: np.ndarray | None = None,
    w: LossWeights = LossWeights(),
) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to x0_hat."""
    a, b = _check_pair(x0_hat, x0)
    r = a - b
    wb, wm = _weight_field(objective, a.shape, m_h, m_uh, w)
    n = r.size
    base = float(np.sum(wb * r * r)) / n
    masked = float(np.sum(wm * r * r)) / n
    grad = (2.0 / n) * (wb + w.lambda1 * wm) * r
    return base + w.lambda1 * masked, np.broadcast_to(grad, a.shape).copy()


def _check_global(a0_hat: np.ndarray, a0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = _check_pair(a0_hat, a0)
    if a.ndim < 2 or a.shape[0] != 4:
        raise WrongModalityCount(f"expected a leading 4-modality axis, got shape {a.shape}")
    return a, b


def loss_global(a0_hat: np.ndarray, a0: np.ndarray) -> float:
    """Joint MSE over all four modality blocks (leading axis of size 4)."""
    a, b = _check_global(a0_hat, a0)
    r = a - b
    return float(np.mean(r * r))


def loss_global_grad(a0_hat: np.ndarray, a0: np.ndarray) -> tuple[float, np.ndarray]:
    a, b = _check_global(a0_hat, a0)
    r = a - b
    return float(np.mean(r * r)), (2.0 / r.size) * r
