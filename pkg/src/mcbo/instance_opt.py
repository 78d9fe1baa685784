"""Adam instance optimization of a displacement field for one image pair.

Refines an initial field by gradient descent on feature SSD plus diffusion
regularization. The data term samples the moving features trilinearly at
v + phi(v) and its gradient uses the analytic derivative of the trilinear
blend; the regularizer penalizes squared forward differences of each
displacement component. After every Adam step the field is box-smoothed,
which is what irons out octant seams in the spliced first-level field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DisplacementField, FeatureVolume, _box_filter, _grid_coords

__all__ = [
    "InstOptConfig",
    "NumericalError",
    "registration_loss",
    "loss_and_gradient",
    "instance_optimize",
]


class NumericalError(RuntimeError):
    """Optimization produced a non-finite quantity."""


@dataclass
class InstOptConfig:
    """Knobs of the instance optimizer."""

    iterations: int = 15
    smooth_kernel: int = 5
    learning_rate: float = 0.1
    reg_weight: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    smooth_every_step: bool = True

    def __post_init__(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.smooth_kernel % 2 == 0 or self.smooth_kernel < 1:
            raise ValueError(f"smooth_kernel must be odd, got {self.smooth_kernel}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.reg_weight < 0:
            raise ValueError(f"reg_weight must be >= 0, got {self.reg_weight}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")


def _data_term(fixed: np.ndarray, moving: np.ndarray, phi: np.ndarray, want_grad: bool):
    """SSD between fixed features and moving features sampled at v + phi(v).

    Returns (loss, grad) where grad is the (H, W, D, 3) derivative of the
    loss with respect to phi, or None when want_grad is false. Sampling
    clamps to the border; the derivative is zero in clamped directions.
    """
    C = fixed.shape[0]
    H, W, D = fixed.shape[1:]
    bh, bw, bd = _grid_coords((H, W, D))
    ph = bh + phi[..., 0]
    pw = bw + phi[..., 1]
    pd = bd + phi[..., 2]

    # Derivative of the clamp: zero once the coordinate leaves the grid.
    in_h = ((ph > 0.0) & (ph < H - 1.0)).ravel()
    in_w = ((pw > 0.0) & (pw < W - 1.0)).ravel()
    in_d = ((pd > 0.0) & (pd < D - 1.0)).ravel()

    ph = np.clip(ph, 0.0, float(H - 1)).ravel()
    pw = np.clip(pw, 0.0, float(W - 1)).ravel()
    pd = np.clip(pd, 0.0, float(D - 1)).ravel()
    h0 = ph.astype(np.intp)
    w0 = pw.astype(np.intp)
    d0 = pd.astype(np.intp)
    h1 = np.minimum(h0 + 1, H - 1)
    w1 = np.minimum(w0 + 1, W - 1)
    d1 = np.minimum(d0 + 1, D - 1)
    fh = ph - h0
    fw = pw - w0
    fd = pd - d0
    gh, gw, gd = 1.0 - fh, 1.0 - fw, 1.0 - fd

    flat_moving = moving.reshape(C, -1)

    def vals(hi, wi, di):
        return flat_moving[:, (hi * W + wi) * D + di]

    v000 = vals(h0, w0, d0)
    v001 = vals(h0, w0, d1)
    v010 = vals(h0, w1, d0)
    v011 = vals(h0, w1, d1)
    v100 = vals(h1, w0, d0)
    v101 = vals(h1, w0, d1)
    v110 = vals(h1, w1, d0)
    v111 = vals(h1, w1, d1)

    sampled = (
        v000 * (gh * gw * gd)
        + v001 * (gh * gw * fd)
        + v010 * (gh * fw * gd)
        + v011 * (gh * fw * fd)
        + v100 * (fh * gw * gd)
        + v101 * (fh * gw * fd)
        + v110 * (fh * fw * gd)
        + v111 * (fh * fw * fd)
    )
    residual = sampled - fixed.reshape(C, -1)
    loss = float(np.sum(residual * residual))
    if not want_grad:
        return loss, None

    # d(sample)/d(coordinate): difference of the two corner planes, blended
    # with the remaining axes' weights.
    ds_dh = (
        (v100 - v000) * (gw * gd)
        + (v101 - v001) * (gw * fd)
        + (v110 - v010) * (fw * gd)
        + (v111 - v011) * (fw * fd)
    )
    ds_dw = (
        (v010 - v000) * (gh * gd)
        + (v011 - v001) * (gh * fd)
        + (v110 - v100) * (fh * gd)
        + (v111 - v101) * (fh * fd)
    )
    ds_dd = (
        (v001 - v000) * (gh * gw)
        + (v011 - v010) * (gh * fw)
        + (v101 - v100) * (fh * gw)
        + (v111 - v110) * (fh * fw)
    )
    two_res = 2.0 * residual
    grad = np.empty((H * W * D, 3), dtype=np.float64)
    grad[:, 0] = np.sum(two_res * ds_dh, axis=0) * in_h
    grad[:, 1] = np.sum(two_res * ds_dw, axis=0) * in_w
    grad[:, 2] = np.sum(two_res * ds_dd, axis=0) * in_d
    return loss, grad.reshape(H, W, D, 3)


def _diffusion_term(phi: np.ndarray, weight: float, want_grad: bool):
    """weight * sum of squared forward differences of each component."""
    loss = 0.0
    grad = np.zeros_like(phi) if want_grad else None
    for ax in range(3):
        front = [slice(None)] * 4
        back = [slice(None)] * 4
        front[ax] = slice(None, -1)
        back[ax] = slice(1, None)
        diff = phi[tuple(back)] - phi[tuple(front)]
        loss += weight * float(np.sum(diff * diff))
        if want_grad:
            grad[tuple(front)] -= 2.0 * weight * diff
            grad[tuple(back)] += 2.0 * weight * diff
    return loss, grad


def _check_inputs(f_fixed: FeatureVolume, f_moving: FeatureVolume, field: DisplacementField):
    if f_fixed.dims != f_moving.dims or f_fixed.channels != f_moving.channels:
        raise ValueError(
            f"feature volumes differ: {f_fixed.dims}x{f_fixed.channels} vs "
            f"{f_moving.dims}x{f_moving.channels}"
        )
    if field.dims != f_fixed.dims:
        raise ValueError(f"field dims {field.dims} do not match features {f_fixed.dims}")


def registration_loss(
    f_fixed: FeatureVolume,
    f_moving: FeatureVolume,
    field: DisplacementField,
    reg_weight: float,
) -> float:
    """Feature SSD plus diffusion regularization at a given field."""
    _check_inputs(f_fixed, f_moving, field)
    data, _ = _data_term(f_fixed.data, f_moving.data, field.vectors, want_grad=False)
    reg, _ = _diffusion_term(field.vectors, reg_weight, want_grad=False)
    return data + reg


def loss_and_gradient(
    f_fixed: FeatureVolume,
    f_moving: FeatureVolume,
    field: DisplacementField,
    reg_weight: float,
) -> tuple[float, np.ndarray]:
    """Loss and its analytic gradient with respect to the field, (H, W, D, 3)."""
    _check_inputs(f_fixed, f_moving, field)
    data, dgrad = _data_term(f_fixed.data, f_moving.data, field.vectors, want_grad=True)
    reg, rgrad = _diffusion_term(field.vectors, reg_weight, want_grad=True)
    return data + reg, dgrad + rgrad


def instance_optimize(
    f_fixed: FeatureVolume,
    f_moving: FeatureVolume,
    init: DisplacementField,
    cfg: InstOptConfig | None = None,
) -> DisplacementField:
    """Refine a displacement field by Adam steps on the registration loss.

    Runs cfg.iterations adaptive-moment steps from `init`, box-smoothing the
    field after each step (or once at the end when smooth_every_step is
    off). Raises NumericalError naming the iteration if the loss leaves the
    finite range.
    """
    cfg = cfg or InstOptConfig()
    _check_inputs(f_fixed, f_moving, init)
    phi = init.vectors.copy()
    m = np.zeros_like(phi)
    v = np.zeros_like(phi)
    for it in range(1, cfg.iterations + 1):
        loss, grad = loss_and_gradient(
            f_fixed, f_moving, DisplacementField(phi, init.spacing), cfg.reg_weight
        )
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at iteration {it}")
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad * grad
        m_hat = m / (1.0 - cfg.adam_beta1**it)
        v_hat = v / (1.0 - cfg.adam_beta2**it)
        phi = phi - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        if cfg.smooth_every_step:
            phi = _box_filter(phi, cfg.smooth_kernel, 1)
    if not cfg.smooth_every_step:
        phi = _box_filter(phi, cfg.smooth_kernel, 1)
    if not np.isfinite(phi).all():
        raise NumericalError(f"non-finite field after iteration {cfg.iterations}")
    return DisplacementField(phi, init.spacing)
