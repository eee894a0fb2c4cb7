"""Dense float64 tensor operations with reverse-mode gradients.

Tensors are ``torch.Tensor`` objects in float64; torch autograd supplies the
backward passes and :func:`grad_check` verifies every one of them against
central finite differences.  Spatial tensors are ``[C, H, W]`` (a leading
batch axis is accepted where noted); the column axis is longitude and may be
padded periodically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64
BN_EPS = 1e-8


def as_tensor(x, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x, dtype=DTYPE)
    if requires_grad:
        t = t.detach().clone().requires_grad_(True)
    return t


def _check_chw(x: torch.Tensor, name: str = "input") -> None:
    if x.dim() not in (3, 4):
        raise ValueError(f"{name} must be [C,H,W] or [B,C,H,W], got shape {tuple(x.shape)}")


def pad_sphere(x: torch.Tensor, pad: int, mode: str = "wrap") -> torch.Tensor:
    """Pad rows with zeros and columns periodically (``wrap``) or with zeros."""
    if pad == 0:
        return x
    if mode not in ("wrap", "zero"):
        raise ValueError(f"unknown padding mode {mode!r}")
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    if mode == "wrap":
        x = torch.cat([x[..., -pad:], x, x[..., :pad]], dim=-1)
        x = F.pad(x, (0, 0, pad, pad))
    else:
        x = F.pad(x, (pad, pad, pad, pad))
    return x.squeeze(0) if squeeze else x


def conv2d(x: torch.Tensor, kernel: torch.Tensor, stride: int = 1, padding: str = "zero",
           bias: torch.Tensor | None = None) -> torch.Tensor:
    """Planar cross-correlation with ``k//2`` padding (zero or longitude-wrap)."""
    _check_chw(x)
    if kernel.dim() != 4 or kernel.shape[2] != kernel.shape[3] or kernel.shape[2] % 2 == 0:
        raise ValueError("kernel must be [C_out, C_in, k, k] with odd k")
    if x.shape[-3] != kernel.shape[1]:
        raise ValueError(f"input has {x.shape[-3]} channels, kernel expects {kernel.shape[1]}")
    if stride < 1:
        raise ValueError("stride must be positive")
    squeeze = x.dim() == 3
    xb = x.unsqueeze(0) if squeeze else x
    xb = pad_sphere(xb, kernel.shape[2] // 2, padding)
    y = F.conv2d(xb, kernel, bias=bias, stride=stride)
    return y.squeeze(0) if squeeze else y


def bilinear_sample(field: torch.Tensor, locations) -> torch.Tensor:
    """Sample ``field[C,H,W]`` at fractional ``(row, col)`` pixel-centre locations.

    Rows clamp to the grid, columns wrap.  Returns ``[C, n]``.
    """
    if field.dim() != 3:
        raise ValueError("field must be [C,H,W]")
    loc = torch.as_tensor(np.asarray(locations, dtype=np.float64).reshape(-1, 2))
    C, H, W = field.shape
    if loc.shape[0] == 0:
        return field.new_zeros((C, 0))
    idx, wts = bilinear_indices(loc[:, 0].numpy(), loc[:, 1].numpy(), H, W)
    return gather_bilinear(field, idx, wts)


def bilinear_indices(rows: np.ndarray, cols: np.ndarray, H: int, W: int):
    """Flat corner indices ``[4, n]`` and weights ``[4, n]`` for bilinear sampling."""
    rows = np.clip(np.asarray(rows, dtype=np.float64), 0.0, H - 1)
    cols = np.asarray(cols, dtype=np.float64)
    r0 = np.floor(rows)
    fr = rows - r0
    r0 = r0.astype(np.int64)
    r1 = np.minimum(r0 + 1, H - 1)
    c0f = np.floor(cols)
    fc = cols - c0f
    c0 = c0f.astype(np.int64) % W
    c1 = (c0 + 1) % W
    idx = np.stack([r0 * W + c0, r0 * W + c1, r1 * W + c0, r1 * W + c1])
    wts = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc])
    return torch.from_numpy(idx), torch.from_numpy(wts)


def gather_bilinear(field: torch.Tensor, idx: torch.Tensor, wts: torch.Tensor) -> torch.Tensor:
    """Apply precomputed bilinear corners; ``field`` is ``[C,H,W]`` or ``[B,C,H,W]``."""
    flat = field.flatten(-2)
    n = idx.shape[1]
    g = flat.index_select(-1, idx.reshape(-1)).unflatten(-1, (4, n))
    return (g * wts.to(field.dtype)).sum(-2)


def maxpool2d(x: torch.Tensor, size: int = 2):
    """Max-pool with stride ``size``; returns the pooled tensor and argmax switches."""
    _check_chw(x)
    if x.shape[-2] % size or x.shape[-1] % size:
        raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by {size}")
    return F.max_pool2d(x, size, stride=size, return_indices=True)


def unpool2d(x: torch.Tensor, switches: torch.Tensor, size: int = 2) -> torch.Tensor:
    """Switch unpooling: each value returns to the position it was pooled from."""
    if x.shape != switches.shape:
        raise ValueError("switches must match the pooled tensor")
    out = (x.shape[-2] * size, x.shape[-1] * size)
    return F.max_unpool2d(x, switches, size, stride=size, output_size=out)


def upsample(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear resize on the sphere (pixel-centre aligned, longitude wrap)."""
    H, W = x.shape[-2:]
    Ho, Wo = size
    if (H, W) == (Ho, Wo):
        return x
    rows = (np.arange(Ho) + 0.5) * H / Ho - 0.5
    cols = (np.arange(Wo) + 0.5) * W / Wo - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    idx, wts = bilinear_indices(rr.ravel(), cc.ravel(), H, W)
    return gather_bilinear(x, idx, wts).unflatten(-1, (Ho, Wo))


def batchnorm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
              running_mean: torch.Tensor | None = None, running_var: torch.Tensor | None = None,
              training: bool = True, momentum: float = 0.1, eps: float = BN_EPS) -> torch.Tensor:
    """Per-channel batch normalisation over all non-channel axes.

    In training mode the batch statistics (biased variance) are used and the
    running buffers, if given, are updated in place.  In eval mode the
    running statistics are used and the op is a fixed affine map.
    """
    squeeze = x.dim() == 3
    xb = x.unsqueeze(0) if squeeze else x
    y = F.batch_norm(xb, running_mean, running_var, gamma, beta, training=training,
                     momentum=momentum, eps=eps)
    return y.squeeze(0) if squeeze else y


def relu(x):
    return torch.relu(x)


def sigmoid(x):
    return torch.sigmoid(x)


def tanh(x):
    return torch.tanh(x)


def mlp(x: torch.Tensor, w1, b1, w2, b2) -> torch.Tensor:
    """Two-layer perceptron ``w2 @ relu(w1 @ x + b1) + b2`` over the last axis."""
    return F.linear(F.relu(F.linear(x, w1, b1)), w2, b2)


CONSTANT_RTOL = 1e-12


def minmax_normalize(x: torch.Tensor) -> torch.Tensor:
    """Rescale to [0, 1]; a constant map becomes all zeros.

    Spans within rounding noise of the map's magnitude count as constant so
    that last-bit differences are not stretched to the full range.
    """
    lo, hi = x.min(), x.max()
    span = hi - lo
    if span.item() <= CONSTANT_RTOL * max(1.0, abs(hi.item()), abs(lo.item())):
        return x * 0.0
    return (x - lo) / span


@dataclass
class GradCheckReport:
    op: str
    max_rel_error: float
    passed: bool
    n_checked: int = 0
    detail: str = ""

    def __str__(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.op:<28s} max_rel_err={self.max_rel_error:.3e} ({self.n_checked} coords){self.detail}"


GRAD_TOL = 1e-4


def grad_check(op: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor] | torch.Tensor,
               epsilon: float = 1e-5, name: str | None = None, max_coords: int | None = None,
               seed: int = 0, tol: float = GRAD_TOL) -> GradCheckReport:
    """Compare autograd gradients of ``op`` with central finite differences.

    The output is reduced to a scalar with a fixed random projection.  Only
    tensors with ``requires_grad`` are perturbed; with ``max_coords`` a random
    subset of coordinates per tensor is checked.  The relative error of a
    coordinate is ``|a - n| / max(|a|, |n|, s)`` where ``s`` is 1e-3 times the
    largest gradient magnitude of that tensor, so near-zero entries do not
    dominate.
    """
    name = name or getattr(op, "__name__", "op")
    if isinstance(inputs, torch.Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    targets = [t for t in inputs if isinstance(t, torch.Tensor) and t.requires_grad]
    if not targets:
        return GradCheckReport(name, math.inf, False, 0, " (no differentiable inputs)")
    gen = torch.Generator().manual_seed(seed)
    try:
        with torch.no_grad():
            out0 = op(*inputs)
        proj = torch.randn(out0.shape, generator=gen, dtype=DTYPE)

        def scalar() -> float:
            with torch.no_grad():
                return float((op(*inputs) * proj).sum())

        for t in targets:
            t.grad = None
        loss = (op(*inputs) * proj).sum()
        grads = torch.autograd.grad(loss, targets, allow_unused=True)
    except (RuntimeError, ValueError) as exc:
        return GradCheckReport(name, math.inf, False, 0, f" (error: {exc})")

    worst = 0.0
    count = 0
    rng = np.random.default_rng(seed)
    for t, g in zip(targets, grads):
        g = torch.zeros_like(t) if g is None else g
        if not torch.isfinite(g).all():
            return GradCheckReport(name, math.inf, False, count, " (non-finite analytic gradient)")
        flat = t.data.view(-1)
        gflat = g.reshape(-1)
        coords = np.arange(flat.numel())
        if max_coords is not None and flat.numel() > max_coords:
            coords = rng.choice(flat.numel(), size=max_coords, replace=False)
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            orig = float(flat[i])
            flat[i] = orig + epsilon
            fp = scalar()
            flat[i] = orig - epsilon
            fm = scalar()
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * epsilon)
        if not np.isfinite(numeric).all():
            return GradCheckReport(name, math.inf, False, count, " (non-finite finite difference)")
        analytic = gflat.detach().numpy()[coords]
        scale = 1e-3 * max(np.abs(gflat.detach().numpy()).max(), np.abs(numeric).max(), 1e-12)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
        count += len(coords)
    return GradCheckReport(name, worst, worst < tol, count)
