"""Probability models and differentiable rate estimation.

Two models feed the range coder: a learned per-channel factorized prior for
the hyper-latent, and a conditional Gaussian for the latent whose (mu, sigma)
are predicted slice-by-slice by a channel-autoregressive context model with
latent residual prediction.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .errors import ConfigError

# Floor keeps -log2(p) finite without measurably distorting bin-mass sums.
LIKELIHOOD_FLOOR = 2.0 ** -46
_INV_SQRT2 = 2.0 ** -0.5


class _LowerBoundFn(torch.autograd.Function):
    """clamp_min with a straight-through gradient at the boundary."""

    @staticmethod
    def forward(ctx, x, bound):
        ctx.save_for_backward(x)
        ctx.bound = bound
        return torch.clamp_min(x, bound)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        keep = (x >= ctx.bound) | (grad < 0)
        return grad * keep, None


def lower_bound(x: torch.Tensor, bound: float) -> torch.Tensor:
    return _LowerBoundFn.apply(x, bound)


class EntropyParams(NamedTuple):
    """Per-element Gaussian location/scale for one latent slice."""

    mu: torch.Tensor
    sigma: torch.Tensor


# ---------------------------------------------------------------------------
# Factorized prior for the hyper-latent
# ---------------------------------------------------------------------------


class FactorizedPrior(nn.Module):
    """Learned per-channel cumulative model built from small monotone layers.

    Each channel owns a chain of matrices constrained positive through
    softplus, with bounded tanh gating between layers, ending in a sigmoid.
    Monotonicity of the resulting CDF is structural, so every integer bin
    carries strictly positive mass.
    """

    def __init__(
        self,
        channels: int,
        filters: Sequence[int] = (3, 3, 3),
        init_scale: float = 4.0,
        tail_mass: float = 2.0 ** -9,
    ):
        super().__init__()
        self.channels = channels
        self.tail_mass = float(tail_mass)
        dims = (1,) + tuple(filters) + (1,)
        self._num_layers = len(dims) - 1
        scale = init_scale ** (1.0 / self._num_layers)
        for k in range(self._num_layers):
            init = math.log(math.expm1(1.0 / scale / dims[k + 1]))
            w = torch.full((channels, dims[k + 1], dims[k]), init)
            b = torch.empty(channels, dims[k + 1], 1).uniform_(-0.5, 0.5)
            self.register_parameter(f"weight{k}", nn.Parameter(w))
            self.register_parameter(f"bias{k}", nn.Parameter(b))
            if k < self._num_layers - 1:
                a = torch.zeros(channels, dims[k + 1], 1)
                self.register_parameter(f"factor{k}", nn.Parameter(a))

    def _logits_cdf(self, x: torch.Tensor) -> torch.Tensor:
        """x: (C, 1, n) -> logit of the per-channel CDF, same shape."""
        h = x
        for k in range(self._num_layers):
            w = getattr(self, f"weight{k}").to(x.dtype)
            b = getattr(self, f"bias{k}").to(x.dtype)
            h = F.softplus(w) @ h + b
            if k < self._num_layers - 1:
                a = getattr(self, f"factor{k}").to(x.dtype)
                h = h + torch.tanh(a) * torch.tanh(h)
        return h

    def cdf(self, x: torch.Tensor) -> torch.Tensor:
        """Per-channel CDF on a (C, 1, n) grid."""
        return torch.sigmoid(self._logits_cdf(x))

    def likelihood(self, z: torch.Tensor) -> torch.Tensor:
        """Mass of the unit bin centered at each element of z: (B, C, H, W)."""
        if not torch.isfinite(z).all():
            raise ValueError("non-finite hyper-latent passed to factorized prior")
        b, c, h, w = z.shape
        if c != self.channels:
            raise ConfigError(f"prior has {self.channels} channels, got {c}")
        flat = z.permute(1, 0, 2, 3).reshape(c, 1, -1)
        lo = self._logits_cdf(flat - 0.5)
        hi = self._logits_cdf(flat + 0.5)
        # Evaluate both sigmoids on their well-conditioned side.
        sign = -torch.sign(lo + hi).detach()
        lik = torch.abs(torch.sigmoid(sign * hi) - torch.sigmoid(sign * lo))
        lik = lower_bound(lik, LIKELIHOOD_FLOOR)
        return lik.reshape(c, b, h, w).permute(1, 0, 2, 3)

    @torch.no_grad()
    def quantile(self, p: float) -> torch.Tensor:
        """Per-channel x with CDF(x) = p, by bisection in float64. Shape (C,)."""
        if not 0.0 < p < 1.0:
            raise ValueError("quantile probability must be in (0, 1)")
        target = torch.full((self.channels, 1, 1), p, dtype=torch.float64)
        lo = torch.full_like(target, -1.0)
        hi = torch.ones_like(target)
        for _ in range(64):  # exponential bracket growth
            need_lo = self.cdf(lo) > target
            need_hi = self.cdf(hi) < target
            if not bool(need_lo.any()) and not bool(need_hi.any()):
                break
            lo = torch.where(need_lo, lo * 2.0, lo)
            hi = torch.where(need_hi, hi * 2.0, hi)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < target
            lo = torch.where(below, mid, lo)
            hi = torch.where(below, hi, mid)
        return (0.5 * (lo + hi)).reshape(self.channels)

    @torch.no_grad()
    def medians(self) -> torch.Tensor:
        return self.quantile(0.5)

    @torch.no_grad()
    def tail_bounds(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-channel (lower, upper) quantiles at tail_mass/2 from each end."""
        return self.quantile(self.tail_mass / 2), self.quantile(1 - self.tail_mass / 2)


def factorized_likelihood(z: torch.Tensor, prior: FactorizedPrior) -> torch.Tensor:
    return prior.likelihood(z)


# ---------------------------------------------------------------------------
# Conditional Gaussian for the latent
# ---------------------------------------------------------------------------


def gaussian_conditional_likelihood(
    v: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor
) -> torch.Tensor:
    """Mass of the unit bin at v under N(mu, sigma^2): Phi(d+1/2) - Phi(d-1/2).

    Uses erfc on the positive side of the symmetric difference so far-tail
    bins keep full relative precision.
    """
    d = torch.abs(v - mu)
    upper = torch.erfc((d - 0.5) / sigma * _INV_SQRT2)
    lower = torch.erfc((d + 0.5) / sigma * _INV_SQRT2)
    return lower_bound(0.5 * (upper - lower), LIKELIHOOD_FLOOR)


def make_scale_table(
    scale_min: float = 0.11, scale_max: float = 256.0, levels: int = 64
) -> torch.Tensor:
    """Log-spaced sigma grid shared by encoder and decoder CDF tables."""
    return torch.exp(
        torch.linspace(math.log(scale_min), math.log(scale_max), levels, dtype=torch.float64)
    )


def snap_scale_indexes(sigma: torch.Tensor, scale_table: torch.Tensor) -> torch.Tensor:
    """Index of the nearest table entry >= sigma (clamped to the last entry)."""
    idx = torch.searchsorted(scale_table.to(sigma.dtype), sigma.contiguous())
    return idx.clamp_(max=len(scale_table) - 1)


def estimate_rate_bpp(
    likelihoods: Sequence[torch.Tensor], num_pixels: int
) -> torch.Tensor:
    """Total self-information of all likelihood tensors, in bits per pixel."""
    total = None
    for lik in likelihoods:
        bits = (-torch.log2(lik)).sum()
        total = bits if total is None else total + bits
    return total / num_pixels


# ---------------------------------------------------------------------------
# Channel-autoregressive context model
# ---------------------------------------------------------------------------


def _slice_net(in_ch: int, hidden: tuple[int, int], out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, hidden[0], kernel_size=3, padding=1),
        nn.GELU(),
        nn.Conv2d(hidden[0], hidden[1], kernel_size=3, padding=1),
        nn.GELU(),
        nn.Conv2d(hidden[1], out_ch, kernel_size=3, padding=1),
    )


class ChannelAutoregressiveEntropy(nn.Module):
    """Per-slice (mu, sigma) prediction plus bounded latent residual prediction.

    Slice i conditions on the hyper features and on all previously
    reconstructed slices, never on slices >= i, so decoding can proceed
    slice-by-slice.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.num_slices = cfg.num_slices
        self.slice_depth = cfg.slice_depth
        self.scale_min = cfg.scale_min
        hf = cfg.hyper_feature_depth
        hidden = cfg.slice_net_widths
        self.param_nets = nn.ModuleList(
            [
                _slice_net(hf + i * self.slice_depth, hidden, 2 * self.slice_depth)
                for i in range(self.num_slices)
            ]
        )
        self.lrp_nets = nn.ModuleList(
            [
                _slice_net(hf + (i + 1) * self.slice_depth, hidden, self.slice_depth)
                for i in range(self.num_slices)
            ]
        )

    def slice_params(
        self,
        i: int,
        hyper_features: torch.Tensor,
        decoded_slices: Sequence[torch.Tensor],
    ) -> EntropyParams:
        """Entropy parameters for slice ``i`` given the i previous slices."""
        if len(decoded_slices) != i:
            raise ConfigError(
                f"slice {i} requires exactly {i} previous slices, "
                f"got {len(decoded_slices)}"
            )
        inp = torch.cat([hyper_features, *decoded_slices], dim=1)
        out = self.param_nets[i](inp)
        mu, raw_sigma = out.chunk(2, dim=1)
        sigma = self.scale_min + F.softplus(raw_sigma)
        return EntropyParams(mu=mu, sigma=sigma)

    def slice_residual(
        self,
        i: int,
        hyper_features: torch.Tensor,
        decoded_slices: Sequence[torch.Tensor],
    ) -> torch.Tensor:
        """Bounded correction r_i with |r_i| < 1/2, so re-quantizing the
        corrected slice can never change the coded integers."""
        if len(decoded_slices) != i + 1:
            raise ConfigError(
                f"residual for slice {i} requires slices 0..{i}, "
                f"got {len(decoded_slices)}"
            )
        inp = torch.cat([hyper_features, *decoded_slices], dim=1)
        return 0.5 * torch.tanh(self.lrp_nets[i](inp))
