"""Scalar quantization: additive-noise training proxy and deterministic rounding.

Training uses additive uniform noise on both the rate term and the synthesis
input; inference rounds half away from zero so encoder and decoder agree
bit-exactly on every platform.
"""

from __future__ import annotations

import enum

import torch


class QuantMode(enum.Enum):
    TRAIN_NOISE = "train_noise"
    EVAL_ROUND = "eval_round"


def quantize_train(v: torch.Tensor, seed: int) -> torch.Tensor:
    """Add i.i.d. Uniform(-1/2, 1/2) noise, reproducible from ``seed``.

    The noise carries no gradient, so d(output)/d(input) is exactly 1.
    """
    gen = torch.Generator(device="cpu")
    gen.manual_seed(int(seed))
    noise = torch.rand(v.shape, generator=gen, dtype=v.dtype, device="cpu") - 0.5
    return v + noise.to(v.device)


def add_uniform_noise(v: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Like :func:`quantize_train` but drawing from a caller-owned generator."""
    noise = torch.rand(v.shape, generator=gen, dtype=v.dtype, device="cpu") - 0.5
    return v + noise.to(v.device)


def round_half_away(v: torch.Tensor) -> torch.Tensor:
    """Round to nearest integer, ties away from zero. torch.round would
    round ties to even, which is not stable across the coding contract."""
    return torch.sign(v) * torch.floor(torch.abs(v) + 0.5)


def quantize_eval(v: torch.Tensor, mu: torch.Tensor) -> torch.Tensor:
    """Mean-centered rounding: round(v - mu) + mu.

    The coded integer symbol is ``round(v - mu)``; the returned tensor is the
    dequantized value the decoder will reconstruct.
    """
    return round_half_away(v - mu) + mu


def quantize_symbols(v: torch.Tensor, mu: torch.Tensor) -> torch.Tensor:
    """The integer symbols actually written to the bitstream."""
    return round_half_away(v - mu)


def ste_round(v: torch.Tensor) -> torch.Tensor:
    """Straight-through rounding: forward rounds, backward is identity."""
    return v + (round_half_away(v) - v).detach()
