"""The assembled codec: transforms + entropy models + quantization glue.

Checkpoints are single ``.npz`` archives holding every weight array under a
``transform/stage/block/layer`` style name (the state-dict path with dots
replaced by slashes) plus the serialized model config, so a checkpoint alone
reconstructs the exact model.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .entropy import (
    ChannelAutoregressiveEntropy,
    FactorizedPrior,
    estimate_rate_bpp,
    gaussian_conditional_likelihood,
    make_scale_table,
    snap_scale_indexes,
)
from .errors import ConfigError
from .quantization import QuantMode, add_uniform_noise, round_half_away, ste_round
from .transforms import (
    AnalysisTransform,
    HyperAnalysisTransform,
    HyperSynthesisTransform,
    SynthesisTransform,
)


class CodecModel(nn.Module):
    """End-to-end image compression model."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.analysis = AnalysisTransform(cfg)
        self.synthesis = SynthesisTransform(cfg)
        self.hyper_analysis = HyperAnalysisTransform(cfg)
        self.hyper_synthesis = HyperSynthesisTransform(cfg)
        self.prior = FactorizedPrior(
            cfg.hyper_depth,
            filters=cfg.prior_filters,
            init_scale=cfg.prior_init_scale,
            tail_mass=cfg.tail_mass,
        )
        self.charm = ChannelAutoregressiveEntropy(cfg)
        self.register_buffer(
            "scale_table",
            make_scale_table(cfg.scale_min, cfg.scale_max, cfg.scale_levels),
        )
        self.lrp_enabled = cfg.lrp_enabled

    # -- training path ------------------------------------------------------

    def forward(
        self,
        x: torch.Tensor,
        mode: QuantMode = QuantMode.TRAIN_NOISE,
        noise_seed: int = 0,
        synthesis_ste: bool = False,
    ) -> dict:
        """Relaxed forward pass for optimization.

        The rate term must always see the noise relaxation; use
        :meth:`eval_forward` for deterministic rounding.
        """
        if mode is not QuantMode.TRAIN_NOISE:
            raise ConfigError(
                "forward() builds the training graph and only supports "
                "TRAIN_NOISE; call eval_forward() for EVAL_ROUND"
            )
        y = self.analysis(x)
        z = self.hyper_analysis(y)

        gen = torch.Generator(device="cpu")
        gen.manual_seed(int(noise_seed))
        y_tilde = add_uniform_noise(y, gen)
        z_tilde = add_uniform_noise(z, gen)

        z_lik = self.prior.likelihood(z_tilde)
        hyper = self.hyper_synthesis(z_tilde)

        y_slices = y.chunk(self.cfg.num_slices, dim=1)
        noisy_slices = list(y_tilde.chunk(self.cfg.num_slices, dim=1))
        lik_slices = []
        dec_slices = []
        for i in range(self.cfg.num_slices):
            mu, sigma = self.charm.slice_params(i, hyper, noisy_slices[:i])
            lik_slices.append(gaussian_conditional_likelihood(noisy_slices[i], mu, sigma))
            if synthesis_ste:
                base = mu + ste_round(y_slices[i] - mu)
            else:
                base = noisy_slices[i]
            if self.lrp_enabled:
                base = base + self.charm.slice_residual(i, hyper, noisy_slices[: i + 1])
            dec_slices.append(base)
        x_hat = self.synthesis(torch.cat(dec_slices, dim=1))

        num_pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
        y_lik = torch.cat(lik_slices, dim=1)
        return {
            "x_hat": x_hat,
            "y_likelihoods": y_lik,
            "z_likelihoods": z_lik,
            "bpp_y": estimate_rate_bpp([y_lik], num_pixels),
            "bpp_z": estimate_rate_bpp([z_lik], num_pixels),
            "num_pixels": num_pixels,
        }

    # -- deterministic path --------------------------------------------------

    @torch.no_grad()
    def z_medians(self) -> torch.Tensor:
        """Per-channel quantization offsets for the hyper-latent, shape (N,)."""
        return self.prior.medians().to(self.scale_table.device).float()

    @torch.no_grad()
    def eval_forward(self, x: torch.Tensor, collect_symbols: bool = False) -> dict:
        """Deterministic rounding pass; the exact computation the codec runs.

        With ``collect_symbols`` the returned dict additionally carries the
        integer symbols and per-element scale indexes the range coder needs,
        in coding order.
        """
        y = self.analysis(x)
        z = self.hyper_analysis(y)

        medians = self.z_medians().reshape(1, -1, 1, 1)
        z_sym = round_half_away(z - medians)
        z_hat = z_sym + medians
        z_lik = self.prior.likelihood(z_hat)
        hyper = self.hyper_synthesis(z_hat)

        out = self.reconstruct_from_hyper(
            hyper, y=y, collect_symbols=collect_symbols
        )
        num_pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
        result = {
            "x_hat": out["x_hat"],
            "y_likelihoods": out["y_likelihoods"],
            "z_likelihoods": z_lik,
            "z_hat": z_hat,
            "num_pixels": num_pixels,
            "bpp_y": estimate_rate_bpp([out["y_likelihoods"]], num_pixels),
            "bpp_z": estimate_rate_bpp([z_lik], num_pixels),
        }
        if collect_symbols:
            result["z_symbols"] = z_sym
            result["y_symbols"] = out["y_symbols"]
            result["sigma_indexes"] = out["sigma_indexes"]
        return result

    @torch.no_grad()
    def reconstruct_from_hyper(
        self,
        hyper: torch.Tensor,
        y: torch.Tensor | None = None,
        symbol_source=None,
        collect_symbols: bool = False,
    ) -> dict:
        """Slice-sequential reconstruction shared by encoder and decoder.

        Exactly one of ``y`` (encoder side: quantize against predicted mu) or
        ``symbol_source`` (decoder side: callable ``(i, mu, sigma_indexes) ->
        integer symbol tensor``, typically backed by the range decoder) must
        be given.  Entropy parameters condition on pre-residual
        reconstructions, so the coded symbols are independent of whether
        residual prediction is enabled.
        """
        if (y is None) == (symbol_source is None):
            raise ConfigError("pass exactly one of y= or symbol_source=")
        y_slices = y.chunk(self.cfg.num_slices, dim=1) if y is not None else None

        pre_lrp = []
        dec_slices = []
        lik_slices = []
        sym_out = []
        idx_out = []
        for i in range(self.cfg.num_slices):
            mu, sigma = self.charm.slice_params(i, hyper, pre_lrp)
            idx = snap_scale_indexes(sigma, self.scale_table)
            sigma_snap = self.scale_table[idx].to(sigma.dtype)
            if y_slices is not None:
                sym = round_half_away(y_slices[i] - mu)
            else:
                sym = symbol_source(i, mu, idx).to(mu.dtype)
            y_hat_pre = sym + mu
            lik_slices.append(
                gaussian_conditional_likelihood(y_hat_pre, mu, sigma_snap)
            )
            pre_lrp.append(y_hat_pre)
            if self.lrp_enabled:
                dec = y_hat_pre + self.charm.slice_residual(i, hyper, pre_lrp)
            else:
                dec = y_hat_pre
            dec_slices.append(dec)
            if collect_symbols or symbol_slices is not None:
                sym_out.append(sym)
                idx_out.append(idx)
        x_hat = self.synthesis(torch.cat(dec_slices, dim=1))
        return {
            "x_hat": x_hat,
            "y_likelihoods": torch.cat(lik_slices, dim=1),
            "y_symbols": sym_out,
            "sigma_indexes": idx_out,
        }

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


# ---------------------------------------------------------------------------
# Checkpoint archive
# ---------------------------------------------------------------------------

_CONFIG_KEY = "__model_config__"


def save_checkpoint(model: CodecModel, path) -> None:
    """Write every weight array plus the serialized config into one archive."""
    arrays = {
        name.replace(".", "/"): tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    cfg_json = json.dumps(dataclasses.asdict(model.cfg))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays, **{_CONFIG_KEY: np.array(cfg_json)})
    # np.savez appends .npz when missing; keep the caller's exact path.
    actual = path if path.suffix == ".npz" else path.with_name(path.name + ".npz")
    if actual != path:
        actual.rename(path)


def load_checkpoint(path) -> CodecModel:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if _CONFIG_KEY not in archive:
            raise ConfigError(f"{path} is not a codec checkpoint (missing config)")
        raw = json.loads(str(archive[_CONFIG_KEY]))
        for key in ("stage_depths", "stage_widths", "hyper_stage_depths",
                    "hyper_stage_widths", "slice_net_widths", "prior_filters"):
            raw[key] = tuple(raw[key])
        cfg = ModelConfig(**raw)
        model = CodecModel(cfg)
        state = {
            name.replace("/", "."): torch.from_numpy(np.asarray(archive[name]))
            for name in archive.files
            if name != _CONFIG_KEY
        }
    model.load_state_dict(state, strict=True)
    return model
