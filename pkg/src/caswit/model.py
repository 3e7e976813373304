"""Dual-branch context-aware segmentation model and its single-stream baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderConfig, UPerNetLite
from .fusion import CrossFusion, FusionConfig
from .nn import Module
from .swin import StreamConfig, SwinStream, preset
from .tensor import Tensor, no_grad


@dataclass
class ModelConfig:
    num_classes: int = 4
    scale: str = "toy"
    fusion_stages: set = field(default_factory=lambda: {1, 2, 3, 4})
    gated: bool = False
    share_encoders: bool = False
    fpn_channels: int = 64
    ppm_bins: list = field(default_factory=lambda: [1, 2])
    stream: StreamConfig | None = None

    def stream_config(self) -> StreamConfig:
        return self.stream if self.stream is not None else preset(self.scale)

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(self.fusion_stages, self.gated, list(self.stream_config().heads))

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.num_classes, self.fpn_channels, list(self.ppm_bins))


def as_batch(x) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return x.reshape(1, *x.shape) if x.ndim == 3 else x


class DualEncoder(Module):
    """HR and LR Swin streams with cross-fusion after each enabled stage."""

    def __init__(self, stream: StreamConfig, fusion: FusionConfig, rng: np.random.Generator, share: bool = False):
        self.hr_encoder = SwinStream(stream, rng)
        self.lr_encoder = self.hr_encoder if share else SwinStream(stream, rng)
        self.fusion = CrossFusion(stream.channels, fusion, rng)

    def forward_embedded(self, x_hr: Tensor, x_lr: Tensor | None) -> tuple[list, list | None]:
        """Run all stages from stage-1 embeddings; returns fused HR maps and raw LR maps."""
        hr_feats, lr_feats = [], None if x_lr is None else []
        for s in range(4):
            x_hr = self.hr_encoder.run_stage(s, x_hr)
            if x_lr is not None:
                x_lr = self.lr_encoder.run_stage(s, x_lr)
                lr_feats.append(x_lr)
            x_hr = self.fusion.fuse_stage(x_hr, x_lr, s + 1)
            hr_feats.append(x_hr)
        return hr_feats, lr_feats

    def forward(self, hr: Tensor, lr: Tensor | None) -> tuple[list, list | None]:
        x_lr = None if lr is None else self.lr_encoder.embed(lr)
        return self.forward_embedded(self.hr_encoder.embed(hr), x_lr)


class CASWiT(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        stream = cfg.stream_config()
        self.backbone = DualEncoder(stream, cfg.fusion_config(), rng, cfg.share_encoders)
        self.decoder = UPerNetLite(stream.channels, cfg.decoder_config(), rng)
        self.aux_decoder = UPerNetLite(stream.channels, cfg.decoder_config(), rng)

    @property
    def fusion_active(self) -> bool:
        return self.backbone.fusion.cfg.active

    def forward(self, hr, lr=None, with_aux: bool | None = None) -> tuple[Tensor, Tensor | None]:
        """Return ``(hr_logits, lr_logits)``; the auxiliary LR head only runs when ``with_aux``.

        ``with_aux`` defaults to the training flag, so inference never touches it.
        """
        hr = as_batch(hr)
        lr = None if lr is None else as_batch(lr)
        with_aux = self.training if with_aux is None else with_aux
        need_lr = self.fusion_active or with_aux
        if need_lr and lr is None:
            raise ValueError("this configuration needs the LR context image")
        hr_feats, lr_feats = self.backbone(hr, lr if need_lr else None)
        logits_hr = self.decoder(hr_feats, hr.shape[1:3])
        logits_lr = self.aux_decoder(lr_feats, lr.shape[1:3]) if with_aux else None
        return logits_hr, logits_lr

    def predict(self, hr, lr=None) -> np.ndarray:
        with no_grad():
            logits, _ = self.forward(hr, lr, with_aux=False)
        return logits.data.argmax(axis=-1)


class SwinUPerNet(Module):
    """Single-stream HR encoder + decoder, the no-context baseline."""

    def __init__(self, encoder: SwinStream, decoder: UPerNetLite):
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def from_caswit(cls, model: CASWiT) -> "SwinUPerNet":
        return cls(model.backbone.hr_encoder, model.decoder)

    def forward(self, hr) -> Tensor:
        hr = as_batch(hr)
        return self.decoder(self.encoder.encode(hr), hr.shape[1:3])
