"""Three-stream fusion model over a frozen shared encoder.

Each sample is a dict of per-modality images. Every modality runs through
the same frozen backbone; the trainable surface is chosen by toggles:

  pfa  adds one parallel adapter per layer, shared across modalities
  srp  threads prompt groups through every layer and refines them between
       layers from the previous layer's harvested groups
  ma   aggregates final patch tokens across modalities into a fused vector

The class-token feature (three streams stacked) always exists; the fused
feature exists only with ``ma``. Identity heads for both live here too so
an optimizer can reach everything trainable through one module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import ParallelAdapter
from .aggregation import AggregationBlock, AggregationHead, Aggregator
from .backbone import BackboneConfig, VisionBackbone
from .losses import SupervisionHeads
from .nn import Module
from .prompts import MODALITIES, PromptBank
from .tensor import Tensor, concat, narrow, no_grad


@dataclass
class ModelToggles:
    pfa: bool = True
    srp: bool = True
    ma: bool = True
    srp_mode: str = "fusion"
    ma_intra: bool = True
    ma_inter: bool = True


class FusionModel(Module):
    def __init__(self, cfg: BackboneConfig, toggles: ModelToggles,
                 num_ids: int, rng: np.random.Generator,
                 d_state: int = 16, dt_rank: int = 32, ma_blocks: int = 2,
                 pfa_hidden_ratio: float = 2.0, conv_kernel: int = 3,
                 scan_chunk: int = 128):
        self.cfg = cfg
        self.toggles = toggles
        d = cfg.embed_dim

        self.backbone = VisionBackbone(cfg, rng)
        self.backbone.freeze()

        self.adapters = None
        if toggles.pfa:
            hidden = int(round(pfa_hidden_ratio * d))
            self.adapters = [ParallelAdapter(d, hidden, rng)
                             for _ in range(cfg.layers)]

        self.bank = None
        if toggles.srp:
            self.bank = PromptBank(d, cfg.n_prompts, cfg.layers, rng,
                                   mode=toggles.srp_mode)

        self.aggregator = None
        if toggles.ma:
            blocks = [AggregationBlock(d, d_state, dt_rank, conv_kernel, rng,
                                       use_intra=toggles.ma_intra,
                                       use_inter=toggles.ma_inter,
                                       chunk=scan_chunk)
                      for _ in range(ma_blocks)]
            self.aggregator = Aggregator(blocks, AggregationHead(d, rng))

        self.heads = SupervisionHeads(3 * d, num_ids, rng, with_ma=toggles.ma)

        #: per-modality sequence lengths seen at each layer, refreshed on
        #: every forward_sample; handy for asserting sequence surgery
        self.last_seq: dict[str, list[int]] = {}

    # -- forward -------------------------------------------------------

    def _run_stream(self, mod: str, image: np.ndarray) -> Tensor:
        x = self.backbone.tokens(image)
        n_star = x.shape[1]
        harvested = None
        lengths = []
        for i, layer in enumerate(self.backbone.blocks):
            if self.bank is not None:
                x = self.bank.assemble_layer_input(i, mod, x, harvested)
            lengths.append(x.shape[1])
            adapter = self.adapters[i] if self.adapters is not None else None
            x = layer(x, adapter=adapter)
            if self.bank is not None:
                x, groups = self.bank.harvest(mod, x, n_star)
                harvested = [groups[s] for s in MODALITIES]
        self.last_seq[mod] = lengths
        return self.backbone.norm(x)

    def forward_sample(self, sample: dict[str, np.ndarray]):
        tokens = {m: self._run_stream(m, sample[m]) for m in MODALITIES}
        f_cls = concat([narrow(tokens[m], 1, 0, 1) for m in MODALITIES], axis=0)
        f_ma = self.aggregator(tokens) if self.aggregator is not None else None
        return f_cls, f_ma

    def forward_batch(self, samples: list[dict[str, np.ndarray]]):
        cls_cols, ma_cols = [], []
        for sample in samples:
            f_cls, f_ma = self.forward_sample(sample)
            cls_cols.append(f_cls)
            if f_ma is not None:
                ma_cols.append(f_ma)
        f_cls = concat(cls_cols, axis=1)
        f_ma = concat(ma_cols, axis=1) if ma_cols else None
        return f_cls, f_ma

    # -- inference -----------------------------------------------------

    def features(self, samples: list[dict[str, np.ndarray]]) -> np.ndarray:
        """Retrieval embedding, one column per sample.

        The class-token feature, with the fused feature stacked below it
        when aggregation is enabled.
        """
        with no_grad():
            f_cls, f_ma = self.forward_batch(samples)
            if f_ma is None:
                return f_cls.data.copy()
            return np.concatenate([f_cls.data, f_ma.data], axis=0)
