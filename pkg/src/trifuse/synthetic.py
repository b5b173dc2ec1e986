"""Synthetic multi-modal identity data.

Each identity owns a latent vector. An instance of that identity in a
given modality blends the identity latent with instance noise,

    z = sqrt(rho) * z_id + sqrt(1 - rho) * eps,

then renders it through a fixed per-modality linear map into pixel space.
On top of the signal the renderer adds a structured low-rank nuisance term
(shared projection, per-instance coefficients), a fixed per-modality
pattern, and white pixel noise:

    image = W_m z + gain * sigma * (Q_m n) + pattern_m + sigma * eps_pix

The nuisance term is what keeps a frozen random encoder from ranking the
data trivially: it dominates raw pixel distances at moderate gain, yet is
linearly separable from the identity subspace, so a few trained adapters
recover it quickly.

Everything is drawn from ``np.random.default_rng`` seeded with integer
lists, so any sample is reproducible from (seed, part, id, instance) with
no generator state carried between calls. Train and eval parts draw
disjoint instance streams of the same identities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prompts import MODALITIES

_STRUCTURE = 101
_IDENTITY = 202
_INSTANCE = 303
_TRAIN, _EVAL = 0, 1


@dataclass
class ReidData:
    samples: list[dict[str, np.ndarray]]
    ids: np.ndarray
    cams: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)


class SyntheticWorld:
    """Fixed rendering maps plus identity latents for one seed."""

    def __init__(self, seed: int, num_ids: int, channels: int = 3,
                 image_h: int = 32, image_w: int = 16, latent_dim: int = 12,
                 nuisance_dim: int = 8, rho: float = 0.8, sigma: float = 0.3,
                 nuisance_gain: float = 5.0, num_cams: int = 4):
        if not 0.0 < rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")
        self.seed = seed
        self.num_ids = num_ids
        self.shape = (channels, image_h, image_w)
        self.latent_dim = latent_dim
        self.nuisance_dim = nuisance_dim
        self.rho = rho
        self.sigma = sigma
        self.nuisance_gain = nuisance_gain
        self.num_cams = num_cams

        pixels = channels * image_h * image_w
        structure = np.random.default_rng([seed, _STRUCTURE])
        self.render = {m: structure.normal(size=(pixels, latent_dim))
                       / np.sqrt(latent_dim) for m in MODALITIES}
        self.nuisance = {m: structure.normal(size=(pixels, nuisance_dim))
                         / np.sqrt(nuisance_dim) for m in MODALITIES}
        self.pattern = {m: 0.5 * structure.normal(size=pixels)
                        for m in MODALITIES}
        identity = np.random.default_rng([seed, _IDENTITY])
        self.id_latents = identity.normal(size=(num_ids, latent_dim))

    def _image(self, mod: str, ident: int, part: int, instance: int) -> np.ndarray:
        rng = np.random.default_rng(
            [self.seed, _INSTANCE, part, ident, instance, ord(mod)])
        z = (np.sqrt(self.rho) * self.id_latents[ident]
             + np.sqrt(1.0 - self.rho) * rng.normal(size=self.latent_dim))
        flat = self.render[mod] @ z
        flat = flat + (self.nuisance_gain * self.sigma
                       * (self.nuisance[mod] @ rng.normal(size=self.nuisance_dim)))
        flat = flat + self.pattern[mod]
        flat = flat + self.sigma * rng.normal(size=flat.size)
        return flat.reshape(self.shape)

    def _part(self, part: int, instances_per_id: int) -> ReidData:
        samples, ids, cams = [], [], []
        for ident in range(self.num_ids):
            for inst in range(instances_per_id):
                samples.append({m: self._image(m, ident, part, inst)
                                for m in MODALITIES})
                ids.append(ident)
                cams.append(inst % self.num_cams)
        return ReidData(samples=samples, ids=np.array(ids), cams=np.array(cams))

    def train_part(self, instances_per_id: int) -> ReidData:
        return self._part(_TRAIN, instances_per_id)

    def eval_parts(self, instances_per_id: int,
                   queries_per_id: int) -> tuple[ReidData, ReidData]:
        """Held-out instances of the training identities, split per id into
        queries and gallery. Camera tags keep round-robin order, so a query
        keeps cross-camera positives in the gallery."""
        if queries_per_id >= instances_per_id:
            raise ValueError("need at least one gallery instance per id")
        full = self._part(_EVAL, instances_per_id)
        q_idx, g_idx = [], []
        for i in range(len(full)):
            if i % instances_per_id < queries_per_id:
                q_idx.append(i)
            else:
                g_idx.append(i)
        return self._select(full, q_idx), self._select(full, g_idx)

    @staticmethod
    def _select(data: ReidData, idx: list[int]) -> ReidData:
        return ReidData(samples=[data.samples[i] for i in idx],
                        ids=data.ids[idx], cams=data.cams[idx])
