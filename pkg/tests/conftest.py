import dataclasses

from trifuse.config import RunConfig


def make_tiny_cfg(**overrides) -> RunConfig:
    """A config small enough for whole training runs inside unit tests."""
    base = RunConfig(embed_dim=8, layers=2, heads=2, patch=4,
                     image_h=8, image_w=8, channels=1, n_prompts=2,
                     d_state=2, dt_rank=2, ma_blocks=1,
                     steps=4, eval_every=2, batch_p=2, batch_k=2,
                     num_ids=4, instances_per_id=3,
                     eval_instances_per_id=2, eval_queries_per_id=1,
                     num_cams=2, latent_dim=4, nuisance_dim=2)
    return dataclasses.replace(base, **overrides)
