"""Toy training harness on the synthetic identity data.

Determinism is the organizing principle: model init, data, and batch
composition all come from ``np.random.default_rng`` seeded with integer
lists derived from (seed, purpose, step), never from shared generator
state. Two runs with the same config and seed write byte-identical metric
logs, and a run resumed from a checkpoint continues exactly where the
unbroken run would have been, because the sampler for step t depends only
on (seed, t) and the optimizer state rides along in the checkpoint.
"""

from __future__ import annotations

import os

import numpy as np

from .backbone import BackboneConfig
from .config import RunConfig, save_config
from .dump import load_checkpoint, save_checkpoint
from .losses import LossConfig, total_loss
from .model import FusionModel, ModelToggles
from .retrieval import RetrievalResult, evaluate
from .synthetic import ReidData, SyntheticWorld
from .tensor import Param

_MODEL_STREAM = 11
_BATCH_STREAM = 17


class Adam:
    def __init__(self, named_params: list[tuple[str, Param]], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.named = [(n, p) for n, p in named_params if p.requires_grad]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.named:
            g = p.grad
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.m:
            self.m[name] = arrays[f"adam.m.{name}"].copy()
            self.v[name] = arrays[f"adam.v.{name}"].copy()


def lr_at(step: int, cfg: RunConfig) -> float:
    """Linear warmup then cosine decay to min_lr_frac * lr."""
    warmup = max(1, int(round(cfg.warmup_frac * cfg.steps)))
    if step < warmup:
        return cfg.lr * (step + 1) / warmup
    lo = cfg.lr * cfg.min_lr_frac
    span = max(1, cfg.steps - warmup)
    progress = min(1.0, (step - warmup) / span)
    return lo + 0.5 * (1.0 + np.cos(np.pi * progress)) * (cfg.lr - lo)


def sample_batch(step: int, seed: int, data: ReidData, cfg: RunConfig):
    """P identities, K instances each, from a stateless per-step stream."""
    rng = np.random.default_rng([seed, _BATCH_STREAM, step])
    unique_ids = np.unique(data.ids)
    if cfg.batch_p > len(unique_ids):
        raise ValueError("batch_p exceeds the number of identities")
    chosen = rng.permutation(unique_ids)[:cfg.batch_p]
    samples, labels = [], []
    for ident in chosen:
        pool = np.flatnonzero(data.ids == ident)
        replace = len(pool) < cfg.batch_k
        picks = rng.choice(pool, size=cfg.batch_k, replace=replace)
        for i in picks:
            samples.append(data.samples[i])
            labels.append(ident)
    return samples, np.array(labels)


def build_model(cfg: RunConfig, seed: int) -> FusionModel:
    bcfg = BackboneConfig(embed_dim=cfg.embed_dim, layers=cfg.layers,
                          heads=cfg.heads, patch=cfg.patch,
                          image_h=cfg.image_h, image_w=cfg.image_w,
                          channels=cfg.channels, n_prompts=cfg.n_prompts,
                          ffn_ratio=cfg.ffn_ratio, gelu_exact=cfg.gelu_exact)
    toggles = ModelToggles(pfa=cfg.use_pfa, srp=cfg.use_srp, ma=cfg.use_ma,
                           srp_mode=cfg.srp_mode, ma_intra=cfg.ma_intra,
                           ma_inter=cfg.ma_inter)
    rng = np.random.default_rng([seed, _MODEL_STREAM])
    return FusionModel(bcfg, toggles, num_ids=cfg.num_ids, rng=rng,
                       d_state=cfg.d_state, dt_rank=cfg.dt_rank,
                       ma_blocks=cfg.ma_blocks,
                       pfa_hidden_ratio=cfg.pfa_hidden_ratio,
                       conv_kernel=cfg.conv_kernel,
                       scan_chunk=cfg.scan_chunk)


def build_world(cfg: RunConfig, seed: int) -> SyntheticWorld:
    return SyntheticWorld(seed=seed, num_ids=cfg.num_ids,
                          channels=cfg.channels, image_h=cfg.image_h,
                          image_w=cfg.image_w, latent_dim=cfg.latent_dim,
                          nuisance_dim=cfg.nuisance_dim, rho=cfg.rho,
                          sigma=cfg.sigma, nuisance_gain=cfg.nuisance_gain,
                          num_cams=cfg.num_cams)


def evaluate_model(model: FusionModel, query: ReidData,
                   gallery: ReidData) -> RetrievalResult:
    was_training = model.training
    model.eval()
    q = model.features(query.samples)
    g = model.features(gallery.samples)
    if was_training:
        model.train()
    return evaluate(q, query.ids, query.cams, g, gallery.ids, gallery.cams)


def _checkpoint_arrays(model: FusionModel, opt: Adam):
    # state_dict covers buffers (batch norm running stats) besides params
    arrays: dict[str, tuple[np.ndarray, bool]] = {}
    for name, (arr, frozen) in model.state_dict().items():
        arrays[f"model.{name}"] = (arr, frozen)
    for name, arr in opt.state_arrays().items():
        arrays[name] = (arr, False)
    return arrays


def _restore(model: FusionModel, opt: Adam, directory: str) -> int:
    arrays, meta = load_checkpoint(directory)
    state = {name[len("model."):]: entry for name, entry in arrays.items()
             if name.startswith("model.")}
    model.load_state_dict(state)
    opt.load_state_arrays({k: v for k, (v, _) in arrays.items()
                           if k.startswith("adam.")}, int(meta["adam_t"]))
    return int(meta["step"])


def train(cfg: RunConfig, seed: int, out_dir: str,
          resume_from: str | None = None, quiet: bool = False,
          halt_after: int | None = None) -> dict:
    """Run the training loop; returns final metrics.

    ``halt_after`` stops the loop after that many steps and writes the
    checkpoint there, leaving the rest of the schedule to a later resumed
    call with the same config. The learning rate schedule always spans
    ``cfg.steps``, so a halted-and-resumed run retraces the unbroken one.
    """
    os.makedirs(out_dir, exist_ok=True)
    save_config(os.path.join(out_dir, "config.cfg"), cfg)

    model = build_model(cfg, seed)
    model.train()
    opt = Adam(model.named_params())
    world = build_world(cfg, seed)
    train_data = world.train_part(cfg.instances_per_id)
    query, gallery = world.eval_parts(cfg.eval_instances_per_id,
                                      cfg.eval_queries_per_id)
    loss_cfg = LossConfig(lambda_ce=cfg.lambda_ce, lambda_tri=cfg.lambda_tri,
                          smoothing=cfg.smoothing, margin=cfg.margin,
                          soft_margin=cfg.soft_margin)

    start_step = 0
    if resume_from is not None:
        start_step = _restore(model, opt, resume_from)
        if not quiet:
            print(f"resumed from {resume_from} at step {start_step}")

    mode = "a" if start_step else "w"
    metrics_path = os.path.join(out_dir, "metrics.tsv")
    eval_path = os.path.join(out_dir, "eval.tsv")
    metrics = open(metrics_path, mode)
    evals = open(eval_path, mode)
    if not start_step:
        metrics.write("step\tlr\ttotal\tce_cls\ttri_cls\tce_ma\ttri_ma\n")
        evals.write("step\tmap\tcmc1\tcmc5\tqueries\n")

    def log_eval(step: int) -> RetrievalResult:
        res = evaluate_model(model, query, gallery)
        evals.write(f"{step}\t{res.mean_ap:.17g}\t{res.cmc_at(1):.17g}"
                    f"\t{res.cmc_at(5):.17g}\t{res.num_queries}\n")
        evals.flush()
        if not quiet:
            print(f"step {step} map {res.mean_ap:.4f}")
        return res

    if not start_step:
        log_eval(0)

    result = None
    reached = cfg.steps
    try:
        for step in range(start_step, cfg.steps):
            samples, labels = sample_batch(step, seed, train_data, cfg)
            model.zero_grad()
            f_cls, f_ma = model.forward_batch(samples)
            loss, parts = total_loss(f_cls, f_ma, labels, model.heads, loss_cfg)
            loss.backward()
            lr = lr_at(step, cfg)
            opt.step(lr)
            metrics.write(
                f"{step + 1}\t{lr:.17g}\t{parts['total']:.17g}"
                f"\t{parts['ce_cls']:.17g}\t{parts['tri_cls']:.17g}"
                f"\t{parts.get('ce_ma', float('nan')):.17g}"
                f"\t{parts.get('tri_ma', float('nan')):.17g}\n")
            metrics.flush()
            if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
                result = log_eval(step + 1)
            if halt_after is not None and step + 1 >= halt_after:
                reached = step + 1
                break
    finally:
        metrics.close()
        evals.close()

    save_checkpoint(os.path.join(out_dir, "checkpoint"),
                    _checkpoint_arrays(model, opt),
                    {"step": reached, "adam_t": opt.t})
    if result is None:
        result = evaluate_model(model, query, gallery)
    return {"map": result.mean_ap, "cmc1": result.cmc_at(1),
            "trainable": model.num_trainable(), "steps": cfg.steps}
