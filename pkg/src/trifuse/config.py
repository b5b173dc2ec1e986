"""Flat key=value run configuration.

One dataclass holds every knob for the toy experiments. Files are plain
``key = value`` lines; ``#`` starts a comment anywhere on a line, blank
lines are skipped, and unknown keys are rejected rather than ignored so a
typo cannot silently fall back to a default. Types come from the dataclass
field declarations.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


@dataclass
class RunConfig:
    # encoder
    embed_dim: int = 64
    layers: int = 4
    heads: int = 4
    patch: int = 8
    image_h: int = 32
    image_w: int = 16
    channels: int = 3
    ffn_ratio: int = 4
    gelu_exact: bool = False

    # trainable surface
    use_pfa: bool = True
    use_srp: bool = True
    use_ma: bool = True
    n_prompts: int = 4
    srp_mode: str = "fusion"
    pfa_hidden_ratio: float = 2.0
    d_state: int = 16
    dt_rank: int = 32
    ma_blocks: int = 2
    ma_intra: bool = True
    ma_inter: bool = True
    conv_kernel: int = 3
    scan_chunk: int = 128

    # loss
    lambda_ce: float = 0.25
    lambda_tri: float = 1.0
    smoothing: float = 0.1
    margin: float = 0.3
    soft_margin: bool = False

    # optimization
    lr: float = 3.5e-4
    warmup_frac: float = 0.1
    min_lr_frac: float = 0.01
    steps: int = 200
    batch_p: int = 4
    batch_k: int = 4
    eval_every: int = 50

    # synthetic data
    num_ids: int = 16
    instances_per_id: int = 8
    eval_instances_per_id: int = 6
    eval_queries_per_id: int = 2
    rho: float = 0.8
    sigma: float = 0.3
    nuisance_gain: float = 5.0
    latent_dim: int = 12
    nuisance_dim: int = 8
    num_cams: int = 4

    # benchmarking
    bench_lengths: str = "256,512,1024,2048"
    bench_reps: int = 5
    bench_warmup: int = 2


def _parse_value(raw: str, kind: type, key: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    # dataclass field types are strings under from __future__ annotations
    kinds = {"int": int, "float": float, "bool": bool, "str": str}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            setattr(cfg, key, _parse_value(raw, kinds[types[key]], key))
    return cfg


def save_config(path: str, cfg: RunConfig) -> None:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = f"{value:.17g}"
        lines.append(f"{f.name} = {value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
