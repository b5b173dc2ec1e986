"""Central finite-difference verification of every differentiable op.

The tensor core keeps a registry of op names that claim differentiability
(``trifuse.tensor.DIFFERENTIABLE_OPS``). This module owns a matching table
of check cases. ``run_suite`` walks the registry, so an op registered
without a case here fails the suite loudly; nothing is hand-listed at the
call site.

A case builds a scalar-valued closure plus the tensors to differentiate
with respect to. The analytic gradient comes from one backward pass, the
reference from central differences with step ``h`` on each coordinate
(or a random subset for expensive composed paths). The error metric is

    max |analytic - numeric| / max(1, |analytic|, |numeric|)

elementwise, which behaves like an absolute tolerance near zero and a
relative one for large gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import DIFFERENTIABLE_OPS, Param, Tensor, no_grad

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_err < self.tol


@dataclass
class Case:
    build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], Sequence[Tensor]]]
    tol: float = DEFAULT_TOL
    spot: int | None = None  # limit FD to this many coordinates per tensor


#: op name -> Case. Populated at import time below; tests may add entries
#: (e.g. a deliberately broken case) to exercise the failure path.
CASES: dict[str, Case] = {}


def register_case(name: str, build, tol: float = DEFAULT_TOL,
                  spot: int | None = None) -> None:
    CASES[name] = Case(build=build, tol=tol, spot=spot)


def _coords(t: Tensor, spot: int | None, rng: np.random.Generator) -> np.ndarray:
    n = t.data.size
    if spot is None or spot >= n:
        return np.arange(n)
    return rng.choice(n, size=spot, replace=False)


def check_function(fn: Callable[[], Tensor], wrt: Sequence[Tensor],
                   h: float = DEFAULT_H, spot: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Return the max elementwise gradient error of ``fn`` wrt ``wrt``."""
    rng = rng or np.random.default_rng(0)
    for t in wrt:
        t.zero_grad()
    out = fn()
    if out.size != 1:
        raise ValueError("gradcheck target must be scalar")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in wrt]

    worst = 0.0
    with no_grad():
        for t, a in zip(wrt, analytic):
            flat = t.data.reshape(-1)
            aflat = a.reshape(-1)
            for i in _coords(t, spot, rng):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(fn().data.reshape(-1)[0])
                flat[i] = orig - h
                fm = float(fn().data.reshape(-1)[0])
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                err = abs(aflat[i] - num) / max(1.0, abs(aflat[i]), abs(num))
                worst = max(worst, err)
    return worst


def run_suite(seed: int = 0, names: Sequence[str] | None = None) -> list[CheckResult]:
    """Check every registered differentiable op (or the named subset).

    Ops present in the registry but lacking a case are reported as failures
    with an infinite error, so coverage gaps cannot pass silently.
    """
    _ensure_cases()
    target = sorted(DIFFERENTIABLE_OPS | set(CASES)) if names is None else list(names)
    results = []
    for name in target:
        case = CASES.get(name)
        if case is None:
            results.append(CheckResult(name=name, max_err=float("inf"), tol=DEFAULT_TOL))
            continue
        rng = np.random.default_rng([seed, len(name), sum(map(ord, name))])
        fn, wrt = case.build(rng)
        err = check_function(fn, wrt, spot=case.spot, rng=rng)
        results.append(CheckResult(name=name, max_err=err, tol=case.tol))
    return results


def format_report(results: Sequence[CheckResult]) -> str:
    lines = ["op\tmax_rel_err\ttol\tstatus"]
    for r in sorted(results, key=lambda r: r.name):
        lines.append(f"{r.name}\t{r.max_err:.3e}\t{r.tol:.0e}\t"
                     f"{'ok' if r.ok else 'FAIL'}")
    bad = sum(1 for r in results if not r.ok)
    lines.append(f"# {len(results)} checks, {bad} failures")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# cases: tensor primitives
# ---------------------------------------------------------------------------

def _away_from(x: np.ndarray, pivot: float, gap: float) -> np.ndarray:
    """Nudge values out of a +-gap band around pivot (kink avoidance)."""
    close = np.abs(x - pivot) < gap
    return x + np.where(close, np.sign(x - pivot + 1e-12) * gap, 0.0)


def _pair(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 1)), requires_grad=True)  # broadcast path
    return a, b


# Case closures get re-evaluated many times under finite differences, so a
# weighting drawn inside the closure must come out identical call to call.
# Weights are cached per (generator, shape): drawn once on first use, then
# reused for the lifetime of the case. The generator itself is kept in the
# cache entry so its id cannot be recycled.
_WEIGHT_CACHE: dict[int, tuple[np.random.Generator, dict]] = {}


def _weighted_sum(t: Tensor, rng) -> Tensor:
    from .tensor import mul, tsum
    entry = _WEIGHT_CACHE.get(id(rng))
    if entry is None or entry[0] is not rng:
        entry = (rng, {})
        _WEIGHT_CACHE[id(rng)] = entry
    per_rng = entry[1]
    w = per_rng.get(t.shape)
    if w is None:
        w = per_rng[t.shape] = rng.normal(size=t.shape)
    return tsum(mul(t, Tensor(w)))


def _ensure_cases() -> None:
    if _CASES_BUILT[0]:
        return
    _CASES_BUILT[0] = True
    _build_primitive_cases()
    _build_module_cases()


_CASES_BUILT = [False]


def _build_primitive_cases() -> None:
    from . import tensor as T

    def simple(op, positive=False, avoid_zero=False):
        def build(rng):
            data = rng.normal(size=(3, 4))
            if positive:
                data = np.abs(data) + 0.5
            if avoid_zero:
                data = _away_from(data, 0.0, 0.05)
            x = Tensor(data, requires_grad=True)
            return (lambda: _weighted_sum(op(x), rng)), [x]
        return build

    register_case("neg", simple(T.neg))
    register_case("exp", simple(T.exp))
    register_case("log", simple(T.log, positive=True), tol=1e-6)
    register_case("sqrt", simple(T.sqrt, positive=True), tol=1e-6)
    register_case("tanh", simple(T.tanh), tol=1e-6)
    register_case("sigmoid", simple(T.sigmoid), tol=1e-6)
    register_case("softplus", simple(T.softplus), tol=1e-6)
    register_case("erf", simple(T.erf), tol=1e-6)
    register_case("relu", simple(T.relu, avoid_zero=True), tol=1e-6)
    register_case("gelu", simple(T.gelu), tol=1e-6)
    register_case("silu", simple(T.silu), tol=1e-6)
    register_case("pow", simple(lambda x: T.power(x, 3.0)))

    def binary(op, safe_b=False):
        def build(rng):
            a, b = _pair(rng)
            if safe_b:
                b = Tensor(np.sign(b.data) * (np.abs(b.data) + 0.5),
                           requires_grad=True)
            return (lambda: _weighted_sum(op(a, b), rng)), [a, b]
        return build

    register_case("add", binary(T.add), tol=1e-6)
    register_case("sub", binary(T.sub), tol=1e-6)
    register_case("mul", binary(T.mul), tol=1e-6)
    register_case("div", binary(T.div, safe_b=True), tol=1e-6)

    def matmul_case(rng):
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 5)), requires_grad=True)  # broadcast batch
        return (lambda: _weighted_sum(T.matmul(a, b), rng)), [a, b]

    register_case("matmul", matmul_case, tol=1e-6)

    def sum_case(rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return (lambda: _weighted_sum(T.tsum(x, axis=1), rng)), [x]

    register_case("sum", sum_case, tol=1e-6)

    def mean_case(rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return (lambda: _weighted_sum(T.tmean(x, axis=0, keepdims=True), rng)), [x]

    register_case("mean", mean_case, tol=1e-6)

    def extreme_case(op):
        def build(rng):
            # distinct values so the argextreme is stable under the FD step
            base = rng.permutation(12).astype(float).reshape(3, 4)
            x = Tensor(base + 0.1 * rng.normal(size=(3, 4)), requires_grad=True)
            return (lambda: _weighted_sum(op(x, axis=1), rng)), [x]
        return build

    register_case("max", extreme_case(T.tmax), tol=1e-6)
    register_case("min", extreme_case(T.tmin), tol=1e-6)

    def reshape_case(rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return (lambda: _weighted_sum(T.reshape(x, (2, 6)), rng)), [x]

    register_case("reshape", reshape_case, tol=1e-6)

    def swap_case(rng):
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        return (lambda: _weighted_sum(T.swapaxes(x, 1, 2), rng)), [x]

    register_case("swapaxes", swap_case, tol=1e-6)

    def concat_case(rng):
        xs = [Tensor(rng.normal(size=(2, n)), requires_grad=True) for n in (1, 3, 2)]
        return (lambda: _weighted_sum(T.concat(xs, axis=1), rng)), xs

    register_case("concat", concat_case, tol=1e-6)

    def narrow_case(rng):
        x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        return (lambda: _weighted_sum(T.narrow(x, 1, 2, 3), rng)), [x]

    register_case("narrow", narrow_case, tol=1e-6)

    def where_case(rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        mask = rng.random((3, 4)) > 0.5
        return (lambda: _weighted_sum(T.where_mask(mask, a, b), rng)), [a, b]

    register_case("where", where_case, tol=1e-6)

    def softmax_case(rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return (lambda: _weighted_sum(T.softmax(x, axis=-1), rng)), [x]

    register_case("softmax", softmax_case, tol=1e-6)

    def norm_affine_case(rng):
        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        gain = Tensor(rng.normal(size=4) + 1.0, requires_grad=True)
        shift = Tensor(rng.normal(size=4), requires_grad=True)
        def fn():
            y0 = T.norm_affine(x, gain, shift, 1e-5, axis=0)
            y1 = T.norm_affine(x, gain, shift, 1e-5, axis=1)
            return _weighted_sum(T.add(y0, y1), rng)
        return fn, [x, gain, shift]

    register_case("norm_affine", norm_affine_case)

    def dwconv_case(rng):
        x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        def fn():
            same = T.dwconv1d(x, k, causal=False)
            caus = T.dwconv1d(x, k, causal=True)
            return _weighted_sum(T.add(same, caus), rng)
        return fn, [x, k]

    register_case("dwconv1d", dwconv_case, tol=1e-6)

    def recurrence_case(rng):
        a = Tensor(1.0 / (1.0 + np.exp(-rng.normal(size=(2, 2, 7)))),
                   requires_grad=True)
        b = Tensor(rng.normal(size=(2, 2, 7)), requires_grad=True)
        return (lambda: _weighted_sum(T.linear_recurrence(a, b, chunk=4), rng)), [a, b]

    register_case("linear_recurrence", recurrence_case, tol=1e-6)


def _build_module_cases() -> None:
    """Cases for composite ops living in the other modules."""
    from . import losses as L
    from . import nn
    from . import ssm as S
    from .adapter import ParallelAdapter, combine_branches
    from .aggregation import AggregationBlock, Aggregator, AggregationHead, ConvGate, LinearGate
    from .backbone import BackboneConfig, VisionBackbone
    from .model import FusionModel, ModelToggles
    from .prompts import PromptBank, TransferBlock
    from . import tensor as T

    def linear_case(rng):
        lin = nn.Linear(3, 4, rng)
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        return (lambda: _weighted_sum(lin(x), rng)), [x, lin.weight, lin.bias]

    register_case("linear", linear_case, tol=1e-6)

    def ln_case(rng):
        ln = nn.LayerNorm(4)
        ln.gain.data = rng.normal(size=4) + 1.0
        ln.shift.data = rng.normal(size=4)
        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        return (lambda: _weighted_sum(ln(x), rng)), [x, ln.gain, ln.shift]

    register_case("layer_norm", ln_case)

    def bn_case(rng):
        bn = nn.BatchNorm(4)
        bn.gain.data = rng.normal(size=4) + 1.0
        bn.shift.data = rng.normal(size=4)
        mean0 = rng.normal(size=4)
        var0 = rng.random(4) + 0.5
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        def fn():
            # pin the running stats: the train call updates them, and the
            # eval output must not depend on state left by earlier calls
            bn.running_mean = mean0.copy()
            bn.running_var = var0.copy()
            bn.train()
            y = bn(x)
            bn.eval()
            bn.running_mean = mean0.copy()
            bn.running_var = var0.copy()
            z = bn(x)
            bn.train()
            return _weighted_sum(T.add(y, z), rng)
        return fn, [x, bn.gain, bn.shift]

    register_case("batch_norm", bn_case)

    def mhsa_case(rng):
        att = nn.MultiHeadSelfAttention(6, 2, rng)
        x = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
        wrt = [x] + att.params()
        return (lambda: _weighted_sum(att(x), rng)), wrt

    register_case("mhsa", mhsa_case)

    def ffn_case(rng):
        ff = nn.FeedForward(4, rng, ratio=2)
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        return (lambda: _weighted_sum(ff(x), rng)), [x] + ff.params()

    register_case("ffn", ffn_case)

    def make_ssm(rng, dim=3, d_state=2, dt_rank=2):
        return S.SelectiveScan(dim, d_state=d_state, dt_rank=dt_rank, rng=rng)

    def discretize_case(rng):
        core = make_ssm(rng)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        def fn():
            disc = core.discretize(x)
            return _weighted_sum(
                T.add(T.tsum(disc.a_bar, axis=1), T.tsum(disc.b_bar_x, axis=1)),
                rng) + _weighted_sum(disc.c, rng)
        return fn, [x] + core.params()

    register_case("discretize", discretize_case)

    def scan_case(fast):
        def build(rng):
            core = make_ssm(rng)
            x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
            def fn():
                disc = core.discretize(x)
                y = S.scan_fast(disc) if fast else S.scan_sequential(disc)
                return _weighted_sum(y, rng)
            return fn, [x] + core.params()
        return build

    register_case("scan_sequential", scan_case(False))
    register_case("scan_fast", scan_case(True))

    def ssm_apply_case(rng):
        core = make_ssm(rng, dim=2, d_state=3)
        x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        return (lambda: _weighted_sum(core(x), rng)), [x] + core.params()

    register_case("ssm_apply", ssm_apply_case)

    def pfa_apply_case(rng):
        ad = ParallelAdapter(4, 8, rng)
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        return (lambda: _weighted_sum(ad(x), rng)), [x] + ad.params()

    register_case("pfa_apply", pfa_apply_case)

    def pfa_combine_case(rng):
        parts = [Tensor(rng.normal(size=(3, 4)), requires_grad=True)
                 for _ in range(3)]
        return (lambda: _weighted_sum(combine_branches(*parts), rng)), parts

    register_case("pfa_combine", pfa_combine_case, tol=1e-6)

    def transfer_case(rng):
        tb = TransferBlock(4, rng)
        p = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        return (lambda: _weighted_sum(tb(p), rng)), [p] + tb.params()

    register_case("transfer", transfer_case)

    def bank(rng, dim=4, n_prompts=2, layers=2):
        return PromptBank(dim=dim, n_prompts=n_prompts, layers=layers, rng=rng)

    def residual_fuse_case(rng):
        pb = bank(rng)
        harvested = {m: Tensor(rng.normal(size=(4, 2)), requires_grad=True)
                     for m in ("own", "a", "b")}
        def fn():
            fused = pb.residual_fuse("n", 1, list(harvested.values()))
            return _weighted_sum(fused, rng)
        wrt = list(harvested.values()) + pb.rp["n"].params() + [pb.prompts[1]["n"]]
        return fn, wrt

    register_case("residual_fuse", residual_fuse_case)

    def assemble_case(rng):
        pb = bank(rng)
        f_star = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        def fn():
            seq = pb.assemble_layer_input(0, "r", f_star, harvested_prev=None)
            return _weighted_sum(seq, rng)
        return fn, [f_star] + pb.params()

    register_case("assemble_layer_input", assemble_case)

    def harvest_case(rng):
        pb = bank(rng)
        x = Tensor(rng.normal(size=(4, 3 + 3 * 2)), requires_grad=True)
        def fn():
            f_star, groups = pb.harvest("t", x, n_star=3)
            total = _weighted_sum(f_star, rng)
            for g in groups.values():
                total = T.add(total, _weighted_sum(g, rng))
            return total
        return fn, [x]

    register_case("harvest", harvest_case, tol=1e-6)

    def theta_case(rng):
        path = ConvGate(3, kernel=3, rng=rng)
        path.train()
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        return (lambda: _weighted_sum(path(x), rng)), [x] + path.params()

    register_case("theta", theta_case)

    def psi_case(rng):
        path = LinearGate(3, rng=rng)
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        return (lambda: _weighted_sum(path(x), rng)), [x] + path.params()

    register_case("psi", psi_case)

    def block(rng, dim=2, n=3):
        return AggregationBlock(dim, d_state=2, dt_rank=2, kernel=3, rng=rng)

    def intra_case(rng):
        blk = block(rng)
        blk.train()
        fs = {m: Tensor(rng.normal(size=(2, 3)), requires_grad=True)
              for m in ("n", "r", "t")}
        def fn():
            out = blk.intra(fs)
            total = None
            for m in ("n", "r", "t"):
                piece = _weighted_sum(out[m], rng)
                total = piece if total is None else T.add(total, piece)
            return total
        return fn, list(fs.values()) + blk.params()

    register_case("intra_ma", intra_case, spot=60)

    def inter_case(rng):
        blk = block(rng)
        blk.train()
        fs = {m: Tensor(rng.normal(size=(2, 3)), requires_grad=True)
              for m in ("n", "r", "t")}
        def fn():
            out = blk.inter(fs)
            total = None
            for m in ("n", "r", "t"):
                piece = _weighted_sum(out[m], rng)
                total = piece if total is None else T.add(total, piece)
            return total
        return fn, list(fs.values()) + blk.params()

    register_case("inter_ma", inter_case, spot=60)

    def stack_case(rng):
        dim = 2
        blocks = [AggregationBlock(dim, d_state=2, dt_rank=2, kernel=3, rng=rng)]
        head = AggregationHead(dim, rng)
        agg = Aggregator(blocks, head)
        agg.train()
        tokens = {m: Tensor(rng.normal(size=(dim, 4)), requires_grad=True)
                  for m in ("n", "r", "t")}
        def fn():
            f_ma = agg(tokens)
            return _weighted_sum(f_ma, rng)
        return fn, list(tokens.values()) + agg.params()

    register_case("ma_stack", stack_case, spot=60)

    def ce_case(rng):
        logits = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        labels = rng.integers(0, 4, size=5)
        return (lambda: L.ce_smooth(logits, labels, 0.1)), [logits]

    register_case("ce_smooth", ce_case, tol=1e-6)

    def triplet_case(rng):
        emb = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        labels = np.array([0, 0, 1, 1, 2, 2])
        return (lambda: L.triplet_batch_hard(emb, labels, margin=5.0)), [emb]

    register_case("triplet_batch_hard", triplet_case)

    def total_loss_case(rng):
        heads = L.SupervisionHeads(feat_dim=6, num_ids=3, rng=rng, with_ma=True)
        f_cls = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
        f_ma = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
        labels = np.array([0, 0, 1, 1, 2, 2])
        cfg = L.LossConfig(lambda_ce=0.25, lambda_tri=1.0, smoothing=0.1, margin=3.0)
        def fn():
            total, _ = L.total_loss(f_cls, f_ma, labels, heads, cfg)
            return total
        return fn, [f_cls, f_ma] + heads.params()

    register_case("total_loss", total_loss_case)

    def composed_case(rng):
        cfg = BackboneConfig(embed_dim=8, layers=2, heads=2, patch=4,
                             image_h=8, image_w=8, channels=1, n_prompts=2)
        toggles = ModelToggles(pfa=True, srp=True, ma=True)
        model = FusionModel(cfg, toggles, num_ids=2, rng=rng,
                            d_state=2, dt_rank=2, ma_blocks=1)
        model.train()
        images = [
            {m: rng.normal(size=(1, 8, 8)) for m in ("n", "r", "t")}
            for _ in range(4)
        ]
        labels = np.array([0, 0, 1, 1])
        lcfg = L.LossConfig(lambda_ce=0.25, lambda_tri=1.0,
                            smoothing=0.1, margin=3.0)
        wrt = []
        for name, p in model.named_params():
            if p.frozen:
                continue
            wrt.append(p)
        def fn():
            f_cls, f_ma = model.forward_batch(images)
            total, _ = L.total_loss(f_cls, f_ma, labels, model.heads, lcfg)
            return total
        return fn, wrt

    register_case("model.composed_path", composed_case, spot=4)
