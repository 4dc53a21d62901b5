"""
Property suites run by ``tokentrack verify``.

Each suite returns (passed, detail). ``run_suite`` adds the wall time and
turns an unexpected exception into a failure rather than aborting the run.
"""
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
import statistics
import time
from typing import Any, cast

import numpy as np

from tokentrack import config as app_config
from tokentrack.config import ModelConfig
from tokentrack.errors import TokenTrackError
from tokentrack.fusion import FusionInput, MultiFrameFusion, fuse
from tokentrack.gradcheck import gradient_check
from tokentrack.head import (
    BatchNormStats, PredictionHead, RepConvBlock, fold_bn, pad_kernel,
)
from tokentrack.layers import LayerNorm, Linear, MultiHeadAttention
from tokentrack.losses import LossParts, LossWeights, focal_loss, giou_loss, l1_loss, total_loss
from tokentrack.maintainer import TokenMaintainer, TokenRecord, UpdatePolicy, quality
from tokentrack.metrics import EvalReport, SequenceReport, evaluate_sequence
from tokentrack.model import TokenTrackModel, mask_enhance
from tokentrack.pipeline import OracleHead, TrackerSettings, run_sequence, track_init, track_step
from tokentrack.sampler import sample_clip
from tokentrack.sequence_io import SequenceData, load_sequence
from tokentrack.synthetic import moving_square_scene, render_sequence
from tokentrack.tensor import (
    Tensor, absolute, clip, concat, conv2d, exp, gelu, layer_norm, log, maximum, minimum, no_grad,
    precision, relu, sigmoid, softmax, sqrt, tanh, tensor,
)
from tokentrack.training import TrainingSettings, clip_loss, prepare_clip, train
from tokentrack.weights_io import load_weights

SuiteOutcome = tuple[bool, str]

CAPACITY_SWEEP = (2, 4, 6, 8)
GRADIENT_SEEDS = 20
GRADIENT_SEEDS_QUICK = 3


@dataclass
class VerifyContext:
    model_config: ModelConfig
    tracker: TrackerSettings
    seed: int = 0
    weights: Path | None = None
    sequence_dirs: list[Path] = field(default_factory=list[Path])
    quick: bool = False


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def tiny_model_config(**overrides: Any) -> ModelConfig:
    """A model small enough for finite-difference checks on a CPU."""
    model = app_config.default_config()["model"]
    model.update({
        "patch_size": 8, "dim": 16, "depth": 1, "heads": 2, "mlp_ratio": 2,
        "template_size": 16, "search_size": 32, "head_blocks": 2,
    })
    model.update(overrides)  # pyright: ignore[reportCallIssue, reportArgumentType]
    return model


def randomize_batch_norm(head: PredictionHead, rng: np.random.Generator) -> PredictionHead:
    """Non-trivial BN statistics so folding is actually exercised."""
    for module in head.modules():
        if isinstance(module, RepConvBlock):
            channels = module.bn_gamma.shape[0]
            module.bn_gamma.assign(rng.uniform(0.5, 1.5, channels))
            module.bn_beta.assign(rng.normal(0.0, 0.1, channels))
            module.bn_mean.assign(rng.normal(0.0, 0.1, channels))
            module.bn_var.assign(rng.uniform(0.5, 2.0, channels))
    return head


def head_max_deviation(head: PredictionHead, merged: PredictionHead, inputs: list[Tensor]) -> float:
    worst = 0.0
    with no_grad():
        for x in inputs:
            a, b = head(x), merged(x)
            for u, v in ((a.score, b.score), (a.offset, b.offset), (a.size, b.size)):
                worst = max(worst, float(np.max(np.abs(u.numpy() - v.numpy()))))
    return worst


def reparam_deviation(channels: int, grid: tuple[int, int], num_blocks: int, samples: int,
                      rng: np.random.Generator, kernel_sizes: tuple[int, ...] = (1, 3, 5)) -> float:
    """Max-abs output difference of a random head and its merged form over random inputs."""
    head = randomize_batch_norm(PredictionHead(channels, rng, num_blocks, kernel_sizes), rng)
    _ = head.eval()
    merged = head.reparameterize()
    inputs = [tensor(rng.normal(0.0, 1.0, size=(channels, *grid))) for _ in range(samples)]
    return head_max_deviation(head, merged, inputs)


# --- Suites ---

def suite_reparam(ctx: VerifyContext) -> SuiteOutcome:
    model = ctx.model_config
    grid = (model["search_size"] // model["patch_size"],) * 2
    kernels = (1, 3, 5) if model["multiscale_head"] else (3,)
    samples = 10 if ctx.quick else 100
    details: list[str] = []
    passed = True
    for dtype, tolerance in ((np.float32, 1e-4), (np.float64, 1e-8)):
        with precision(dtype):
            deviation = reparam_deviation(model["dim"], grid, model["head_blocks"], samples,
                                          np.random.default_rng(ctx.seed), kernels)
        passed &= deviation < tolerance
        details.append(f"{np.dtype(dtype).name}: max |Δ| {deviation:.2e} (< {tolerance:.0e})")
    return passed, f"{samples} samples; " + "; ".join(details)


def suite_kernel_pad(ctx: VerifyContext) -> SuiteOutcome:
    rng = np.random.default_rng(ctx.seed)
    worst = 0.0
    with precision(np.float64):
        for _ in range(50):
            s = int(rng.choice([1, 3, 5]))
            c_in, c_out = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            x = tensor(rng.normal(size=(c_in, int(rng.integers(5, 10)), int(rng.integers(5, 10)))))
            k = rng.normal(size=(c_out, c_in, s, s))
            natural = conv2d(x, Tensor(k), pad=(s - 1) // 2).numpy()
            padded = conv2d(x, Tensor(pad_kernel(k)), pad=2).numpy()
            worst = max(worst, float(np.max(np.abs(natural - padded))))
    return worst < 1e-6, f"50 cases, max |Δ| {worst:.2e}"


def suite_bn_fold(ctx: VerifyContext) -> SuiteOutcome:
    rng = np.random.default_rng(ctx.seed)
    worst = 0.0
    with precision(np.float32):
        for _ in range(50):
            c_in, c_out = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            kernel = rng.normal(size=(c_out, c_in, 5, 5)).astype(np.float32)
            bias = rng.normal(size=c_out).astype(np.float32)
            bn = BatchNormStats(
                gamma=rng.uniform(0.2, 2.0, c_out).astype(np.float32),
                beta=rng.normal(size=c_out).astype(np.float32),
                mean=rng.normal(size=c_out).astype(np.float32),
                var=rng.uniform(0.1, 3.0, c_out).astype(np.float32),
                eps=1e-5,
            )
            x = tensor(rng.normal(size=(c_in, 7, 7)))
            y = conv2d(x, Tensor(kernel), Tensor(bias), pad=2).numpy()
            reference = (y - bn.mean[:, None, None]) / np.sqrt(bn.var[:, None, None] + bn.eps) \
                * bn.gamma[:, None, None] + bn.beta[:, None, None]
            merged = fold_bn(kernel, bias, bn)
            folded = conv2d(x, merged.kernel, merged.bias, pad=2).numpy()
            worst = max(worst, float(np.max(np.abs(reference - folded))))
    return worst < 1e-4, f"50 parameterizations, max |Δ| {worst:.2e}"


def naive_retained(qualities: list[float], capacity: int, policy: UpdatePolicy) -> list[list[int]]:
    """Frames kept after each insert, by re-scanning the whole store every step."""
    store: list[tuple[int, float]] = []
    history: list[list[int]] = []
    for frame, q in enumerate(qualities, start=1):
        if len(store) >= capacity:
            if policy is UpdatePolicy.FIFO:
                victim = min(store, key=lambda e: e[0])
            else:
                victim = sorted(store, key=lambda e: (e[1], e[0]))[0]
            store.remove(victim)
        store.append((frame, q))
        history.append(sorted(f for f, _ in store))
    return history


def maintainer_matches_oracle(qualities: list[float], capacity: int, policy: UpdatePolicy) -> bool:
    token = Tensor(np.zeros((1, 1)))
    maintainer = TokenMaintainer(capacity, policy)
    expected = naive_retained(qualities, capacity, policy)
    for frame, (q, want) in enumerate(zip(qualities, expected), start=1):
        before = {e.frame: e.quality for e in maintainer.entries}
        _ = maintainer.insert(TokenRecord(token, q, frame))
        if sorted(maintainer.frames) != want or len(maintainer) > capacity:
            return False
        if policy is UpdatePolicy.QUALITY and len(before) >= capacity:
            evicted = maintainer.evictions[-1]
            if any(evicted.evicted_quality > before[f] for f in maintainer.frames if f in before):
                return False
    return True


def suite_maintainer(ctx: VerifyContext) -> SuiteOutcome:
    rng = np.random.default_rng(ctx.seed)
    streams = 100 if ctx.quick else 1000
    failures = 0
    for n in range(streams):
        qualities = rng.uniform(0.0, 1.0, size=100)
        if n % 2:
            # Coarse values force ties.
            qualities = np.round(qualities, 1) + 0.01
        capacity = 1 + n % 8
        for policy in UpdatePolicy:
            failures += not maintainer_matches_oracle([float(q) for q in qualities], capacity, policy)

    documented = TokenMaintainer(2, UpdatePolicy.QUALITY)
    token = Tensor(np.zeros((1, 1)))
    for frame, q in enumerate([0.5, 0.3, 0.1], start=1):
        _ = documented.insert(TokenRecord(token, q, frame))
    keeps_new_low = sorted(documented.qualities) == [0.1, 0.5]
    passed = failures == 0 and keeps_new_low
    return passed, f"{streams} streams x 2 policies, {failures} mismatches; low new token kept: {keeps_new_low}"


def suite_quality(ctx: VerifyContext) -> SuiteOutcome:
    one_hot = np.zeros((16, 16))
    one_hot[3, 7] = 1.0
    constant = np.full((16, 16), 0.37)
    mixed = np.full((16, 16), 0.1)
    mixed[5, 5] = 0.9
    checks = {
        "one-hot": (quality(one_hot), 1.0),
        "constant": (quality(constant), 1.0 / 256),
        "mixed": (quality(mixed), 0.9 / 26.4),
    }
    bad = [name for name, (got, want) in checks.items() if abs(got - want) > 1e-9]
    return not bad, ", ".join(f"{n}={g:.9f}" for n, (g, _) in checks.items()) + (f"; failed {bad}" if bad else "")


def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    def leaf(*shape: int, low: float | None = None) -> Tensor:
        data = rng.normal(size=shape)
        if low is not None:
            data = np.sign(data) * (np.abs(data) + low)
        return Tensor(data, requires_grad=True)

    a, b = leaf(3, 4, low=0.2), leaf(3, 4, low=0.2)
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    w = tensor(rng.normal(size=(3, 4)))
    m1, m2 = leaf(2, 3, 4), leaf(2, 4, 5)
    x_img, kernel, bias = leaf(2, 6, 6), leaf(3, 2, 3, 3), leaf(3)
    gamma, beta = leaf(4), leaf(4)
    seq = leaf(5, 8)
    attention = MultiHeadAttention(8, 2, rng)
    fusion = MultiFrameFusion(8, 2, rng)
    current, history = leaf(1, 8), leaf(3, 8)
    score = Tensor(rng.uniform(0.05, 0.95, size=(4, 4)), requires_grad=True)
    target = np.exp(-((np.arange(4)[:, None] - 1) ** 2 + (np.arange(4)[None, :] - 2) ** 2) / 2.0)
    box = Tensor(np.array([0.5, 0.5, 0.3, 0.4]) + rng.uniform(-0.05, 0.05, 4), requires_grad=True)
    gt_box = np.array([0.52, 0.47, 0.25, 0.45])
    row = Tensor(np.linspace(-1.0, 1.0, 8))

    def weighted(t: Tensor) -> Tensor:
        return (t * Tensor(np.resize(w.numpy(), t.shape))).sum()

    return {
        "add": (lambda: weighted(a + b), [a, b]),
        "sub": (lambda: weighted(a - b), [a, b]),
        "mul": (lambda: weighted(a * b), [a, b]),
        "div": (lambda: weighted(a / pos), [a, pos]),
        "power": (lambda: weighted(pos ** 3.0), [pos]),
        "maximum": (lambda: weighted(maximum(a, b)), [a, b]),
        "minimum": (lambda: weighted(minimum(a, b)), [a, b]),
        "clip": (lambda: weighted(clip(a, -0.1, 0.1) + a), [a]),
        "exp": (lambda: weighted(exp(a)), [a]),
        "log": (lambda: weighted(log(pos)), [pos]),
        "sqrt": (lambda: weighted(sqrt(pos)), [pos]),
        "abs": (lambda: weighted(absolute(a)), [a]),
        "relu": (lambda: weighted(relu(a)), [a]),
        "sigmoid": (lambda: weighted(sigmoid(a)), [a]),
        "tanh": (lambda: weighted(tanh(a)), [a]),
        "gelu": (lambda: weighted(gelu(a)), [a]),
        "sum/mean": (lambda: a.sum(axis=1).sum() + (a * b).mean(), [a, b]),
        "reshape/transpose": (lambda: weighted(a.reshape(4, 3).transpose(1, 0)), [a]),
        "getitem": (lambda: (a[1:, ::2] * a[1:, ::2]).sum(), [a]),
        "concat": (lambda: weighted(concat([a[:1], b[1:]], axis=0)), [a, b]),
        "matmul": (lambda: (m1 @ m2).sum(), [m1, m2]),
        "softmax": (lambda: weighted(softmax(a, axis=-1)), [a]),
        "layer_norm": (lambda: weighted(layer_norm(a, gamma, beta)), [a, gamma, beta]),
        "conv2d": (lambda: (conv2d(x_img, kernel, bias, pad=1) ** 2.0).sum(), [x_img, kernel, bias]),
        "attention": (lambda: (attention(seq, seq, seq) ** 2.0).sum(), [seq, attention.q_proj.weight]),
        "fusion": (lambda: (fuse(FusionInput(current, history), fusion) * row).sum(),
                   [current, history]),
        "mask_enhance": (lambda: (mask_enhance(seq, current) ** 2.0).sum(), [seq, current]),
        "focal": (lambda: focal_loss(score, target), [score]),
        "giou": (lambda: giou_loss(box, gt_box), [box]),
        "l1": (lambda: l1_loss(box, gt_box), [box]),
    }


def end_to_end_gradient_error(seed: int, entries: int = 10) -> float:
    """Finite-difference check of a whole clip loss w.r.t. randomly drawn parameter entries (64-bit)."""
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        model = TokenTrackModel(tiny_model_config(), rng)
        scene = moving_square_scene("grad-check", frames=6, width=64, height=48, size=8.0,
                                    velocity=(1.0, 0.5), noise=0.0)
        sequence = render_sequence(scene, seed).to_sequence()
        settings = TrainingSettings(clip_length=3, max_interval=2)
        clip = sample_clip(sequence, rng, settings.clip_length, settings.max_interval, settings.reverse_prob)
        prepared = prepare_clip(clip, settings, rng, 16, 32)
        maintainer = TokenMaintainer(capacity=2)
        params = model.parameters(trainable_only=True)
        result = gradient_check(lambda: clip_loss(model, prepared, settings, maintainer)[0],
                                params, max_entries=entries, rng=rng)
    return result.max_relative_error


def suite_gradients(ctx: VerifyContext) -> SuiteOutcome:
    seeds = range(ctx.seed, ctx.seed + (GRADIENT_SEEDS_QUICK if ctx.quick else GRADIENT_SEEDS))
    failed: list[str] = []
    worst = 0.0
    worst_e2e = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        with precision(np.float64):
            for name, (loss_fn, targets) in _op_cases(rng).items():
                error = gradient_check(loss_fn, targets, max_entries=40, rng=rng).max_relative_error
                worst = max(worst, error)
                if error >= 1e-3:
                    failed.append(f"{name}@{seed} ({error:.1e})")
        e2e = end_to_end_gradient_error(seed)
        worst_e2e = max(worst_e2e, e2e)
        if e2e >= 1e-2:
            failed.append(f"clip loss@{seed} ({e2e:.1e})")
    detail = f"{len(seeds)} seeds; ops worst rel err {worst:.1e}; clip loss worst rel err {worst_e2e:.1e}"
    return not failed, detail + (f"; failed {', '.join(failed)}" if failed else "")


def suite_losses(ctx: VerifyContext) -> SuiteOutcome:
    rng = np.random.default_rng(ctx.seed)
    with precision(np.float64):
        p = rng.uniform(0.05, 0.95, size=(6, 6))
        t = np.zeros((6, 6))
        t[2, 3] = 1.0
        focal = focal_loss(Tensor(p), t, alpha=0.0, beta=0.0).item()
        bce = float(-(t * np.log(p) + (1 - t) * np.log(1 - p)).sum())
        same = giou_loss(Tensor(np.array([0.5, 0.5, 0.2, 0.3])), np.array([0.5, 0.5, 0.2, 0.3])).item()
        corner = giou_loss(Tensor(np.array([0.5, 0.5, 1.0, 1.0])), np.array([1.5, 1.5, 1.0, 1.0])).item()
        parts = [LossParts(Tensor(0.1), Tensor(0.2), Tensor(0.04))]
        base = total_loss(parts, LossWeights(1.0, 2.0, 5.0)).item()
        doubled = total_loss(parts, LossWeights(2.0, 2.0, 5.0)).item()
    checks = {
        "focal=BCE": abs(focal - bce) < 1e-6,
        "giou identical": abs(same) < 1e-12,
        "giou corner": abs(corner - 1.5) < 1e-12,
        "total": abs(base - 0.7) < 1e-12,
        "linear": abs((doubled - base) - 0.1) < 1e-12,
    }
    bad = [k for k, ok in checks.items() if not ok]
    return not bad, f"focal {focal:.6f} vs bce {bce:.6f}, giou corner {corner:.3f}, total {base:.3f}" + (
        f"; failed {bad}" if bad else "")


def suite_fusion(ctx: VerifyContext) -> SuiteOutcome:
    rng = np.random.default_rng(ctx.seed)
    dim, heads = 16, 2
    with precision(np.float64), no_grad():
        plain = MultiFrameFusion(dim, heads, rng, positional=False)
        current = tensor(rng.normal(size=(1, dim)))
        history = rng.normal(size=(4, dim))
        single = fuse(FusionInput(current), plain)
        well_formed = single.shape == (1, dim) and bool(np.all(np.isfinite(single.numpy())))

        order = rng.permutation(4)
        a = fuse(FusionInput(current, Tensor(history)), plain).numpy()
        b = fuse(FusionInput(current, Tensor(history[order])), plain).numpy()
        invariance = float(np.max(np.abs(a - b)))

        positional = MultiFrameFusion(dim, heads, np.random.default_rng(ctx.seed), positional=True)
        c = fuse(FusionInput(current, Tensor(history)), positional).numpy()
        d = fuse(FusionInput(current, Tensor(history[order])), positional).numpy()
        sensitivity = float(np.max(np.abs(c - d)))

    attention_layers = [m for m in plain.modules() if isinstance(m, MultiHeadAttention)]
    feed_forward = [m for m in plain.modules() if isinstance(m, Linear)]
    norms = [m for m in plain.modules() if isinstance(m, LayerNorm)]
    structure = len(attention_layers) == 2 and len(feed_forward) == 8 and len(norms) == 3
    passed = well_formed and invariance <= 1e-5 and sensitivity > 1e-6 and structure
    return passed, (f"single token ok: {well_formed}; permuted history |Δ| {invariance:.1e} without positions, "
                    f"{sensitivity:.1e} with; one self- and one cross-attention: {structure}")


def occlusion_evictions(policy: UpdatePolicy, capacity: int, seed: int) -> tuple[int, list[tuple[int, int]], float]:
    """
    Track an occluded moving square with the oracle head. Returns the
    occluded frame and the maintainer's (step frame, evicted frame) log, plus
    the occluded frame's stored quality.
    """
    occluded = capacity + 3
    scene = moving_square_scene("occlusion", frames=2 * capacity + 8, width=96, height=72, size=8.0,
                                velocity=(1.0, 0.5), occluded_frames=(occluded,))
    sequence = render_sequence(scene, seed).to_sequence()
    model = TokenTrackModel(tiny_model_config(), np.random.default_rng(seed))
    _ = model.eval()
    settings = TrackerSettings(capacity=capacity, policy=policy)
    oracle = OracleHead(sequence.boxes, model.search_grid, sequence.fully_occluded)
    with no_grad():
        state = track_init(sequence.frames[0], sequence.boxes[0], model, settings, oracle)
        occluded_quality = float("nan")
        for frame in sequence.frames[1:]:
            _, state = track_step(state, frame, model)
            if state.frame_index == occluded:
                occluded_quality = state.last_quality or float("nan")
    log = [(e.step_frame, e.evicted_frame) for e in state.maintainer.evictions]
    return occluded, log, occluded_quality


def suite_occlusion(ctx: VerifyContext) -> SuiteOutcome:
    capacity = 4
    occluded, quality_log, q_occ = occlusion_evictions(UpdatePolicy.QUALITY, capacity, ctx.seed)
    _, fifo_log, _ = occlusion_evictions(UpdatePolicy.FIFO, capacity, ctx.seed)

    after = [(step, evicted) for step, evicted in quality_log if step > occluded]
    quality_ok = bool(after) and after[0] == (occluded + 1, occluded)
    fifo_ok = (occluded + capacity, occluded) in fifo_log
    grid = tiny_model_config()["search_size"] // tiny_model_config()["patch_size"]
    flat_q = abs(q_occ - 1.0 / grid ** 2) < 1e-9
    return quality_ok and fifo_ok and flat_q, (
        f"occluded frame {occluded} (Q={q_occ:.4f}); quality policy evicts it at frame "
        f"{after[0][0] if after else '-'}; FIFO evicts it at frame "
        f"{next((s for s, e in fifo_log if e == occluded), '-')}")


def suite_timing(ctx: VerifyContext) -> SuiteOutcome:
    model = ctx.model_config
    rng = np.random.default_rng(ctx.seed)
    grid = (model["search_size"] // model["patch_size"],) * 2
    head = PredictionHead(model["dim"], rng, model["head_blocks"])
    _ = head.eval()
    merged = head.reparameterize()
    x = tensor(rng.normal(size=(model["dim"], *grid)))
    runs = 20 if ctx.quick else 200

    def median_time(h: PredictionHead) -> float:
        samples: list[float] = []
        with no_grad():
            for _ in range(runs):
                start = time.perf_counter()
                _ = h(x)
                samples.append(time.perf_counter() - start)
        return statistics.median(samples)

    multi = median_time(head)
    single = median_time(merged)
    return single <= multi, f"median over {runs}: merged {single * 1e3:.2f} ms, multi-branch {multi * 1e3:.2f} ms"


def _sweep_sequences(ctx: VerifyContext) -> list[SequenceData]:
    sequences = [load_sequence(d) for d in ctx.sequence_dirs]
    if not sequences:
        sequences = [
            render_sequence(moving_square_scene(f"sweep-{i}", frames=12 if ctx.quick else 24), ctx.seed + i).to_sequence()
            for i in range(2)
        ]
    return sequences


def capacity_sweep(ctx: VerifyContext, capacities: tuple[int, ...] = CAPACITY_SWEEP) -> dict[int, EvalReport]:
    """AO per maintainer capacity on the given (or generated) sequences."""
    sequences = _sweep_sequences(ctx)
    model = TokenTrackModel(ctx.model_config, np.random.default_rng(ctx.seed))
    if ctx.weights is not None:
        model = load_weights(model, ctx.weights)
    _ = model.eval()

    reports: dict[int, EvalReport] = {}
    for capacity in capacities:
        settings = TrackerSettings(ctx.tracker.search_factor, ctx.tracker.template_factor, capacity,
                                   ctx.tracker.policy, ctx.tracker.hanning_window)
        per_sequence = []
        with no_grad():
            for sequence in sequences:
                results = list(run_sequence(iter(sequence.frames), sequence.boxes[0], model, settings))
                per_sequence.append(evaluate_sequence(sequence.name, [r.box for r in results], sequence.boxes))
        reports[capacity] = EvalReport(per_sequence)
    return reports


def suite_capacity(ctx: VerifyContext) -> SuiteOutcome:
    reports = capacity_sweep(ctx)
    print("    N      AO   SR0.5")
    for capacity, report in reports.items():
        print(f"    {capacity:<4} {report.ao:>7.4f} {report.sr50:>7.4f}")
    return True, "AO by capacity: " + ", ".join(f"N={n}: {r.ao:.4f}" for n, r in reports.items())


# Each rung switches on one more component than the rung above it.
ABLATION_LADDER: tuple[tuple[str, dict[str, bool]], ...] = (
    ("baseline", {"use_st_token": False, "use_fusion": False, "use_mask_enhancement": False,
                  "multiscale_head": False}),
    ("+st token", {"use_st_token": True, "use_fusion": False, "use_mask_enhancement": False,
                   "multiscale_head": False}),
    ("+fusion", {"use_st_token": True, "use_fusion": True, "use_mask_enhancement": False,
                 "multiscale_head": False}),
    ("+mask", {"use_st_token": True, "use_fusion": True, "use_mask_enhancement": True,
               "multiscale_head": False}),
    ("+multiscale", {"use_st_token": True, "use_fusion": True, "use_mask_enhancement": True,
                     "multiscale_head": True}),
)


@dataclass(frozen=True)
class AblationRow:
    name: str
    report: EvalReport
    params: int
    fps: float


def ablation_ladder(ctx: VerifyContext, steps: int | None = None) -> list[AblationRow]:
    """
    Train every rung of ``ABLATION_LADDER`` from the same seed on the same
    generated clips, then track the evaluation sequences with its merged head.

    ``params`` counts the training form, so the multi-scale branches show up
    in the ladder; ``fps`` is frames tracked per second of wall time.
    """
    if steps is None:
        steps = 20 if ctx.quick else 100
    training_sequences = [
        render_sequence(moving_square_scene(f"ablation-{i}", frames=16 if ctx.quick else 32),
                        ctx.seed + 100 + i).to_sequence()
        for i in range(2)
    ]
    sequences = _sweep_sequences(ctx)
    settings = TrainingSettings(steps=steps, clip_length=3, max_interval=4, search_factor=ctx.tracker.search_factor,
                                template_factor=ctx.tracker.template_factor, log_every=0, prefetch=0)

    rows: list[AblationRow] = []
    for name, toggles in ABLATION_LADDER:
        config = cast(ModelConfig, {**ctx.model_config, **toggles})
        rng = np.random.default_rng(ctx.seed)
        model = TokenTrackModel(config, rng)
        _ = train(model, training_sequences, settings, rng, capacity=ctx.tracker.capacity, policy=ctx.tracker.policy)
        params = model.num_parameters()
        _ = model.eval()
        merged = model.reparameterize()

        per_sequence: list[SequenceReport] = []
        frames = 0
        started = time.perf_counter()
        with no_grad():
            for sequence in sequences:
                results = list(run_sequence(iter(sequence.frames), sequence.boxes[0], merged, ctx.tracker))
                frames += len(results)
                per_sequence.append(evaluate_sequence(sequence.name, [r.box for r in results], sequence.boxes))
        elapsed = time.perf_counter() - started
        rows.append(AblationRow(name, EvalReport(per_sequence), params, frames / elapsed if elapsed > 0 else 0.0))
    return rows


def suite_ablation(ctx: VerifyContext) -> SuiteOutcome:
    rows = ablation_ladder(ctx)
    print(f"    {'variant':<12} {'AO':>7} {'SR0.5':>7} {'Params':>9} {'FPS':>7}")
    for row in rows:
        print(f"    {row.name:<12} {row.report.ao:>7.4f} {row.report.sr50:>7.4f} {row.params:>9} {row.fps:>7.1f}")
    params = [row.params for row in rows]
    ordered = all(a <= b for a, b in zip(params, params[1:]))
    valid = all(0.0 <= row.report.ao <= 1.0 and row.fps > 0 for row in rows)
    best = max(rows, key=lambda row: row.report.ao)
    return ordered and valid, f"{len(rows)} variants; best AO {best.report.ao:.4f} ({best.name})"


SUITES: dict[str, Callable[[VerifyContext], SuiteOutcome]] = {
    "reparam": suite_reparam,
    "kernel-pad": suite_kernel_pad,
    "bn-fold": suite_bn_fold,
    "maintainer": suite_maintainer,
    "quality": suite_quality,
    "gradients": suite_gradients,
    "losses": suite_losses,
    "fusion": suite_fusion,
    "occlusion": suite_occlusion,
    "timing": suite_timing,
    "capacity": suite_capacity,
    "ablation": suite_ablation,
}


def run_suite(name: str, ctx: VerifyContext) -> SuiteResult:
    start = time.perf_counter()
    try:
        passed, detail = SUITES[name](ctx)
    except (TokenTrackError, ArithmeticError, ValueError) as e:
        passed, detail = False, f"{type(e).__name__}: {e}"
    return SuiteResult(name, passed, detail, time.perf_counter() - start)
