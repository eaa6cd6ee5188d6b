"""Acceptance checks, shared by ``prnet selftest`` and the test suite.

Each ``check_*`` returns a :class:`CheckResult`; tolerances are fixed here.
"""
from __future__ import annotations

import math
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .adacof import WarpParams, adacof_warp, adacof_warp_reference
from .bench import INVERSION_MARGIN, ORDERING_VARIANTS, BENCH_RESOLUTIONS, bench, check_runtime_ordering
from .checkpoint import load_checkpoint, save_checkpoint
from .data import translating_triplets
from .metrics import psnr, ssim
from .model import ModelConfig, build, count_params, fuse_features, reduction_percent
from .pipeline import blend, interpolate, interpolate_tensor, to_tensor
from .tensor import Tensor, grad_check
from .train import train_loop

EXPECTED_COUNTS = {
    "PRNet_1": 1_931_491,
    "PRNet_2": 2_413_123,
    "PRNet_3": 2_894_755,
    "PRNet_4": 3_376_387,
    "PRNet_4*": 3_376_387,
    "AdaCoFNet": 21_843_427,
}
EXPECTED_REDUCTIONS = {"PRNet_1": 91.2, "PRNet_2": 89.0, "PRNet_3": 86.7, "PRNet_4": 84.5, "PRNet_4*": 84.5}
REDUCTION_TOL = 0.05
ORACLE_TOL = 1e-6
GRAD_TOL = 1e-4
OVERFIT_RATIO = 0.20
OFF_BY_ONE_PSNR = 20 * math.log10(255)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>2}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number: int, name: str):
    def wrap(fn):
        def run(*args, **kwargs) -> CheckResult:
            t0 = time.perf_counter()
            passed, detail = fn(*args, **kwargs)
            return CheckResult(number, name, bool(passed), detail, time.perf_counter() - t0)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


@_timed(1, "parameter counts")
def check_param_counts():
    got = {label: count_params(build(ModelConfig.from_label(label))) for label in EXPECTED_COUNTS}
    bad = {k: v for k, v in got.items() if v != EXPECTED_COUNTS[k]}
    return not bad, f"mismatches {bad}" if bad else "all six match exactly"


@_timed(2, "reduction percentages")
def check_reductions():
    errs = {k: abs(reduction_percent(ModelConfig.from_label(k)) - v) for k, v in EXPECTED_REDUCTIONS.items()}
    worst = max(errs.values())
    return worst <= REDUCTION_TOL, f"max deviation {worst:.4f} pp (tol {REDUCTION_TOL})"


def random_warp_instance(rng: np.random.Generator, F: int, H: int, W: int, d: int = 1,
                         offset_scale: float = 2.0, dtype=np.float64):
    p = d * (F - 1) // 2
    image = Tensor(rng.uniform(0, 1, (1, 3, H + 2 * p, W + 2 * p)).astype(dtype))
    w = rng.uniform(0.01, 1, (1, F * F, H, W))
    w /= w.sum(axis=1, keepdims=True)
    alpha = rng.normal(0, offset_scale, (1, F * F, H, W))
    beta = rng.normal(0, offset_scale, (1, F * F, H, W))
    return image, WarpParams(Tensor(w.astype(dtype)), Tensor(alpha.astype(dtype)),
                             Tensor(beta.astype(dtype)), F, d)


@_timed(3, "AdaCoF oracle equivalence")
def check_adacof_oracle(instances: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in range(instances):
        F = (3, 5)[n % 2]
        H, W = (int(v) for v in rng.integers(1, 13, size=2))
        image, params = random_warp_instance(rng, F, H, W)
        diff = np.abs(adacof_warp(image, params).data - adacof_warp_reference(image, params).data).max()
        worst = max(worst, float(diff))
    return worst <= ORACLE_TOL, f"{instances} instances, max abs diff {worst:.2e} (tol {ORACLE_TOL})"


def _signed_uniform(rng, shape):
    return rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


def _off_integer(rng, shape, scale=1.5):
    # offsets whose fractional part stays in [0.1, 0.9], away from bilinear kinks
    return (rng.integers(-2, 3, shape) + rng.uniform(0.1, 0.9, shape)) * (scale / 1.5)


def gradient_cases(seed: int = 0):
    """(name, f, inputs, kwargs) for every differentiable op plus the composed loss."""
    rng = np.random.default_rng(seed)
    t = lambda a: Tensor(np.asarray(a, dtype=np.float64))  # noqa: E731
    mask = lambda shape: t(rng.normal(size=shape))  # noqa: E731
    cases = []

    def weighted(op, shape):
        m = mask(shape)
        return lambda *xs: T.sum_all(T.mul(op(*xs), m))

    x = t(_signed_uniform(rng, (2, 3, 6, 6)))
    w = t(rng.normal(0, 0.3, (4, 3, 3, 3)))
    b = t(rng.normal(0, 0.3, (4,)))
    for mode in ("zeros", "replicate"):
        target = t(rng.normal(size=(2, 4, 6, 6)) + 3.0)
        cases.append((f"conv2d[{mode}]", lambda x, w, b, mode=mode, target=target:
                      T.l1_loss(T.conv2d(x, w, b, 1, mode), target), [x, w, b], {}))
    cases.append(("avg_pool2", weighted(T.avg_pool2, (1, 2, 2, 2)), [t(_signed_uniform(rng, (1, 2, 4, 4)))], {}))
    cases.append(("upsample_bilinear2", weighted(T.upsample_bilinear2, (1, 1, 6, 6)),
                  [t(_signed_uniform(rng, (1, 1, 3, 3)))], {}))
    for k in (1, 2, 3):
        cases.append((f"rot90[{k}]", weighted(lambda a, k=k: T.rot90(a, k), (1, 2, 5, 3) if k % 2 else (1, 2, 3, 5)),
                      [t(_signed_uniform(rng, (1, 2, 3, 5)))], {}))
    cases.append(("channel_softmax", weighted(T.channel_softmax, (2, 5, 3, 3)),
                  [t(_signed_uniform(rng, (2, 5, 3, 3)))], {}))
    cases.append(("relu", lambda a: T.sum_all(T.relu(a)), [t(_signed_uniform(rng, (1, 2, 4, 4)))], {"tol": 1e-6}))
    cases.append(("sigmoid", weighted(T.sigmoid, (1, 2, 4, 4)), [t(_signed_uniform(rng, (1, 2, 4, 4)))], {}))
    shp = (1, 2, 3, 4)
    cases.append(("add", weighted(T.add, shp), [t(_signed_uniform(rng, shp)), t(_signed_uniform(rng, shp))], {}))
    cases.append(("sub", weighted(T.sub, shp), [t(_signed_uniform(rng, shp)), t(_signed_uniform(rng, shp))], {}))
    cases.append(("mul", weighted(T.mul, shp), [t(_signed_uniform(rng, shp)), t(_signed_uniform(rng, shp))], {}))
    cases.append(("scale", weighted(lambda a: T.scale(a, -1.7, 0.3), shp), [t(_signed_uniform(rng, shp))], {}))
    cases.append(("replication_pad", weighted(lambda a: T.replication_pad(a, 1, 2, 3, 1), (1, 2, 7, 7)),
                  [t(_signed_uniform(rng, (1, 2, 3, 4)))], {}))
    cases.append(("crop", weighted(lambda a: T.crop(a, 1, 0, 2, 3), (1, 2, 2, 3)), [t(_signed_uniform(rng, shp))], {}))
    cases.append(("concat", weighted(lambda a, c: T.concat([a, c]), (1, 5, 3, 4)),
                  [t(_signed_uniform(rng, shp)), t(_signed_uniform(rng, (1, 3, 3, 4)))], {}))
    cases.append(("mean", lambda a: T.mean_all(T.mul(a, a)), [t(_signed_uniform(rng, shp))], {}))
    l1_target = t(rng.normal(size=shp) + 2.0)
    cases.append(("l1_loss", lambda a: T.l1_loss(a, l1_target), [t(_signed_uniform(rng, shp))], {}))

    F, H, W = 5, 4, 5
    image = t(rng.uniform(0, 1, (1, 3, H + 4, W + 4)))
    wts = rng.uniform(0.05, 1, (1, F * F, H, W))
    wts = t(wts / wts.sum(axis=1, keepdims=True))
    alpha, beta = t(_off_integer(rng, (1, F * F, H, W))), t(_off_integer(rng, (1, F * F, H, W)))
    m = mask((1, 3, H, W))
    cases.append(("adacof_warp", lambda i, w_, a, b_: T.sum_all(T.mul(adacof_warp(i, WarpParams(w_, a, b_, F, 1)), m)),
                  [image, wts, alpha, beta], {}))
    v = t(rng.uniform(0.05, 0.95, (1, 1, 3, 4)))
    cases.append(("blend", weighted(blend, (1, 3, 3, 4)),
                  [t(_signed_uniform(rng, (1, 3, 3, 4))), t(_signed_uniform(rng, (1, 3, 3, 4))), v], {}))

    model = build(ModelConfig(encoders=4, rotate=True), seed=seed, dtype=np.float64)
    f1 = t(rng.uniform(0, 1, (1, 3, 16, 16)))
    f2 = t(rng.uniform(0, 1, (1, 3, 16, 16)))
    # offset keeps every residual one-signed, so the L1 has no kinks
    target = t(rng.uniform(0, 1, (1, 3, 16, 16)) + 2.0)
    names = ["encoder.4.block1.conv0.weight", "encoder.2.block3.conv2.bias", "decoder.deconv3.conv0.weight",
             "decoder.upsample2.conv0.weight", "subnet.weight1.conv3.weight", "subnet.alpha2.conv3.weight",
             "subnet.beta1.conv2.bias", "subnet.occlusion.conv3.weight"]
    params = [model.params[n] for n in names]

    def composed(a, c, *ps):
        return T.l1_loss(interpolate_tensor(model, a, c), target)

    cases.append(("composed L1(interpolate) PRNet_4* 16x16", composed, [f1, f2, *params],
                  {"h": 1e-6, "max_entries": 12}))
    return cases


@_timed(4, "gradient suite")
def check_gradients(seed: int = 0):
    failures, worst = [], 0.0
    cases = gradient_cases(seed)
    for name, f, inputs, kw in cases:
        tol = kw.pop("tol", GRAD_TOL)
        rep = grad_check(f, inputs, tol=tol, **kw)
        worst = max(worst, rep["max_error"])
        if not rep["passed"]:
            failures.append(f"{name}={rep['max_error']:.2e}")
    detail = f"{len(cases)} cases, max rel err {worst:.2e} (tol {GRAD_TOL})"
    return not failures, detail + (f"; failed {failures}" if failures else "")


@_timed(5, "constancy end to end")
def check_constancy():
    model = build(ModelConfig(encoders=4, rotate=True), seed=0)
    frame = np.full((64, 48, 3), 128, np.uint8)
    out, field = interpolate(model, frame, frame, return_field=True)
    sums = np.concatenate([field.weight1.data.sum(axis=1).ravel(), field.weight2.data.sum(axis=1).ravel()])
    wdev = float(np.abs(sums - 1).max())
    v = field.occlusion.data
    ok = bool(np.all(out == 128)) and wdev <= 1e-6 and v.min() > 0 and v.max() < 1
    return ok, (f"output unique {np.unique(out).tolist()}, |sum W - 1| <= {wdev:.1e}, "
                f"V in [{v.min():.4f}, {v.max():.4f}]")


def overfit_run(steps: int = 300, seed: int = 42, batch_size: int = 1):
    samples = translating_triplets(4, 64, 64, shift=2, seed=seed)
    model = build(ModelConfig(encoders=1), seed=seed)
    report = train_loop(model, samples=samples, epochs=10 ** 6, batch_size=batch_size, crop=64,
                        seed=seed, max_steps=steps)
    return report


@_timed(6, "overfit smoke test")
def check_overfit(steps: int = 300, seed: int = 42):
    report = overfit_run(steps, seed)
    first = report.step_losses[0]
    final = report.epochs[-1]["mean_loss"]
    ratio = final / first
    return (len(report.step_losses) == steps and ratio <= OVERFIT_RATIO,
            f"step-1 L1 {first:.5f}, final-epoch L1 {final:.5f}, ratio {ratio:.3f} (<= {OVERFIT_RATIO})")


@_timed(7, "metric oracles")
def check_metrics(seed: int = 0):
    rng = np.random.default_rng(seed)
    a = rng.integers(1, 255, (32, 40, 3), dtype=np.uint8)
    p_same = psnr(a, a)
    off = (a.astype(int) + rng.choice([-1, 1], a.shape)).astype(np.uint8)
    p_off = psnr(a, off)
    s_same = ssim(a, a)
    sym = 0.0
    for _ in range(20):
        x = rng.integers(0, 256, (24, 24, 3), dtype=np.uint8)
        y = rng.integers(0, 256, (24, 24, 3), dtype=np.uint8)
        sym = max(sym, abs(ssim(x, y) - ssim(y, x)))
    ok = math.isinf(p_same) and abs(p_off - OFF_BY_ONE_PSNR) <= 1e-4 and abs(s_same - 1) <= 1e-9 and sym == 0.0
    return ok, (f"PSNR(identical)={p_same}, off-by-one={p_off:.6f} dB, SSIM(identical)={s_same!r}, "
                f"max asymmetry {sym:.1e}")


@_timed(8, "checkpoint round trip")
def check_checkpoint(seed: int = 0):
    model = build(ModelConfig(encoders=2), seed=seed)
    rng = np.random.default_rng(seed)
    f1 = rng.integers(0, 256, (40, 56, 3), dtype=np.uint8)
    f2 = rng.integers(0, 256, (40, 56, 3), dtype=np.uint8)
    with T.no_grad():
        ref = interpolate_tensor(model, to_tensor(f1), to_tensor(f2)).data
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.prnc"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        save_checkpoint(loaded, Path(tmp) / "again.prnc")
        same_bytes = path.read_bytes() == (Path(tmp) / "again.prnc").read_bytes()
    with T.no_grad():
        got = interpolate_tensor(loaded, to_tensor(f1), to_tensor(f2)).data
    bitwise = got.dtype == ref.dtype and np.array_equal(got.view(np.uint32), ref.view(np.uint32))
    return bitwise and same_bytes, f"forward bitwise identical: {bitwise}; save-load-save bytes identical: {same_bytes}"


def shared_weight_encoders(model) -> None:
    """Copy encoder 1's weights into every other encoder, in place."""
    for name, p in model.params.items():
        if name.startswith("encoder.") and not name.startswith("encoder.1."):
            src = "encoder.1." + name.split(".", 2)[2]
            p.data = model.params[src].data.copy()


@_timed(9, "rotation bookkeeping")
def check_rotation(value: float = 0.5):
    model = build(ModelConfig(encoders=4, rotate=True), seed=0)
    shared_weight_encoders(model)
    width, height = 256, 192
    x = Tensor(np.full((1, 6, height, width), value, np.float32))
    with T.no_grad():
        maps = [model.encode(e, T.rot90(x, model.config.angle_of(e)))[1] for e in range(1, 5)]
        back = [T.rot90(m, (4 - model.config.angle_of(e)) % 4) for e, m in zip(range(1, 5), maps)]
        fused = fuse_features(maps, [model.config.angle_of(e) for e in range(1, 5)])
    shapes = {b.shape[2:] for b in back}
    err = float(np.abs(fused.data - 4 * back[0].data).max())
    ok = shapes == {(96, 128)} and err <= 1e-5
    return ok, f"back-rotated level-2 shapes {sorted(shapes)}, max |fused - 4*enc1| = {err:.1e}"


@_timed(10, "bench table structure")
def check_bench(reps: int = 3, budget_mb: float = 512):
    configs = [ModelConfig.from_label(v) for v in ORDERING_VARIANTS]
    rows = bench(configs, BENCH_RESOLUTIONS, reps=reps, memory_budget=int(budget_mb * 2 ** 20))
    emitted = {(r.width, r.height) for r in rows}
    complete = emitted == set(BENCH_RESOLUTIONS)
    per_variant = all(sum(r.variant == c.label for r in rows) == len(BENCH_RESOLUTIONS) for c in configs)
    order = check_runtime_ordering(rows)
    ran = sum(1 for r in rows if r.times)
    # ordering is a soft assertion: inversions are reported, never fatal
    ok = complete and per_variant and ran > 0 and order["resolutions_checked"] > 0
    return ok, (f"{len(rows)} rows, {ran} timed, ordering inversions: {len(order['warnings'])} "
                f"within {INVERSION_MARGIN:.0%}, {len(order['violations'])} beyond")


ALL_CHECKS = (check_param_counts, check_reductions, check_adacof_oracle, check_gradients,
              check_constancy, check_overfit, check_metrics, check_checkpoint, check_rotation,
              check_bench)
SLOW_CHECKS = (check_overfit, check_bench)


def run_all(skip_slow: bool = False, echo=print) -> list[CheckResult]:
    results = []
    for check in ALL_CHECKS:
        if skip_slow and check in SLOW_CHECKS:
            echo(f"[SKIP] {check.__name__}")
            continue
        res = check()
        echo(res.line())
        results.append(res)
    return results


if __name__ == "__main__":
    sys.exit(0 if all(r.passed for r in run_all()) else 2)
