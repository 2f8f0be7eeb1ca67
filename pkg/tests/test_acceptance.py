"""Acceptance criteria 1-9, one test per criterion, each reporting a pass/fail line."""

import itertools
import json
import time
from dataclasses import replace

import numpy as np
import pytest

import oracles
from vmixer import cli
from vmixer.ablation import HYBRID, UNIFORM_LVSA, AblationSetup, compare_stage_assignments
from vmixer.blocks import WindowSpec, gvm_block_forward, init_gvm_block, init_lvsa_block, lvsa_block_forward
from vmixer.engine import Tensor, no_grad
from vmixer.io import decode_checkpoint, decode_volume, encode_checkpoint, encode_volume
from vmixer.metrics import EmptyMaskError, dsc, hd95, jaccard, nsd
from vmixer.model import ModelConfig, StageSpec, build_model, forward, stage_shapes
from vmixer.postprocess import NoSeedsError, connected_components, instance_watershed
from vmixer.training.data import synth_dataset
from vmixer.training.loop import train
from vmixer.training.losses import DeepSupervisionConfig, deep_supervision_loss, downsample_labels, segmentation_loss
from vmixer.training.optim import LrSchedule, OptimizerState, poly_lr
from vmixer.verification import format_results, run_gradcheck_suite

RESIDUAL_OUTPUTS = {"proj", "fc2", "token2", "channel2"}


def zero_residual_outputs(params):
    for name, p in params.items():
        if name.split(".")[-2] in RESIDUAL_OUTPUTS:
            p.data = np.zeros_like(p.data)


def test_criterion_1_gradient_suite(criterion):
    start = time.perf_counter()
    results = run_gradcheck_suite(seeds=20)
    elapsed = time.perf_counter() - start
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    ok = not failed and elapsed < 300 and all(r.seeds >= 20 for r in results) and results[-1].name == "micro_model"
    worst = max(results, key=lambda r: r.worst / r.tolerance)
    criterion(1, ok, f"{len(results)} cases x 20 seeds in {elapsed:.0f}s; tightest {worst.name} "
                     f"{worst.worst:.2e} (tol {worst.tolerance:.0e}); failed {failed}")


def test_criterion_2_shape_ladder(criterion):
    config = ModelConfig()
    dims = [s.dims for s in stage_shapes(config, (128, 128, 64))]
    ladder_ok = dims == [(32, 32, 32), (16, 16, 16), (8, 8, 8), (4, 4, 4)]
    channels_ok = [s.channels for s in stage_shapes(config, (128, 128, 64))] == [48, 96, 192, 384]
    # a real forward at a small size checks the aux heads against the same rule
    micro = ModelConfig(base_channels=4, training_volume_dims=(32, 32, 16))
    with no_grad():
        out = forward(build_model(micro), Tensor(np.zeros((1, 1, 32, 32, 16), np.float32)))
    aux_ok = [a.shape[2:] for a in out["aux"]] == [(8, 8, 8), (4, 4, 4)] and out["logits"].shape[2:] == (32, 32, 16)
    rule_ok = all(
        s.dims == (128 // (4 * 2**i), 128 // (4 * 2**i), 64 // (2 * 2**i)) for i, s in enumerate(stage_shapes(config, (128, 128, 64)))
    )
    criterion(2, ladder_ok and channels_ok and aux_ok and rule_ok, f"stages {dims}; aux {[a.shape[2:] for a in out['aux']]} at 32x32x16")


def test_criterion_3_residual_identities(criterion, rng):
    bit_exact = []
    for heads, window, shape in [(2, (2, 2, 2), (2, 8, 4, 4, 4)), (1, (4, 4, 2), (1, 4, 4, 4, 2)), (4, (2, 2, 1), (1, 8, 4, 2, 2))]:
        spec = WindowSpec.half_shift(window)
        p = init_lvsa_block(rng, shape[1], heads, spec)
        zero_residual_outputs(p)
        x = rng.normal(size=shape).astype(np.float32)
        bit_exact.append(lvsa_block_forward(Tensor(x), p, spec, heads).data.tobytes() == x.tobytes())
    for c, tokens, shape in [(4, 8, (2, 4, 2, 2, 2)), (8, 64, (1, 8, 4, 4, 4))]:
        p = init_gvm_block(rng, c, tokens)
        zero_residual_outputs(p)
        x = rng.normal(size=shape).astype(np.float32)
        bit_exact.append(gvm_block_forward(Tensor(x), p).data.tobytes() == x.tobytes())

    # end to end: zeroed blocks behave like a network with no blocks at all
    worst = 0.0
    for kinds in (HYBRID, UNIFORM_LVSA):
        cfg = ModelConfig.from_kinds(kinds, base_channels=4, training_volume_dims=(32, 32, 16), seed=5)
        full = build_model(cfg)
        zero_residual_outputs(full.params)
        bare = build_model(replace(cfg, stages=tuple(replace(s, depth=0) for s in cfg.stages)))
        for name, p in bare.params.items():
            p.data = full.params[name].data.copy()
        x = Tensor(rng.normal(size=(1, 1, 32, 32, 16)).astype(np.float32))
        with no_grad():
            a, b = forward(full, x), forward(bare, x)
        for u, v in zip([a["logits"]] + a["aux"], [b["logits"]] + b["aux"]):
            worst = max(worst, float(np.abs(u.data - v.data).max()))
    criterion(3, all(bit_exact) and worst <= 1e-6, f"{sum(bit_exact)}/{len(bit_exact)} blocks bit-exact; end-to-end max |diff| {worst:.1e}")


def test_criterion_4_loss_recipe(criterion, rng):
    alphas = DeepSupervisionConfig().alphas
    alpha_ok = all(abs(a - b) <= 1e-9 for a, b in zip(alphas, (4 / 7, 2 / 7, 1 / 7))) and len(alphas) == 3
    halving_ok = all(abs(a - b) <= 1e-9 for a, b in zip(DeepSupervisionConfig.halving().alphas, alphas))
    lr = poly_lr(LrSchedule(0.01, 1000), 250)
    lr_ok = abs(lr - 0.0077189) <= 1e-6
    # the combined loss is the alpha-weighted sum of per-scale dice + CE
    labels = rng.integers(0, 3, size=(1, 16, 16, 8))
    outs = {
        "logits": Tensor(rng.normal(size=(1, 3, 16, 16, 8))),
        "aux": [Tensor(rng.normal(size=(1, 3, 4, 4, 4))), Tensor(rng.normal(size=(1, 3, 2, 2, 2)))],
    }
    terms = [segmentation_loss(t, downsample_labels(labels, t.shape[2:])).data for t in [outs["logits"]] + outs["aux"]]
    total = float(deep_supervision_loss(outs, labels).data)
    sum_ok = abs(total - sum(a * t for a, t in zip(alphas, terms))) <= 1e-6
    criterion(4, alpha_ok and halving_ok and lr_ok and sum_ok, f"alphas {tuple(round(a, 9) for a in alphas)}; poly_lr(250) = {lr:.7f}; weighted sum ok {sum_ok}")


def test_criterion_5_overfit(criterion):
    cfg = ModelConfig(base_channels=8, training_volume_dims=(32, 32, 16), num_classes=3)
    assert cfg.block_kinds == HYBRID
    model = build_model(cfg)
    sample = synth_dataset(0, 1, cfg.training_volume_dims, 3)
    start = time.perf_counter()
    history = train(model, sample, LrSchedule(0.1, 1000), DeepSupervisionConfig(), epochs=20, iters_per_epoch=10,
                    seed=0, batch_size=1, optimizer=OptimizerState(momentum=0.95), grad_clip=12.0)
    elapsed = time.perf_counter() - start
    with no_grad():
        pred = forward(model, Tensor(sample[0].image[None]))["logits"].data[0].argmax(0)
    score = float(np.mean([dsc(pred == k, sample[0].labels == k) for k in (1, 2)]))
    criterion(5, score > 0.95 and elapsed < 600, f"train DSC {score:.4f} after 200 iterations in {elapsed:.0f}s (final loss {history.losses[-1]:.4f})")


def test_criterion_6_hybrid_vs_uniform(criterion):
    setup = AblationSetup()
    result = compare_stage_assignments((HYBRID, UNIFORM_LVSA), seeds=(0, 1, 2), setup=setup)
    print(result.table())
    hybrid, uniform = result.seed_mean(HYBRID), result.seed_mean(UNIFORM_LVSA)
    criterion(6, hybrid <= uniform, f"seed-mean HD95 hybrid {hybrid:.3f} vs LVSA x4 {uniform:.3f} "
                                    f"({setup.train_count} train / {setup.test_count} test samples, 3 seeds)")


def _all_masks(shape, max_voxels=None):
    cells = list(itertools.product(*(range(n) for n in shape)))
    sizes = range(1, (max_voxels or len(cells)) + 1)
    for k in sizes:
        for combo in itertools.combinations(cells, k):
            m = np.zeros(shape, dtype=bool)
            m[tuple(np.array(combo).T)] = True
            yield m


def test_criterion_7_metric_oracles(criterion):
    worst = 0.0
    # every unordered pair of nonempty 2x2x2 masks (both metrics are symmetric; checked below)
    grid = list(_all_masks((2, 2, 2)))
    surf = [oracles.surface_voxels(m) for m in grid]
    n_pairs = 0
    for i, j in itertools.combinations_with_replacement(range(len(grid)), 2):
        a, b = oracles.directed(surf[i], surf[j]), oracles.directed(surf[j], surf[i])
        want_hd = max(oracles.percentile_linear(a, 95), oracles.percentile_linear(b, 95))
        want_nsd = ((a <= 1.0).sum() + (b <= 1.0).sum()) / (len(a) + len(b))
        worst = max(worst, abs(hd95(grid[i], grid[j]) - want_hd), abs(nsd(grid[i], grid[j]) - want_nsd))
        n_pairs += 1
    # every 1- and 2-voxel mask on 3^3 against fixed random 3^3 ground truths
    rng = np.random.default_rng(0)
    gts = [rng.random((3, 3, 3)) < p for p in (0.1, 0.3, 0.5, 0.7, 0.9)]
    gts = [g if g.any() else ~g for g in gts] + [np.ones((3, 3, 3), bool)]
    for m in _all_masks((3, 3, 3), max_voxels=2):
        for g in gts:
            worst = max(worst, abs(hd95(m, g) - oracles.hd95(m, g)), abs(nsd(m, g) - oracles.nsd(m, g)))
            n_pairs += 1
    # 100 random 8^3 pairs, some anisotropic
    for seed in range(100):
        a, b = oracles.random_blob_pair(np.random.default_rng(seed))
        sp = (1.0, 1.0, 1.0) if seed % 2 else (0.8, 1.0, 1.7)
        worst = max(worst, abs(hd95(a, b, sp) - oracles.hd95(a, b, sp)), abs(nsd(a, b, 1.0, sp) - oracles.nsd(a, b, 1.0, sp)))
        worst = max(worst, abs(hd95(a, b, sp) - hd95(b, a, sp)))
        n_pairs += 1
    oracle_ok = worst <= 1e-6

    rng = np.random.default_rng(1)
    identity_err = 0.0
    for _ in range(1000):
        a, b = rng.random((6, 6, 6)) < rng.random(), rng.random((6, 6, 6)) < rng.random()
        d = dsc(a, b)
        identity_err = max(identity_err, abs(jaccard(a, b) - d / (2 - d)))
    identity_ok = identity_err <= 1e-12

    z, one = np.zeros((3, 3, 3), bool), np.zeros((3, 3, 3), bool)
    one[1, 1, 1] = True
    degenerate_ok = dsc(z, z) == 1.0 and jaccard(z, z) == 1.0 and dsc(z, one) == 0.0 and jaccard(one, z) == 0.0
    degenerate_ok &= dsc(one, one) == 1.0 and hd95(one, one) == 0.0
    for p, g, side in [(z, one, "prediction"), (one, z, "ground-truth"), (z, z, "both")]:
        for fn in (hd95, nsd):
            try:
                fn(p, g)
                degenerate_ok = False
            except EmptyMaskError as exc:
                degenerate_ok &= side in str(exc)
    criterion(7, oracle_ok and identity_ok and degenerate_ok,
              f"{n_pairs} HD95/NSD pairs, worst |diff| {worst:.1e}; J=D/(2-D) worst {identity_err:.1e} over 1000; degenerate ok {degenerate_ok}")


def test_criterion_8_watershed(criterion):
    checked, mismatches, invariant_failures = 0, 0, 0
    for seed in range(100):
        fg, bp = oracles.random_prob_volumes(np.random.default_rng(seed))
        try:
            inst = instance_watershed(fg, bp, 0.4, 0.5)
        except NoSeedsError:
            continue
        checked += 1
        if not np.array_equal(inst, instance_watershed(fg.copy(), bp.copy(), 0.4, 0.5)):
            invariant_failures += 1
        mismatches += not np.array_equal(inst, oracles.watershed(fg, bp, 0.4, 0.5))
        region = fg > 0.4
        seeds = connected_components(region & (bp < 0.5))
        reach = connected_components(region)
        reachable = np.isin(reach, np.unique(reach[seeds > 0]))
        ok = (inst[~region] == 0).all() and ((inst > 0) == reachable).all()
        ok &= (inst[seeds > 0] == seeds[seeds > 0]).all() and inst.max() == seeds.max()
        ok &= all(connected_components(inst == k).max() == 1 for k in range(1, inst.max() + 1))
        invariant_failures += not ok

    fg = np.zeros((12, 6, 6))
    fg[1:11, 1:5, 1:5] = 0.9
    bp = np.full(fg.shape, 0.1)
    bp[5:7] = 0.9
    blobs = instance_watershed(fg, bp).max()
    criterion(8, checked >= 90 and mismatches == 0 and invariant_failures == 0 and blobs == 2,
              f"{checked}/100 volumes with seeds; oracle mismatches {mismatches}; invariant failures {invariant_failures}; two-blob instances {blobs}")


def test_criterion_9_round_trips(criterion, tmp_path, capsys):
    rng = np.random.default_rng(9)
    volumes_ok = True
    for data in [rng.normal(size=(2, 7, 5, 3)).astype(np.float32), rng.integers(0, 65536, size=(4, 4, 4)),
                 np.float32(rng.random((1, 1, 1)))]:
        back = decode_volume(encode_volume(data, spacing=(0.5, 0.75, 2.0)))
        want = np.asarray(data).reshape(back.data.shape)
        volumes_ok &= back.data.tobytes() == want.astype(back.data.dtype).tobytes() and back.spacing == (0.5, 0.75, 2.0)

    cfg = ModelConfig.from_kinds(HYBRID, base_channels=4, training_volume_dims=(32, 32, 16), seed=2)
    model = build_model(cfg)
    opt = OptimizerState(momentum=0.9)
    for name, p in model.params.items():
        opt.buffers[name] = rng.normal(size=p.data.shape).astype(np.float32)
    buf = encode_checkpoint(model, opt, 12, LrSchedule(0.02, 500))
    loaded = decode_checkpoint(buf)
    ckpt_ok = loaded.epoch == 12 and encode_checkpoint(loaded.model, loaded.optimizer, 12, LrSchedule(0.02, 500)) == buf
    ckpt_ok &= all(loaded.model.params[k].data.tobytes() == p.data.tobytes() for k, p in model.params.items())

    target = replace(cfg, input_channels=2, num_classes=4, seed=8)
    adapted = decode_checkpoint(buf, target, adapt_stem_head=True).model
    fresh = build_model(target)
    adapt_ok = True
    for name, p in adapted.params.items():
        source = fresh if name.startswith(("stem.", "expand.", "aux1.", "aux2.")) else model
        adapt_ok &= p.data.tobytes() == source.params[name].data.tobytes()

    config = tmp_path / "micro.json"
    config.write_text(json.dumps({
        "model": {"base_channels": 4, "training_volume_dims": [32, 32, 16]},
        "training": {"epochs": 1, "iters_per_epoch": 4, "batch_size": 1, "checkpoint_every": 1},
        "data": {"count": 2},
    }))
    cli.main(["synth", "--out", str(tmp_path / "data"), "--count", "1", "--dims", "40,32,16", "--seed", "3"])
    outputs = []
    for run in ("a", "b"):
        codes = [
            cli.main(["train", "--config", str(config), "--out", str(tmp_path / run), "--seed", "4"]),
            cli.main(["predict", "--checkpoint", str(tmp_path / run / "checkpoint_last.vckp"),
                      "--input", str(tmp_path / "data" / "image_000.vvol"), "--out", str(tmp_path / run / "p"),
                      "--instances", "--fg-thresh", "0.1", "--seed-thresh", "0.9"]),
        ]
        files = ["checkpoint_last.vckp", "checkpoint_0001.vckp", "history.jsonl", "config.json",
                 "p_probs.vvol", "p_labels.vvol", "p_instances.vvol"]
        outputs.append((codes, [(tmp_path / run / f).read_bytes() for f in files]))
    cli_ok = outputs[0][0] == [0, 0] and outputs[0] == outputs[1]
    criterion(9, volumes_ok and ckpt_ok and adapt_ok and cli_ok,
              f"volumes {volumes_ok}; checkpoint {ckpt_ok}; adapt-load {adapt_ok}; fixed-seed CLI byte-identical {cli_ok}")
