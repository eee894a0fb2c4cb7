"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line to the terminal."""
import math
import time

import numpy as np
import pytest
import torch

import oracles
from demos import weight_sharing_scores
from spvp360 import numerics as nx
from spvp360.cli import main
from spvp360.evalkit import Level, auc_judd, classify_head_movement, jaccard_scores, nss, weighted_mse
from spvp360.fovgru import FovConfig, FovPredictor, SpConvGruCell
from spvp360.fusion import fuse
from spvp360.harness.pipeline import ToyConfig, saliency_dataset, sweep, train_toy
from spvp360.harness.session import SessionConfig
from spvp360.harness.synthetic import SyntheticScene, generate_scene
from spvp360.saliency import CbamBlock, SaliencyNet
from spvp360.spconv import SphericalKernel, shift_columns
from spvp360.sphere_geom import FovRect, LatLon, gaussian_fov_heatmap, solid_angle_weights
from spvp360.trainer import FovSample, TrainConfig, train_fov, train_saliency


@pytest.fixture
def verdict(capsys):
    def report(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {title} {detail}".rstrip())
        assert ok, f"criterion {n}: {detail}"
    return report


def test_criterion_1_gradient_integrity(tmp_path, verdict):
    t0 = time.perf_counter()
    code = main(["gradcheck", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    lines = (tmp_path / "gradcheck.txt").read_text().splitlines()
    counts = {}
    for line in lines:
        name = line.split()[1].split("[")[0]
        counts[name] = counts.get(name, 0) + 1
    worst = max(float(line.split("max_rel_err=")[1].split()[0]) for line in lines)
    ok = code == 0 and all(line.startswith("PASS") for line in lines) and min(counts.values()) >= 3
    ok = ok and worst < 1e-4 and elapsed < 60
    verdict(1, "gradient integrity", ok, f"({len(lines)} checks, {len(counts)} ops, worst {worst:.2e}, {elapsed:.1f}s)")


def test_criterion_2_spherical_geometry(verdict):
    sums = [abs(solid_angle_weights(V, U).sum() - 1) for V in range(1, 65) for U in (1, 3, 8, 64)]
    rows4 = solid_angle_weights(4, 1)[:, 0]
    analytic = np.allclose(rows4, [0.146447, 0.353553, 0.353553, 0.146447], atol=1e-6, rtol=0)
    equator = all(solid_angle_weights(V, 1)[V // 2, 0] > solid_angle_weights(V, 1)[0, 0] for V in range(3, 129))
    ok = max(sums) <= 1e-9 and analytic and equator
    verdict(2, "spherical geometry", ok, f"(max sum error {max(sums):.1e})")


def test_criterion_3_weight_sharing(verdict):
    sph, planar = weight_sharing_scores(seed=0)
    diffs = []
    for seed in range(4):
        layer = SphericalKernel(2, 3, 3, generator=torch.Generator().manual_seed(seed))
        x = torch.tensor(np.random.default_rng(seed).normal(size=(2, 32, 64)))
        for shift in (1, 7, 32, -13):
            with torch.no_grad():
                diffs.append(float((layer(shift_columns(x, shift)) - shift_columns(layer(x), shift)).abs().max()))
    ok = sph > 0.95 and planar < sph and max(diffs) < 1e-9
    verdict(3, "weight sharing", ok, f"(spherical {sph:.3f}, planar {planar:.3f}, shift err {max(diffs):.1e})")


def test_criterion_4_equation_chains(verdict):
    errs = {}
    block = CbamBlock(16, 4, torch.Generator().manual_seed(1))
    with torch.no_grad():
        block.channel.b1.normal_(generator=torch.Generator().manual_seed(2))
        block.channel.b2.normal_(generator=torch.Generator().manual_seed(3))
        f = np.random.default_rng(0).normal(size=(16, 6, 12))
        att = block.attention(torch.tensor(f))
    ca = block.channel
    ref = oracles.cbam_chain(f, *(p.detach().numpy() for p in (ca.w1, ca.b1, ca.w2, ca.b2, block.spatial.weight)))
    errs["cbam"] = max(np.abs(att[k].numpy().reshape(ref[k].shape) - ref[k]).max() for k in ref)

    cell = SpConvGruCell(1, 3, 3, torch.Generator().manual_seed(2))
    ks = (cell.W_z, cell.W_r, cell.W_o)
    with torch.no_grad():
        for k in ks:
            k.bias.normal_(generator=torch.Generator().manual_seed(7))
        rng = np.random.default_rng(3)
        x, h = rng.normal(size=(1, 6, 12)), rng.uniform(-1, 1, size=(3, 6, 12))
        got = cell.gates(torch.tensor(x), torch.tensor(h))
    ref = oracles.gru_chain(x, h, *(k.weight.detach().numpy() for k in ks), *(k.bias.detach().numpy() for k in ks))
    errs["gru"] = max(np.abs(got[k].numpy() - ref[k]).max() for k in ref)

    rng = np.random.default_rng(4)
    ps, pv = rng.random((8, 16)), rng.random((8, 16))
    errs["fusion"] = np.abs(fuse(ps, pv, (4, 4)) - oracles.disparity_fusion(ps, pv, (4, 4))).max()
    p, g = rng.random((8, 16)), rng.random((8, 16))
    errs["loss"] = abs(weighted_mse(p, g) - oracles.weighted_loss(p, g))
    ok = max(errs.values()) < 1e-12
    verdict(4, "equation-chain oracles", ok, "(" + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + ")")


def test_criterion_5_metric_suite(verdict):
    rng = np.random.default_rng(0)
    bound = True
    for _ in range(1000):
        pred, gt = rng.random((4, 8)) < 0.4, rng.random((4, 8)) < 0.4
        if gt.any():
            acc, prec, rec = jaccard_scores(pred, gt)
            bound &= acc <= min(prec, rec) + 1e-15
    pred, gt = np.zeros((2, 2), bool), np.zeros((2, 2), bool)
    pred[0, 0] = pred[0, 1] = pred[1, 0] = True
    gt[0, 1] = gt[1, 0] = gt[1, 1] = True
    three_four = tuple(jaccard_scores(pred, gt)) == (0.5, 2 / 3, 2 / 3)

    p = rng.random((16, 32)) * 0.5
    fx = [(int(i // 32), int(i % 32)) for i in rng.choice(512, 20, replace=False)]
    for r, c in fx:
        p[r, c] = 1.0
    perfect = auc_judd(p, fx)
    rand = []
    r2 = np.random.default_rng(0)
    for _ in range(100):
        m = r2.random((16, 32))
        rand.append(auc_judd(m, [(int(i // 32), int(i % 32)) for i in r2.choice(512, 50, replace=False)]))
    hand = nss([[1, 0], [0, 0]], [(0, 0)])
    head = (classify_head_movement(0.7, 0.35) == Level.More and classify_head_movement(0.5, 0.2) == Level.Middle
            and classify_head_movement(0.7, 0.05) == Level.Middle)
    ok = bound and three_four and perfect == 1.0 and abs(np.mean(rand) - 0.5) <= 0.05
    ok = ok and abs(hand - 1.7321) <= 1e-4 and head
    verdict(5, "metric suite", ok, f"(random AUC {np.mean(rand):.4f}, NSS {hand:.5f})")


@pytest.fixture(scope="module")
def toy_sweep():
    t0 = time.perf_counter()
    models = train_toy(ToyConfig())
    res = sweep(models, generate_scene(SyntheticScene()), SessionConfig(frame_stride=2))
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_6_feedback_trend(toy_sweep, verdict):
    res, elapsed = toy_sweep
    acc = res.by_feedback
    ok = acc[2] >= acc[0] - 0.01 and acc[5] >= acc[2] - 0.01 and acc[5] - acc[0] >= 0.05 and elapsed < 600
    detail = ", ".join(f"N={n} {a:.3f}" for n, a in acc.items())
    verdict(6, "accuracy grows with feedback users", ok, f"({detail}, {elapsed:.0f}s)")


@pytest.mark.slow
def test_criterion_7_interval_degradation(toy_sweep, verdict):
    res, _ = toy_sweep
    acc = res.by_offset
    ok = sorted(acc) == [1, 15, 30] and acc[15] <= acc[1] + 0.01 and acc[30] <= acc[15] + 0.01
    verdict(7, "accuracy falls with interval", ok, "(" + ", ".join(f"{o}f {a:.3f}" for o, a in acc.items()) + ")")


@pytest.mark.slow
def test_criterion_8_overfit(verdict):
    scene = generate_scene(SyntheticScene(frames=4, users=1))
    sample = saliency_dataset(scene, [2])[0]
    net = SaliencyNet(ToyConfig().saliency)
    train_saliency(net, [sample], TrainConfig.desk(lr=0.05, batch_size=1, max_steps=300))
    net.eval()
    with torch.no_grad():
        sal_loss = float(weighted_mse(net(sample.frame, sample.motion), sample.target))

    def heat(f):
        return gaussian_fov_heatmap(FovRect(LatLon(math.radians(60 - 22.5 * f), math.radians(10))), (16, 32))

    seq = nx.as_tensor(np.stack([heat(f) for f in range(3)]))
    tgt = nx.as_tensor(np.stack([heat(f + 1) for f in range(3)]))
    model = FovPredictor(FovConfig(hidden=4, head_channels=4)).eval()
    with torch.no_grad():
        before = float(weighted_mse(model(seq), tgt[-1]))
    train_fov(model, [FovSample(seq, tgt)], TrainConfig.desk(lr=0.05, batch_size=1, max_steps=500))
    model.eval()
    with torch.no_grad():
        after = float(weighted_mse(model(seq), tgt[-1]))
    ok = sal_loss < 1e-3 and before / after >= 10
    verdict(8, "overfit sanity", ok, f"(saliency wMSE {sal_loss:.2e}, GRU loss ratio x{before / after:.0f})")


@pytest.mark.slow
def test_criterion_9_determinism(tmp_path, verdict):
    train = ["--set", "frames=90", "--set", "saliency_steps=5", "--set", "fov_steps=3", "--set", "fov_samples=4",
             "--set", "saliency_frames=4", "--seed", "7"]
    sim = ["--set", "frames=90", "--set", "horizon=1.0", "--set", "frame_stride=10", "--seed", "7"]
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", *train, "--out", str(out / "t")]) == 0
        assert main(["simulate", *sim, "--saliency-checkpoint", str(out / "t" / "saliency.ckpt"),
                     "--fov-checkpoint", str(out / "t" / "fov.ckpt"), "--out", str(out / "s")]) == 0
    names = ["t/saliency.ckpt", "t/fov.ckpt", "t/train_log.csv", "s/metrics.csv"]
    names += sorted(str(p.relative_to(tmp_path / "a")) for p in (tmp_path / "a" / "s").glob("*.f64"))
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    ok = len(names) > 5 and all(same)
    verdict(9, "determinism", ok, f"({sum(same)}/{len(names)} files bit-identical)")
