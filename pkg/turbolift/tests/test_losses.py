import subprocess

import numpy as np
import pytest
import torch

from turbolift.errors import ConfigurationError, ShapeError
from turbolift.losses import (
    LossConfig,
    downsample_labels,
    focal_tversky_loss,
    mss_loss,
    tversky_index,
)
from turbolift.tsrio import write_tensor


def test_perfect_overlap_scores_one():
    g = (torch.rand(1, 1, 16, 16) > 0.5).double()
    assert float(tversky_index(g, g)) == pytest.approx(1.0, abs=1e-12)


def test_all_zero_prediction_matches_count_formula():
    g = torch.zeros(10, 10, dtype=torch.float64)
    g[2:5, 3:7] = 1.0  # k = 12 positives
    p = torch.zeros_like(g)
    eps, alpha = 1e-7, 0.7
    want = eps / (alpha * 12 + eps)
    assert float(tversky_index(p, g, alpha, 0.3, eps)) == pytest.approx(
        want, rel=1e-12
    )


def test_both_empty_scores_one():
    z = torch.zeros(4, 4, dtype=torch.float64)
    assert float(tversky_index(z, z)) == pytest.approx(1.0, abs=1e-12)


def test_half_weights_reduce_to_dice_against_toolkit(tmp_path):
    # alpha = beta = 0.5 collapses the Tversky denominator to the Dice one;
    # cross-check against the reconstruction toolkit's scorer on the same
    # binary masks, both through its library and its command line.
    segeval = pytest.importorskip("perfrec.segeval")

    def scorer_dice(pred, gt):
        return segeval.metrics(
            segeval.confusion_counts(pred.astype(np.uint8), gt.astype(np.uint8))
        ).dice

    def ti(pred, gt, **kw):
        return float(
            tversky_index(
                torch.from_numpy(pred.astype(np.float64)),
                torch.from_numpy(gt.astype(np.float64)),
                alpha=0.5,
                beta=0.5,
                **kw,
            )
        )

    rng = np.random.default_rng(42)
    cases = [
        (rng.random((12, 12)) < 0.4, rng.random((12, 12)) < 0.5)
        for _ in range(25)
    ]
    cases += [
        (np.ones((6, 6), bool), np.ones((6, 6), bool)),
        (np.zeros((6, 6), bool), np.ones((6, 6), bool)),
        (np.ones((6, 6), bool), np.zeros((6, 6), bool)),
    ]
    # The identity is algebraic, so with the smoothing term removed the two
    # values agree to rounding on any masks whose union is non-empty.
    for pred, gt in cases:
        assert ti(pred, gt, epsilon=0.0) == pytest.approx(
            scorer_dice(pred, gt), abs=1e-9
        )
    # Both-empty masks rely on the smoothing term, which reproduces the
    # scorer's both-empty convention of 1.0.
    empty = np.zeros((6, 6), bool)
    assert ti(empty, empty) == pytest.approx(scorer_dice(empty, empty), abs=1e-9)
    # At segmentation-mask scale the default smoothing term perturbs the
    # index by well under the comparison tolerance.
    for _ in range(25):
        pred = rng.random((32, 32)) < 0.5
        gt = rng.random((32, 32)) < 0.5
        assert ti(pred, gt) == pytest.approx(scorer_dice(pred, gt), abs=1e-9)

    pred, gt = cases[0]
    write_tensor(tmp_path / "p.tsr", pred.astype(np.uint8))
    write_tensor(tmp_path / "g.tsr", gt.astype(np.uint8))
    proc = subprocess.run(
        ["perfrec", "eval", "--pred", str(tmp_path / "p.tsr"),
         "--gt", str(tmp_path / "g.tsr")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    header, row = [l.split(",") for l in proc.stdout.strip().splitlines()]
    cli_dice = float(row[header.index("dice")])
    ti = float(
        tversky_index(
            torch.from_numpy(pred.astype(np.float64)),
            torch.from_numpy(gt.astype(np.float64)),
            0.5,
            0.5,
        )
    )
    assert ti == pytest.approx(cli_dice, abs=5e-7)  # CLI prints 6 decimals


def _fd_gradient(fn, x: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = float(flat[i])
        flat[i] = orig + h
        hi = float(fn())
        flat[i] = orig - h
        lo = float(fn())
        flat[i] = orig
        out[i] = (hi - lo) / (2 * h)
    return grad


def test_focal_tversky_gradient_matches_finite_differences():
    torch.manual_seed(3)
    g = (torch.rand(8, 8) > 0.5).double()
    p = (0.05 + 0.9 * torch.rand(8, 8, dtype=torch.float64)).requires_grad_(True)
    cfg = LossConfig()
    focal_tversky_loss(p, g, cfg).backward()
    analytic = p.grad.clone()
    with torch.no_grad():
        fd = _fd_gradient(lambda: focal_tversky_loss(p, g, cfg), p.data)
    rel = torch.linalg.norm(fd - analytic) / torch.linalg.norm(analytic)
    assert float(rel) <= 1e-4


def test_mss_gradient_matches_finite_differences():
    torch.manual_seed(4)
    g = (torch.rand(8, 8) > 0.5).double()
    preds = [
        (0.05 + 0.9 * torch.rand(s, s, dtype=torch.float64)).requires_grad_(True)
        for s in (8, 4, 2, 1)
    ]
    cfg = LossConfig()
    mss_loss(preds, g, cfg).backward()
    for p in preds:
        analytic = p.grad.clone()
        with torch.no_grad():
            fd = _fd_gradient(lambda: mss_loss(preds, g, cfg), p.data)
        rel = torch.linalg.norm(fd - analytic) / torch.linalg.norm(analytic)
        assert float(rel) <= 1e-4


def test_loss_stays_in_unit_interval():
    rng = np.random.default_rng(7)
    cfg = LossConfig()
    for trial in range(200):
        p = torch.from_numpy(rng.random((5, 5)))
        g = torch.from_numpy((rng.random((5, 5)) < rng.random()).astype(float))
        if trial % 50 == 0:
            p = torch.ones_like(p) * (trial % 100 == 0)
        v = float(focal_tversky_loss(p, g, cfg))
        assert 0.0 <= v <= 1.0


def test_index_monotone_in_true_positive_mass():
    rng = np.random.default_rng(11)
    g = torch.from_numpy((rng.random((6, 6)) < 0.5).astype(float))
    p = torch.from_numpy(rng.random((6, 6)))
    positives = [tuple(i) for i in np.argwhere(g.numpy() > 0)]
    for iy, ix in positives[:10]:
        before = float(tversky_index(p, g))
        bumped = p.clone()
        bumped[iy, ix] = min(1.0, float(bumped[iy, ix]) + 0.2)
        assert float(tversky_index(bumped, g)) >= before - 1e-12


def test_multi_scale_average_matches_manual_sum():
    torch.manual_seed(9)
    g = (torch.rand(8, 8) > 0.4).double()
    preds = [torch.rand(s, s, dtype=torch.float64) for s in (8, 4, 2, 1)]
    cfg = LossConfig()
    levels = [g]
    for _ in range(3):
        levels.append(downsample_labels(levels[-1]))
    manual = sum(
        focal_tversky_loss(p, y, cfg) for p, y in zip(preds, levels)
    ) / 4.0
    assert float(mss_loss(preds, g, cfg)) == pytest.approx(float(manual), rel=1e-12)


def test_perfect_ladder_scores_zero_loss():
    g = torch.zeros(8, 8, dtype=torch.float64)
    g[2:6, 2:6] = 1.0
    levels = [g]
    for _ in range(3):
        levels.append(downsample_labels(levels[-1]))
    assert float(mss_loss(levels, g)) == pytest.approx(0.0, abs=1e-9)


def test_downsampling_is_nearest_neighbour_and_binary():
    rng = np.random.default_rng(5)
    y = torch.from_numpy((rng.random((16, 16)) < 0.5).astype(np.float64))
    down = downsample_labels(y)
    assert down.shape == (8, 8)
    assert torch.equal(down, y[::2, ::2])
    assert set(np.unique(down.numpy())) <= {0.0, 1.0}


def test_shape_and_config_validation():
    g = torch.zeros(8, 8)
    with pytest.raises(ShapeError):
        tversky_index(torch.zeros(8, 7), g)
    with pytest.raises(ShapeError):
        mss_loss([torch.zeros(8, 8)] * 3, g)
    with pytest.raises(ShapeError):
        mss_loss([torch.zeros(8, 8), torch.zeros(5, 5), torch.zeros(2, 2),
                  torch.zeros(1, 1)], g)
    with pytest.raises(ConfigurationError):
        LossConfig(gamma=0.0).validate()
    with pytest.raises(ConfigurationError):
        LossConfig(epsilon=-1e-9).validate()
    with pytest.raises(ConfigurationError):
        LossConfig(alpha=-0.1).validate()
