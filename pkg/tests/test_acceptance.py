"""Acceptance gate: the binding checks for this package, one test per
criterion.  ``pytest -v tests/test_acceptance.py`` prints one pass/fail
line for each; the printed detail shows the measured numbers."""

import os
import re
import time
from math import cos, pi

import numpy as np
import pytest

from cadanet import analysis as an
from cadanet import config as cfgmod
from cadanet import lowpass as lp
from cadanet import train as tr
from cadanet.cli import main
from cadanet.backbone import load_checkpoint, save_checkpoint
from cadanet.gradcheck import run_suite as gradcheck_suite
from cadanet.layers import Param
from cadanet.oracle import run_suite as oracle_suite


# Reference budgets for the shipped full-scale presets at 224x224, batch 1
# (params, flops); params None where only the FLOP budget is pinned.
PROFILE_BUDGETS = [
    ("resnet50-d-conv3x3", 25.58e6, 4.37e9),
    ("resnet50-d-dw7-nohead", 14.44e6, 2.58e9),
    ("resnet50-d-cada-b4", 14.45e6, 2.64e9),
    ("resnet50-d-cada-b8-16-32-64", 15.96e6, 2.86e9),
    ("resnet50-d-cadasp-g9-b128", 21.10e6, 5.12e9),
    ("resnet50-original", None, 3.9e9),
    ("resnet50-b", None, 4.1e9),
]


def test_accept_profile_budgets(capsys):
    """Every shipped preset profiles within 2% of its budget."""
    for name, want_params, want_flops in PROFILE_BUDGETS:
        assert main(["profile", "--config", name]) == 0
        first = capsys.readouterr().out.split("\n")[0]
        match = re.fullmatch(r"params=(\d+) flops=(\S+)", first)
        assert match, first
        params, flops = int(match.group(1)), float(match.group(2))
        rel_f = abs(flops - want_flops) / want_flops
        assert rel_f <= 0.02, (name, flops, want_flops)
        line = f"  {name:<32s} flops={flops:.3e} ({rel_f * 100:+.2f}%)"
        if want_params is not None:
            rel_p = abs(params - want_params) / want_params
            assert rel_p <= 0.02, (name, params, want_params)
            line += f" params={params} ({rel_p * 100:+.2f}%)"
        with capsys.disabled():
            print(line)


def test_accept_gradient_suite():
    """Finite-difference checks on every layer: max relative error below
    1e-5 across the 64-bit shape matrix, finishing inside five minutes."""
    start = time.monotonic()
    worst, results = gradcheck_suite(seed=0)
    elapsed = time.monotonic() - start
    print(f"  checks={len(results)} max_rel_err={worst:.3e} "
          f"time={elapsed:.1f}s")
    assert elapsed < 300.0
    assert len(results) > 0
    assert worst < 1e-5


def test_accept_oracle_suite():
    """Fast paths agree with naive loop references to 1e-12 on at least a
    hundred random cases, including the fused-vs-explicit, zero-alpha, and
    single-channel-head identities."""
    worst, total, rows = oracle_suite(seed=0)
    print(f"  cases={total} max_abs_err={worst:.3e}")
    assert total >= 100
    labels = " | ".join(r[0] for r in rows)
    assert "fused" in labels
    assert "alpha=0" in labels
    assert "1-channel" in labels
    assert worst < 1e-12


def test_accept_spectral_suite():
    """Binomial spectrum analytic to 1e-10; the masked low-pass leaves
    under 1e-8 relative energy above cutoff; the Nyquist checkerboard is
    annihilated to 1e-10."""
    mag, degenerate = lp.spectrum(lp.binomial3_weight(), 64)
    w = 2 * np.pi * np.fft.fftfreq(64)
    axis = np.fft.fftshift((1 + np.cos(w)) / 2)
    err_spec = np.abs(mag - np.outer(axis, axis)).max()
    assert not degenerate
    assert err_spec < 1e-10

    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 32, 32))
    residual = lp.band_energy_above_cutoff(lp.ideal_lowpass(x))
    assert residual < 1e-8

    y, xg = np.mgrid[:16, :16]
    board = ((-1.0) ** (y + xg))[None, None]
    err_board = np.abs(lp.ideal_lowpass(board)).max()
    assert err_board < 1e-10
    # the binomial filter's response at Nyquist is exactly zero too
    nyq = mag[0, 0]     # corner of the shifted grid = (-pi, -pi)
    assert nyq < 1e-10
    print(f"  spectrum_err={err_spec:.2e} residual={residual:.2e} "
          f"checkerboard={err_board:.2e} nyquist_gain={nyq:.2e}")


def test_accept_training_smoke(toy_exp, toy_data, toy_run):
    """The shipped toy recipe drops train loss at least 70% in five epochs,
    in well under ten minutes, and the loss curve is bitwise repeatable."""
    history = toy_run["history"]
    assert len(history) <= 5
    drop = (history[0][1] - history[-1][1]) / history[0][1]
    print(f"  loss {history[0][1]:.4f} -> {history[-1][1]:.4f} "
          f"({drop * 100:.1f}% drop) val_top1={history[-1][2]:.4f}")
    assert drop >= 0.70

    from cadanet.backbone import build
    start = time.monotonic()
    model = build(toy_exp.backbone, seed=toy_exp.seed)
    train_set, val_set = toy_data
    repeat = tr.train_loop(model, train_set, val_set, toy_exp.train)
    elapsed = time.monotonic() - start
    print(f"  repeat run time={elapsed:.1f}s bitwise_equal="
          f"{repeat == history}")
    assert elapsed < 600.0
    assert repeat == history        # empty tolerance: bitwise float equality


def test_accept_pruning_contract(toy_exp, toy_data, toy_run, tmp_path):
    """Pruning the trained toy model: accuracy drop within tolerance,
    survivors within the base budget, and survivors monotone as the
    tolerance grows across {0, 0.1%, 1%}."""
    _, val_set = toy_data
    model = toy_run["model"]

    totals = []
    for tol in (0.0, 0.001, 0.01):
        report, _ = an.l1_prune(
            model, val_set, tolerance=tol,
            batch_size=toy_exp.train.batch_size,
            mean=toy_exp.train.mean, std=toy_exp.train.std)
        drop = report.acc_before - report.acc_after
        assert drop <= tol + 1e-12
        assert all(0 <= r.survivors <= r.bases for r in report.rows)
        totals.append(sum(r.survivors for r in report.rows))
        print(f"  tolerance={tol:<6g} removed={report.removed} "
              f"survivors={totals[-1]} drop={drop:.4f}")
    assert totals[0] >= totals[1] >= totals[2]

    # same contract through the command line, from the saved checkpoint
    ckpt = os.path.join(toy_run["out"], "checkpoint_ep005.ckpt")
    code = main(["prune", "--config", "toy-cadasp-synthetic",
                 "--ckpt", ckpt, "--tolerance", "0.001",
                 "--out", str(tmp_path)])
    assert code == 0
    assert os.path.exists(tmp_path / "prune.csv")


def test_accept_schedule_and_optimizer():
    """Cosine schedule endpoints and midpoint are exact; two SGD-momentum
    steps match the hand recurrence to 1e-12."""
    base = 0.1
    assert tr.cosine_lr(0, 100, base) == base
    assert tr.cosine_lr(100, 100, base) == 0.0
    assert abs(tr.cosine_lr(50, 100, base) - base / 2) < 1e-15
    quarter = tr.cosine_lr(25, 100, base)
    assert abs(quarter - base * (1 + cos(pi / 4)) / 2) < 1e-15

    p = Param(np.array([0.5, -1.5]))
    opt = tr.SgdMomentum([p], momentum=0.9, weight_decay=0.01)
    data = p.data.copy()
    v = np.zeros(2)
    worst = 0.0
    for lr, g in ((0.1, np.array([1.0, -2.0])),
                  (0.05, np.array([-0.5, 0.25]))):
        p.grad = g.copy()
        opt.step(lr)
        v = 0.9 * v + g + 0.01 * data
        data = data - lr * v
        worst = max(worst, float(np.abs(p.data - data).max()))
    print(f"  sgd recurrence max_err={worst:.2e}")
    assert worst < 1e-12


def test_accept_checkpoint_roundtrip(toy_data, toy_run, tmp_path):
    """Save -> load -> forward reproduces logits bit for bit."""
    model = toy_run["model"]
    _, val_set = toy_data
    batch = val_set.images[:8]
    before = model.forward(batch, train=False)
    path = str(tmp_path / "roundtrip.ckpt")
    save_checkpoint(model, path)
    after = load_checkpoint(path).forward(batch, train=False)
    same = np.array_equal(before, after)
    print(f"  logits bitwise_equal={same}")
    assert same
