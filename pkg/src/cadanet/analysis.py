"""Measurement tools: parameter/MAC profiling, L1 base-kernel pruning,
kernel correlation, and spectra export."""

import copy
import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .lowpass import spectrum
from .train import evaluate


@dataclass
class ProfileRow:
    name: str
    params: int
    macs: int


@dataclass
class ProfileReport:
    rows: list
    input_hw: tuple

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self):
        return sum(r.macs for r in self.rows)

    def to_csv_text(self):
        lines = ["layer,params,macs"]
        for r in self.rows:
            lines.append(f"{r.name},{r.params},{r.macs}")
        lines.append(f"TOTAL,{self.total_params},{self.total_macs}")
        return "\n".join(lines) + "\n"

    def format_table(self):
        width = max([len(r.name) for r in self.rows] + [5])
        lines = [f"{'layer':<{width}}  {'params':>12}  {'macs':>14}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.params:>12}  {r.macs:>14}")
        lines.append(f"{'TOTAL':<{width}}  {self.total_params:>12}  "
                     f"{self.total_macs:>14}")
        return "\n".join(lines)


def profile(model, input_hw=None):
    """Per-layer trainable parameters and multiply-accumulates at batch 1.

    Counts convolutions, linear layers, and aggregation (C*H_out*W_out*G*G
    per attention layer); BN parameters count toward the parameter column
    but BN/ReLU/pool arithmetic is excluded.  Counts depend only on the
    architecture, never on parameter values.
    """
    hw = tuple(input_hw or model.config.input_hw)
    raw = []
    model.profile_rows("", (1, 3, hw[0], hw[1]), raw)
    rows = [ProfileRow(name, int(p), int(m)) for name, p, m in raw]
    return ProfileReport(rows=rows, input_hw=hw)


@dataclass
class PruneRow:
    layer: str
    head: int
    survivors: int
    bases: int


@dataclass
class PruneReport:
    rows: list
    acc_before: float
    acc_after: float
    tolerance: float
    removed: int

    def to_csv_text(self):
        lines = ["layer,head,survivors,bases"]
        for r in self.rows:
            lines.append(f"{r.layer},{r.head},{r.survivors},{r.bases}")
        return "\n".join(lines) + "\n"

    def summary(self):
        return (f"acc_before={self.acc_before:.6f} "
                f"acc_after={self.acc_after:.6f} "
                f"tolerance={self.tolerance:.6f} removed={self.removed}")


def l1_prune(model, val_set, tolerance, batch_size=64, mean=(0, 0, 0),
             std=(1, 1, 1)):
    """Greedy global L1 pruning of base kernels on a working copy.

    All base kernels across all attention layers are sorted ascending by
    L1 norm and zeroed one at a time, re-evaluating validation accuracy
    after each removal; stops before the first removal that would drop
    accuracy more than ``tolerance`` below the original.  Returns
    (report, pruned_model); the input model is untouched.
    """
    if tolerance < 0:
        raise ConfigurationError("prune tolerance must be >= 0")
    if len(val_set) == 0:
        raise ConfigurationError("pruning needs a non-empty validation set")
    work = copy.deepcopy(model)
    nets = work.map_networks()
    if not nets:
        raise ConfigurationError(
            "model has no attention layers with base-kernel banks")
    banks = [(name, net.bank()) for name, net in nets]
    candidates = []
    for name, bank in banks:
        for h in range(bank.num_heads):
            for i in range(bank.num_bases):
                norm = float(np.abs(bank.base[h, i]).sum())
                candidates.append((norm, name, h, i))
    candidates.sort(key=lambda c: (c[0], c[1], c[2], c[3]))
    bank_by_name = dict(banks)

    acc_before = evaluate(work, val_set, batch_size, mean, std)
    acc = acc_before
    removed = set()
    for norm, name, h, i in candidates:
        bank = bank_by_name[name]
        saved = bank.base[h, i].copy()
        bank.base[h, i] = 0.0
        new_acc = evaluate(work, val_set, batch_size, mean, std)
        if acc_before - new_acc > tolerance + 1e-12:
            bank.base[h, i] = saved
            break
        acc = new_acc
        removed.add((name, h, i))
    rows = []
    for name, bank in banks:
        for h in range(bank.num_heads):
            gone = sum(1 for (n, hh, _) in removed
                       if n == name and hh == h)
            rows.append(PruneRow(name, h, bank.num_bases - gone,
                                 bank.num_bases))
    report = PruneReport(rows=rows, acc_before=acc_before, acc_after=acc,
                         tolerance=tolerance, removed=len(removed))
    return report, work


def kernel_correlation(bank):
    """Pearson correlations of the flattened kernels in each head.

    Returns (pairwise, with_pos, degenerate): pairwise is a list of
    (bases x bases) matrices, with_pos a list of length-bases vectors of
    correlation against the position kernel (zeros when the position
    kernel is disabled), degenerate a list of flags marking heads that
    contained a zero-variance kernel (those correlations are defined as 0).
    """
    pairwise, with_pos, degenerate = [], [], []
    for h in range(bank.num_heads):
        kernels = [bank.base[h, i].ravel().astype(np.float64)
                   for i in range(bank.num_bases)]
        pos = bank.pos[h].ravel().astype(np.float64)
        centered = [k - k.mean() for k in kernels]
        norms = [np.sqrt((c * c).sum()) for c in centered]
        pc = pos - pos.mean()
        pn = np.sqrt((pc * pc).sum())
        flag = any(n == 0.0 for n in norms) or (bank.pos_enabled and pn == 0.0)
        b = bank.num_bases
        mat = np.zeros((b, b))
        for i in range(b):
            for j in range(b):
                if norms[i] > 0 and norms[j] > 0:
                    mat[i, j] = float(centered[i] @ centered[j]
                                      / (norms[i] * norms[j]))
                elif i == j and norms[i] > 0:
                    mat[i, j] = 1.0
        vec = np.zeros(b)
        if bank.pos_enabled and pn > 0:
            for i in range(b):
                if norms[i] > 0:
                    vec[i] = float(centered[i] @ pc / (norms[i] * pn))
        pairwise.append(mat)
        with_pos.append(vec)
        degenerate.append(flag)
    return pairwise, with_pos, degenerate


def write_pgm(path, grid):
    """8-bit binary PGM, row-major, values scaled from [0, 1]."""
    arr = np.clip(np.round(np.asarray(grid) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ConfigurationError(f"{path}: not a binary PGM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / maxval


def write_spectrum_csv(path, grid):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(grid):
            writer.writerow([f"{v:.12g}" for v in row])


def read_spectrum_csv(path):
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


def export_spectra(model, out_dir, grid=64):
    """One CSV and one PGM per depthwise kernel head in the model.

    Returns the list of paths written.  Deterministic: rerunning produces
    byte-identical files.
    """
    kernels = model.dw_kernels()
    if not kernels:
        raise ConfigurationError(
            "model has no depthwise or downsampling kernels to export")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, kernel in kernels:
        mag, _ = spectrum(kernel, grid)
        stem = name.replace(".", "_")
        csv_path = os.path.join(out_dir, stem + ".csv")
        pgm_path = os.path.join(out_dir, stem + ".pgm")
        write_spectrum_csv(csv_path, mag)
        write_pgm(pgm_path, mag)
        written.extend([csv_path, pgm_path])
    return written
