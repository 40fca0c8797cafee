"""Config parsing/merging and the command-line front end."""

import os
import re

import numpy as np
import pytest

from cadanet import config as cfgmod
from cadanet.cli import main
from cadanet.errors import ConfigurationError

from conftest import tiny_model

TINY_CFG = """\
# small end-to-end exercise config
backbone.variant = d
backbone.num_classes = 3
backbone.input_hw = 32x32
stage1.width = 8
stage2.width = 8
stage3.width = 8
stage4.width = 8
stage1.blocks = 1
stage2.blocks = 1
stage3.blocks = 1
stage4.blocks = 1
stage1.filter = {filter}
stage2.filter = {filter}
stage3.filter = {filter}
stage4.filter = {filter}
stage1.bases = 2
stage2.bases = 2
stage3.bases = 2
stage4.bases = 2
stage1.head_channels = 4
stage2.head_channels = 4
stage3.head_channels = 4
stage4.head_channels = 4
stage1.agg_kernel = 3
stage2.agg_kernel = 3
stage3.agg_kernel = 3
stage4.agg_kernel = 3
train.epochs = {epochs}
train.batch_size = 8
train.seed = 0
data.kind = synthetic
data.classes = 3
data.train_samples = 16
data.val_samples = 8
data.image_hw = 32
out.dir = {out}
"""


def write_cfg(tmp_path, filter="cada", epochs=0, name="exp.cfg", out=None):
    out = out or str(tmp_path / "run")
    path = tmp_path / name
    path.write_text(TINY_CFG.format(filter=filter, epochs=epochs, out=out))
    return str(path), out


class TestParseFile:
    def test_values_and_comments(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("# preamble\n\ntrain.epochs = 3  # trailing\n"
                        "backbone.variant=b\n")
        values, linenos = cfgmod.parse_file(path)
        assert values == {"train.epochs": "3", "backbone.variant": "b"}
        assert linenos == {"train.epochs": 3, "backbone.variant": 4}

    def test_unknown_key_reports_line(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("\ntrain.eproch = 3\n")
        with pytest.raises(ConfigurationError, match=r"a\.cfg:2.*eproch"):
            cfgmod.parse_file(path)

    def test_duplicate_key_reports_both_lines(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("train.epochs = 3\ntrain.epochs = 4\n")
        with pytest.raises(ConfigurationError,
                           match=r"a\.cfg:2.*duplicate.*line 1"):
            cfgmod.parse_file(path)

    def test_missing_equals(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("train.epochs 3\n")
        with pytest.raises(ConfigurationError, match=r"a\.cfg:1"):
            cfgmod.parse_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="cannot read"):
            cfgmod.parse_file(tmp_path / "nope.cfg")


class TestParseValues:
    def test_malformed_int_names_location(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("train.epochs = three\n")
        with pytest.raises(ConfigurationError, match=r"a\.cfg:1"):
            cfgmod.resolve(str(path))

    def test_enum_violation_lists_choices(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("backbone.variant = q\n")
        with pytest.raises(ConfigurationError, match="variant"):
            cfgmod.resolve(str(path))

    def test_bad_hw(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("backbone.input_hw = 32x\n")
        with pytest.raises(ConfigurationError, match="input_hw"):
            cfgmod.resolve(str(path))
        path.write_text("backbone.input_hw = 24\n")
        assert cfgmod.resolve(str(path)).backbone.input_hw == (24, 24)

    def test_bool_values(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("train.hflip = true\ntrain.bn_weight_decay=false\n")
        exp = cfgmod.resolve(str(path))
        assert exp.train.hflip is True
        assert exp.train.bn_weight_decay is False
        path.write_text("train.hflip = yes\n")
        with pytest.raises(ConfigurationError):
            cfgmod.resolve(str(path))

    def test_override_validation(self):
        with pytest.raises(ConfigurationError, match="key=value"):
            cfgmod.parse_overrides(["train.epochs"])
        with pytest.raises(ConfigurationError):
            cfgmod.parse_overrides(["nosuch.key=1"])


class TestResolve:
    def test_defaults_without_file(self):
        exp = cfgmod.resolve()
        assert exp.train.epochs == 5
        assert exp.backbone.stages[0].width == 16
        assert exp.data["kind"] == "synthetic"

    def test_precedence_chain(self, tmp_path):
        path, _ = write_cfg(tmp_path, epochs=7)
        exp = cfgmod.resolve(path)
        assert exp.train.epochs == 7                     # file beats default
        exp = cfgmod.resolve(path, overrides=["train.epochs=9"])
        assert exp.train.epochs == 9                     # override beats file
        exp = cfgmod.resolve(path, overrides=["train.seed=5"], seed=11)
        assert exp.seed == 11                            # flag beats override
        exp = cfgmod.resolve(path, out_dir=str(tmp_path / "elsewhere"))
        assert exp.out_dir == str(tmp_path / "elsewhere")

    def test_head_channels_all_expands_to_width(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("stage1.width = 24\nstage1.head_channels = all\n"
                        "stage2.head_channels = 8\n")
        exp = cfgmod.resolve(str(path))
        assert exp.backbone.stages[0].head_channels == 24
        assert exp.backbone.stages[1].head_channels == 8
        assert exp.keys["stage1.head_channels"] == "all"
        assert exp.keys["stage2.head_channels"] == "8"

    def test_canonical_text_key_order_invariant(self, tmp_path):
        a = tmp_path / "a.cfg"
        b = tmp_path / "b.cfg"
        a.write_text("train.epochs = 2\nstage1.width = 8\n")
        b.write_text("stage1.width = 8\ntrain.epochs = 2\n")
        assert cfgmod.resolve(str(a)).canonical() == \
            cfgmod.resolve(str(b)).canonical()

    def test_resolved_roundtrip(self, tmp_path):
        path, _ = write_cfg(tmp_path, epochs=3)
        exp = cfgmod.resolve(path, overrides=["train.base_lr=0.02"])
        exp.write_resolved(str(tmp_path))
        again = cfgmod.resolve(str(tmp_path / "resolved.cfg"))
        assert again.keys == exp.keys
        assert again.canonical() == exp.canonical()
        assert again.train.base_lr == 0.02

    def test_cifar_requires_paths(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("data.kind = cifar\n")
        with pytest.raises(ConfigurationError, match="cifar"):
            cfgmod.resolve(str(path))

    def test_load_dataset_pair_synthetic(self, tmp_path):
        path, _ = write_cfg(tmp_path)
        exp = cfgmod.resolve(path)
        train_set, val_set = cfgmod.load_dataset_pair(exp)
        assert len(train_set) == 16 and len(val_set) == 8
        assert train_set.images.shape[2:] == (32, 32)


class TestFindConfig:
    PRESETS = [
        "resnet50-d-conv3x3", "resnet50-d-dw7-nohead", "resnet50-d-cada-b4",
        "resnet50-d-cada-b8-16-32-64", "resnet50-d-cadasp-g9-b128",
        "resnet50-original", "resnet50-b", "toy-cadasp-synthetic",
    ]

    def test_all_presets_ship_and_resolve(self):
        for name in self.PRESETS:
            path = cfgmod.find_config(name)
            assert os.path.exists(path)
            cfgmod.resolve(path)          # must parse and validate

    def test_real_path_wins(self, tmp_path):
        path, _ = write_cfg(tmp_path, name="resnet50-b.cfg")
        assert cfgmod.find_config(path) == path

    def test_unknown_name(self):
        with pytest.raises(ConfigurationError):
            cfgmod.find_config("resnet51-z")


class TestCliExitCodes:
    def test_profile_preset_ok(self, capsys):
        assert main(["profile", "--config", "resnet50-b"]) == 0
        out = capsys.readouterr().out.split("\n")
        assert re.fullmatch(r"params=\d+ flops=\d\.\d{6}e\+\d{2}", out[0])
        assert out[1] == "seed=0"

    def test_bad_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "a.cfg"
        path.write_text("train.epochs = -3\n")
        assert main(["profile", "--config", str(path)]) == 2
        err = capsys.readouterr().err.strip().split("\n")
        assert len(err) == 1 and err[0].startswith("error: ")

    def test_bad_override_exits_2(self, capsys):
        assert main(["profile", "--config", "resnet50-b",
                     "stage1.filter=magic"]) == 2
        assert capsys.readouterr().err.startswith("error: ")

    def test_missing_config_exits_2(self, capsys):
        assert main(["profile", "--config", "no-such-preset"]) == 2
        capsys.readouterr()

    def test_eval_without_ckpt_exits_2(self, capsys):
        assert main(["eval", "--config", "toy-cadasp-synthetic"]) == 2
        assert "ckpt" in capsys.readouterr().err

    def test_version_mismatch_exits_3(self, tmp_path, capsys):
        from cadanet.backbone import save_checkpoint
        ckpt = tmp_path / "m.ckpt"
        save_checkpoint(tiny_model(dtype=np.float32), str(ckpt))
        blob = bytearray(ckpt.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")      # u32 version field
        ckpt.write_bytes(bytes(blob))
        cfg, _ = write_cfg(tmp_path)
        assert main(["eval", "--config", cfg, "--ckpt", str(ckpt)]) == 3
        assert "version" in capsys.readouterr().err

    def test_corrupt_ckpt_exits_1(self, tmp_path, capsys):
        ckpt = tmp_path / "m.ckpt"
        ckpt.write_bytes(b"CADA" + b"\x01\x00\x00\x00" + b"\x00" * 3)
        cfg, _ = write_cfg(tmp_path)
        assert main(["eval", "--config", cfg, "--ckpt", str(ckpt)]) == 1
        assert capsys.readouterr().err.startswith("error: ")


class TestCliWorkflows:
    def test_train_epochs_zero_artifacts(self, tmp_path, capsys):
        cfg, out = write_cfg(tmp_path, epochs=0)
        assert main(["train", "--config", cfg]) == 0
        stdout = capsys.readouterr().out
        assert "seed=0" in stdout
        assert os.path.exists(os.path.join(out, "resolved.cfg"))
        assert os.path.exists(os.path.join(out, "checkpoint_ep000.ckpt"))
        assert os.path.exists(os.path.join(out, "metrics.csv"))

    def test_train_then_eval(self, tmp_path, capsys):
        cfg, out = write_cfg(tmp_path, epochs=1)
        assert main(["train", "--config", cfg]) == 0
        ckpt = os.path.join(out, "checkpoint_ep001.ckpt")
        assert os.path.exists(ckpt)
        capsys.readouterr()
        assert main(["eval", "--config", cfg, "--ckpt", ckpt]) == 0
        stdout = capsys.readouterr().out
        assert re.search(r"val_top1=\d\.\d{4}", stdout)

    def test_profile_out_idempotent(self, tmp_path, capsys):
        cfg, out = write_cfg(tmp_path)
        for _ in range(2):
            assert main(["profile", "--config", cfg, "--out", out]) == 0
            capsys.readouterr()
            first = open(os.path.join(out, "profile.csv"), "rb").read()
            resolved = open(os.path.join(out, "resolved.cfg"), "rb").read()
        assert open(os.path.join(out, "profile.csv"), "rb").read() == first
        assert open(os.path.join(out, "resolved.cfg"), "rb").read() == resolved

    def test_profile_seed_flag_recorded(self, tmp_path, capsys):
        cfg, out = write_cfg(tmp_path)
        assert main(["profile", "--config", cfg, "--seed", "7",
                     "--out", out]) == 0
        assert "seed=7" in capsys.readouterr().out
        resolved = open(os.path.join(out, "resolved.cfg")).read()
        assert "train.seed = 7" in resolved

    def test_prune_cli(self, tmp_path, capsys):
        cfg, out = write_cfg(tmp_path)
        assert main(["prune", "--config", cfg, "--tolerance", "1.0"]) == 0
        stdout = capsys.readouterr().out
        assert "removed=" in stdout
        assert os.path.exists(os.path.join(out, "prune.csv"))

    def test_spectra_cli(self, tmp_path, capsys):
        cfg, out = write_cfg(tmp_path, filter="dwconv")
        assert main(["spectra", "--config", cfg,
                     "spectra.grid=16"]) == 0
        stdout = capsys.readouterr().out
        match = re.search(r"wrote (\d+) spectrum files", stdout)
        assert match and int(match.group(1)) > 0
        names = os.listdir(out)
        assert any(n.endswith(".pgm") for n in names)
        assert any(n.endswith(".csv") for n in names)
        assert "resolved.cfg" in names
