import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from fedtsgan import accounting, cli, data

TINY_TRAIN = """
topology = vfl
latent_dim = 3
batch_size = 4
max_iters = 3
checkpoint_every = 2
eval_samples = 8
seed = 11
gen_hidden = 6,5
disc_hidden = 6,4
fe_hidden = 5
feature_dim = 4
shared_hidden = 6
"""


def write_config(tmp_path, name="exp.ini", dataset_extra="", train_extra="", sections=""):
    out = (tmp_path / "run").as_posix()
    text = f"""
[dataset]
kind = sine2
n_per_class = 8
t_steps = 10
seed = 5
{dataset_extra}

[partition]
party_0 = 0
party_1 = 1

[train]
{TINY_TRAIN}
{train_extra}

[output]
dir = {out}
{sections}
"""
    path = tmp_path / name
    path.write_text(text)
    return path, Path(out)


class TestGenData:
    def test_writes_files_and_sample_count(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path)
        assert cli.main(["gen-data", "--config", str(cfg)]) == 0
        assert (out / "data.csv").exists()
        meta = json.loads((out / "data.meta.json").read_text())
        assert meta["n_samples"] == 16
        assert meta["frequencies"] == [0.01, 0.005]

    def test_rerun_byte_identical(self, tmp_path):
        cfg, out = write_config(tmp_path)
        cli.main(["gen-data", "--config", str(cfg)])
        first = (out / "data.csv").read_bytes()
        first_meta = (out / "data.meta.json").read_bytes()
        cli.main(["gen-data", "--config", str(cfg)])
        assert (out / "data.csv").read_bytes() == first
        assert (out / "data.meta.json").read_bytes() == first_meta

    def test_invalid_kind_is_config_error(self, tmp_path, capsys):
        cfg, _ = write_config(tmp_path)
        cfg.write_text(cfg.read_text().replace("kind = sine2", "kind = mystery"))
        assert cli.main(["gen-data", "--config", str(cfg)]) == 2

    def test_default_sample_count_matches_construction(self, tmp_path):
        cfg, out = write_config(tmp_path)
        cfg.write_text(cfg.read_text().replace("n_per_class = 8", "n_per_class = 1024").replace("t_steps = 10", "t_steps = 16"))
        cli.main(["gen-data", "--config", str(cfg)])
        meta = json.loads((out / "data.meta.json").read_text())
        assert meta["n_samples"] == 2048


class TestTrain:
    def test_outputs_and_manifest(self, tmp_path):
        cfg, out = write_config(tmp_path)
        assert cli.main(["train", "--config", str(cfg)]) == 0
        assert (out / "history.csv").exists()
        assert (out / "best_generators.npz").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["topology"] == "vfl"
        assert manifest["train_seed"] == 11

    def test_same_seed_identical_history(self, tmp_path):
        cfg, out = write_config(tmp_path)
        cli.main(["train", "--config", str(cfg)])
        first = (out / "history.csv").read_bytes()
        cli.main(["train", "--config", str(cfg)])
        assert (out / "history.csv").read_bytes() == first

    def test_local_only_logs_no_messages(self, tmp_path):
        cfg, out = write_config(tmp_path)
        from fedtsgan.config import parse_config

        parsed = parse_config(cfg)
        parsed.train.topology = "local_only"
        parsed.train.log_payloads = True
        result, _ = cli.run_training(parsed)
        assert result.state.log.records == []

    def test_budget_mode_records_achieved_epsilon(self, tmp_path):
        cfg, out = write_config(
            tmp_path,
            sections="\n[dp]\nclip = 1.0\nepsilon = 10\ndelta = 1e-3\n",
        )
        assert cli.main(["train", "--config", str(cfg)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        cal = manifest["calibration"]
        assert cal["achieved_epsilon"] <= 10.0
        assert cal["gamma"] == 4 / 16
        redone, _ = accounting.spent_epsilon(cal["sigma"], cal["gamma"], 3, 1e-3)
        assert redone == pytest.approx(cal["achieved_epsilon"], rel=1e-12)

    def test_explicit_sigma_mode(self, tmp_path):
        cfg, out = write_config(tmp_path, sections="\n[dp]\nclip = 1.0\nsigma = 2.0\n")
        assert cli.main(["train", "--config", str(cfg)]) == 0

    def test_dp_section_needs_exactly_one_mode(self, tmp_path):
        cfg, _ = write_config(
            tmp_path, sections="\n[dp]\nclip = 1.0\nsigma = 2.0\nepsilon = 10\ndelta = 1e-3\n"
        )
        assert cli.main(["train", "--config", str(cfg)]) == 2

    def test_missing_seed_rejected(self, tmp_path):
        cfg, _ = write_config(tmp_path)
        cfg.write_text(cfg.read_text().replace("seed = 11", ""))
        assert cli.main(["train", "--config", str(cfg)]) == 2


class TestEvaluate:
    def test_identity_control_zeroes(self, tmp_path, capsys):
        cfg, out = write_config(
            tmp_path,
            sections="\n[eval]\ncontrol = identity\nmetrics = awd,amplitude_awd\ntask = forecast\nseed = 1\n",
        )
        assert cli.main(["evaluate", "--config", str(cfg)]) == 0
        report = json.loads((out / "evaluation.json").read_text())
        assert report["metrics"]["awd"] == 0.0
        assert report["metrics"]["amplitude_awd"] == 0.0
        assert report["metrics"]["tpd"] == 0.0
        assert (out / "awd_cells.csv").exists()

    def test_checkpoint_round_trip(self, tmp_path):
        cfg, out = write_config(
            tmp_path,
            sections="\n[eval]\nmetrics = awd,mae,pca\nseed = 2\nsynth_samples = 8\n",
        )
        cli.main(["train", "--config", str(cfg)])
        rc = cli.main(
            ["evaluate", "--config", str(cfg), "--checkpoint", str(out / "best_generators.npz")]
        )
        assert rc == 0
        report = json.loads((out / "evaluation.json").read_text())
        assert set(report["metrics"]) >= {"awd", "mae", "pca_explained_ratio"}
        assert (out / "pca_coords.csv").exists()

    def test_missing_checkpoint_is_config_error(self, tmp_path):
        cfg, _ = write_config(tmp_path, sections="\n[eval]\nmetrics = awd\n")
        assert cli.main(["evaluate", "--config", str(cfg)]) == 2


class TestAudit:
    def test_outlier_selector_echoed_on_toy_set(self, tmp_path):
        # toy scalar series {0, 0.1, 5}: the isolated sample is index 2
        arr = np.repeat(np.array([0.0, 0.1, 5.0])[:, None, None], 6, axis=2)
        toy = data.TimeSeriesDataset(arr)
        data.save_csv(toy, tmp_path / "toy.csv")
        data.save_sidecar(toy, tmp_path / "toy.meta.json")
        out = (tmp_path / "auditrun").as_posix()
        cfg = tmp_path / "audit.ini"
        cfg.write_text(
            f"""
[dataset]
kind = csv
path = {tmp_path / 'toy.csv'}
sidecar = {tmp_path / 'toy.meta.json'}

[partition]
party_0 = 0

[train]
topology = local_only
latent_dim = 2
batch_size = 2
max_iters = 1
checkpoint_every = 1
eval_samples = 2
seed = 3
gen_hidden = 4
disc_hidden = 4

[audit]
selector = outlier
shadow_pairs = 2
knn_k = 1
seed = 4
synth_samples = 4

[output]
dir = {out}
"""
        )
        assert cli.main(["audit", "--config", str(cfg)]) == 0
        report = json.loads((Path(out) / "audit.json").read_text())
        assert report["target_index"] == 2
        assert 0.0 <= report["auc"] <= 1.0
        rows = list(csv.DictReader(open(Path(out) / "audit_features.csv")))
        assert len(rows) == 4


class TestAccount:
    def test_table_and_final_values(self, tmp_path, capsys):
        rc = cli.main(
            ["account", "--sigma", "1", "--gamma", "0.01", "--steps", "1", "--delta", "1e-5"]
        )
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        header = lines[0].split(",")
        assert header == ["alpha", "eps_discriminator", "eps_generator"]
        first = lines[1].split(",")
        assert int(first[0]) == 2
        # alpha=2 row of the discriminator curve: the frozen oracle value
        assert float(first[1]) == pytest.approx(5.4350863810943e-4, rel=1e-9)
        finals = {l.split(",")[0]: float(l.split(",")[1]) for l in lines if l.startswith("final_")}
        assert finals["final_external_discriminator"] <= finals["final_internal_discriminator"]

    def test_calibrate_round_trip(self, capsys):
        rc = cli.main(
            ["calibrate", "--epsilon", "10", "--delta", "1e-3", "--gamma", "0.05", "--steps", "2000"]
        )
        assert rc == 0
        outmap = dict(l.split(",") for l in capsys.readouterr().out.strip().splitlines())
        sigma, achieved = float(outmap["sigma"]), float(outmap["achieved_epsilon"])
        want_sigma, _, want_eps = accounting.calibrate(10.0, 1e-3, 0.05, 2000)
        assert sigma == pytest.approx(want_sigma)
        assert achieved == pytest.approx(want_eps, rel=1e-9)
        assert achieved <= 10.0

    def test_infeasible_budget_exit_code(self, capsys):
        rc = cli.main(
            ["calibrate", "--epsilon", "1e-6", "--delta", "1e-3", "--gamma", "0.5", "--steps", "100000"]
        )
        assert rc == 4


class TestOutputRoot:
    def test_env_var_reroots_relative_dirs(self, tmp_path, monkeypatch):
        cfg, _ = write_config(tmp_path)
        cfg.write_text(cfg.read_text().replace(f"dir = {tmp_path / 'run'}", "dir = rel/run"))
        root = tmp_path / "elsewhere"
        monkeypatch.setenv("FEDTSGAN_OUTPUT_ROOT", str(root))
        cli.main(["gen-data", "--config", str(cfg)])
        assert (root / "rel" / "run" / "data.csv").exists()


class TestPipelineDeterminism:
    def test_manifest_history_reports_bit_exact(self, tmp_path):
        cfg, out = write_config(
            tmp_path,
            sections="\n[eval]\ncontrol = identity\nmetrics = awd\nseed = 1\n",
        )
        files = ["history.csv", "manifest.json", "evaluation.json", "best_generators.npz"]
        snapshots = []
        for _ in range(2):
            cli.main(["train", "--config", str(cfg)])
            cli.main(["evaluate", "--config", str(cfg)])
            snapshots.append({f: (out / f).read_bytes() for f in files})
        assert snapshots[0] == snapshots[1]
