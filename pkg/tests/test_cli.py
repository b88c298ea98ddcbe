import json

import numpy as np
import pytest

from greedyflow.cli import main, parse_grid
from greedyflow.config import ConfigError, apply_overrides, parse_config
from greedyflow.metrics import read_jsonl


def write_config(path, **updates):
    doc = {
        "env": {"variant": "prepend_append_bits", "max_len": 3,
                "references": ["011"], "mode_edit_threshold": 1, "beta": 1.0},
        "model": {"hidden": [8]},
        "train": {"iterations": 4, "batch_size": 8, "variant": "p_greedy",
                  "p": 0.3, "seed": 0},
        "output": {"dir": str(path.parent / "run")},
    }
    for dotted, value in updates.items():
        node = doc
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    path.write_text(json.dumps(doc))
    return doc


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        doc = write_config(tmp_path / "c.json")
        doc["train"]["bogus"] = 1
        with pytest.raises(ConfigError, match="bogus"):
            parse_config(doc)

    def test_unknown_top_level_block_rejected(self, tmp_path):
        doc = write_config(tmp_path / "c.json")
        doc["extra"] = {}
        with pytest.raises(ConfigError, match="extra"):
            parse_config(doc)

    def test_defaults_fill_in(self):
        rc = parse_config({"env": {"variant": "two_doors"}})
        assert rc.hidden == (64, 64)
        assert rc.train.iterations == 2000
        assert rc.train.variant.kind == "pure_pf"
        assert rc.out_dir == "runs/two_doors"

    def test_default_schedule_depends_on_variant(self):
        rc = parse_config({"env": {"variant": "two_doors"},
                           "train": {"variant": "p_of_max", "p": 0.9}})
        assert rc.train.p_schedule.kind == "cosine"
        assert rc.train.p_schedule.total_steps == 1500
        rc = parse_config({"env": {"variant": "two_doors"},
                           "train": {"variant": "p_greedy", "p": 0.4}})
        assert rc.train.p_schedule.kind == "constant"
        assert rc.train.p_schedule.final_p == 0.4

    def test_variant_name_normalisation(self):
        rc = parse_config({"env": {"variant": "two_doors"},
                           "train": {"variant": "pgreedy"}})
        assert rc.train.variant.kind == "p_greedy"

    def test_override_parsing(self):
        doc = {"env": {"variant": "two_doors"}}
        out = apply_overrides(doc, ["train.seed=7", "train.q.tau=0.5",
                                    "env.beta=2.0", "output.dir=\"elsewhere\""])
        assert out["train"]["seed"] == 7
        assert out["train"]["q"]["tau"] == 0.5
        assert out["env"]["beta"] == 2.0
        assert out["output"]["dir"] == "elsewhere"
        assert doc == {"env": {"variant": "two_doors"}}  # original untouched

    def test_malformed_override_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["no_equals_sign"])


class TestTrainCommand:
    def test_missing_config_nonzero(self, capsys):
        rc = main(["train", "--config", "/nonexistent/cfg.json"])
        assert rc != 0
        assert "not found" in capsys.readouterr().err

    def test_metrics_has_one_record_per_iteration(self, tmp_path):
        cfg = tmp_path / "c.json"
        write_config(cfg)
        assert main(["train", "--config", str(cfg)]) == 0
        lines = read_jsonl(tmp_path / "run" / "metrics.jsonl")
        assert len(lines) == 4

    def test_set_override_equals_editing_file(self, tmp_path):
        cfg_a = tmp_path / "a.json"
        write_config(cfg_a, **{"output.dir": str(tmp_path / "out_a")})
        assert main(["train", "--config", str(cfg_a), "--set", "train.seed=7"]) == 0

        cfg_b = tmp_path / "b.json"
        write_config(cfg_b, **{"train.seed": 7, "output.dir": str(tmp_path / "out_b")})
        assert main(["train", "--config", str(cfg_b)]) == 0

        a = (tmp_path / "out_a" / "metrics.jsonl").read_bytes()
        b = (tmp_path / "out_b" / "metrics.jsonl").read_bytes()
        assert a == b

    def test_invalid_schema_nonzero(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        doc = write_config(cfg)
        doc["train"]["mystery"] = True
        cfg.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg)]) != 0
        assert "mystery" in capsys.readouterr().err


class TestSweepCommand:
    def test_grid_parsing(self):
        cells = parse_grid("pgreedy:0:1:6")
        assert [round(p, 3) for _, p in cells] == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        assert all(v.kind == "p_greedy" for v, _ in cells)
        cells = parse_grid("pofmax:0.9:1:5")
        assert [round(p, 4) for _, p in cells] == [0.9, 0.925, 0.95, 0.975, 1.0]

    def test_malformed_grid(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        write_config(cfg)
        main(["train", "--config", str(cfg)])
        ck = tmp_path / "run" / "checkpoint.json"
        assert main(["sweep", "--checkpoint", str(ck), "--grid", "nope"]) != 0
        assert "grid" in capsys.readouterr().err

    def test_two_grids_concatenate(self, tmp_path):
        cfg = tmp_path / "c.json"
        write_config(cfg)
        main(["train", "--config", str(cfg)])
        ck = tmp_path / "run" / "checkpoint.json"
        rc = main(["sweep", "--checkpoint", str(ck),
                   "--grid", "pgreedy:0:1:3", "--grid", "pofmax:0.9:1:2",
                   "--samples", "8", "--top-k", "8"])
        assert rc == 0
        doc = json.loads((tmp_path / "run" / "sweep.json").read_text())
        assert doc["schema_version"] == 1
        assert len(doc["rows"]) == 5
        kinds = [r["variant"] for r in doc["rows"]]
        assert kinds == ["p_greedy"] * 3 + ["p_of_max"] * 2

    def test_missing_checkpoint(self, capsys):
        assert main(["sweep", "--checkpoint", "/nope.json", "--grid", "pgreedy:0:1:2"]) != 0


class TestProbeCommand:
    @pytest.fixture()
    def checkpoint(self, tmp_path):
        cfg = tmp_path / "c.json"
        write_config(cfg)
        main(["train", "--config", str(cfg)])
        return tmp_path / "run" / "checkpoint.json"

    def test_unknown_probe_lists_valid_names(self, checkpoint, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["probe", "nonsense", "--checkpoint", str(checkpoint)])
        assert exc.value.code != 0
        err = capsys.readouterr().err
        assert "calibration" in err and "pruned" in err and "changed-p" in err

    def test_calibration_record_count(self, checkpoint, tmp_path):
        rc = main(["probe", "calibration", "--checkpoint", str(checkpoint),
                   "--k", "5", "--rollouts", "8"])
        assert rc == 0
        doc = json.loads((tmp_path / "run" / "calibration.json").read_text())
        assert len(doc["records"]) == 5
        assert {"q_pred", "q_hat", "stderr"} <= set(doc["records"][0])

    def test_pruned_emits_four_regimes(self, checkpoint, tmp_path):
        rc = main(["probe", "pruned", "--checkpoint", str(checkpoint),
                   "--samples", "6", "--p", "0.9"])
        assert rc == 0
        doc = json.loads((tmp_path / "run" / "pruned.json").read_text())
        assert set(doc["rewards"]) == {"normal", "best_pruned", "best_actions", "pure_pf"}
        assert all(len(v) == 6 for v in doc["rewards"].values())

    def test_changed_p_grid(self, checkpoint, tmp_path):
        rc = main(["probe", "changed-p", "--checkpoint", str(checkpoint),
                   "--k", "4", "--rollouts", "8", "--p-grid", "0,0.3,1.0"])
        assert rc == 0
        doc = json.loads((tmp_path / "run" / "changed_p.json").read_text())
        assert [r["p_prime"] for r in doc["rows"]] == [0.0, 0.3, 1.0]
        assert all("lower_bound_rate" in r for r in doc["rows"])


class TestOracleCheckCommand:
    def test_two_doors_reports_flow_values(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"env": {"variant": "two_doors"}}))
        rc = main(["oracle-check", "--config", str(cfg), "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "F(left) = 100" in out
        assert "Q(root, right) = 100" in out
        report = json.loads((tmp_path / "oracle_check.json").read_text())
        assert all(c["passed"] for c in report["checks"])

    def test_three_bit_env_passes(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "env": {"variant": "prepend_append_bits", "max_len": 3,
                    "references": ["011"], "mode_edit_threshold": 1},
        }))
        assert main(["oracle-check", "--config", str(cfg)]) == 0

    def test_cap_exceeded_graceful(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"env": {"variant": "prepend_append_bits"}}))
        rc = main(["oracle-check", "--config", str(cfg), "--cap", "5"])
        assert rc != 0
        assert "cap" in capsys.readouterr().err


class TestReportCommand:
    def test_renders_figures_and_csv(self, tmp_path):
        cfg = tmp_path / "c.json"
        write_config(cfg)
        main(["train", "--config", str(cfg)])
        ck = tmp_path / "run" / "checkpoint.json"
        main(["sweep", "--checkpoint", str(ck), "--grid", "pgreedy:0:1:3",
              "--samples", "8", "--top-k", "8"])
        main(["probe", "calibration", "--checkpoint", str(ck), "--k", "4", "--rollouts", "8"])
        main(["probe", "pruned", "--checkpoint", str(ck), "--samples", "4", "--p", "0.9"])
        rc = main(["report", "--run", str(tmp_path / "run")])
        assert rc == 0
        report_dir = tmp_path / "run" / "report"
        for name in ("training_curves.png", "metrics.csv", "sweep_tradeoff.png",
                     "sweep.csv", "calibration_scatter.png", "calibration.csv",
                     "pruned_rewards.png", "pruned.csv"):
            assert (report_dir / name).exists(), name

    def test_empty_dir_fails(self, tmp_path, capsys):
        assert main(["report", "--run", str(tmp_path)]) != 0


class TestArtifactVersioning:
    def test_every_artifact_carries_schema_version(self, tmp_path):
        cfg = tmp_path / "c.json"
        write_config(cfg)
        main(["train", "--config", str(cfg)])
        run_dir = tmp_path / "run"
        ck = run_dir / "checkpoint.json"
        main(["sweep", "--checkpoint", str(ck), "--grid", "pgreedy:0:1:2",
              "--samples", "4", "--top-k", "4"])
        main(["probe", "calibration", "--checkpoint", str(ck), "--k", "3", "--rollouts", "4"])
        for name in ("checkpoint.json", "summary.json", "sweep.json", "calibration.json"):
            doc = json.loads((run_dir / name).read_text())
            assert doc["schema_version"] == 1, name
        for line in read_jsonl(run_dir / "metrics.jsonl"):
            assert line["schema_version"] == 1
