import numpy as np
import pytest

from nipolicy import cli, read_instance, textio
from nipolicy.instances import validate_instance


def run(argv):
    return cli.main(argv)


@pytest.fixture()
def tiny_setup(tmp_path):
    """Generated tiny instance + solved oracle, shared per test."""
    out = tmp_path / "work"
    code = run([
        "generate", "--arms", "4", "--states", "3", "--actions", "3",
        "--budget-frac", "0.3,0.25", "--seed", "11",
        "--output-dir", str(out), "-o", "inst.txt",
    ])
    assert code == 0
    code = run([
        "oracle", "--instance", str(out / "inst.txt"),
        "--output-dir", str(out), "-o", "occ.txt",
    ])
    assert code == 0
    return out


class TestGenerate:
    def test_writes_valid_instance(self, tmp_path, capsys):
        out = tmp_path / "gen"
        code = run([
            "generate", "--arms", "6", "--states", "3", "--actions", "3",
            "--budget-frac", "0.4,0.2", "--seed", "3",
            "--output-dir", str(out), "-o", "inst.txt",
        ])
        assert code == 0
        assert "budgets" in capsys.readouterr().out
        inst = read_instance(out / "inst.txt")
        assert validate_instance(inst) == []

    def test_same_seed_identical_bytes(self, tmp_path):
        args = ["generate", "--arms", "5", "--states", "3", "--actions", "3",
                "--budget-frac", "0.4,0.2", "--seed", "9"]
        run(args + ["--output-dir", str(tmp_path / "a"), "-o", "i.txt"])
        run(args + ["--output-dir", str(tmp_path / "b"), "-o", "i.txt"])
        assert (tmp_path / "a" / "i.txt").read_bytes() == (tmp_path / "b" / "i.txt").read_bytes()

    def test_missing_subcommand_usage_error(self):
        assert run([]) == cli.EXIT_USAGE

    def test_bad_fraction_usage_error(self, tmp_path):
        code = run([
            "generate", "--arms", "5", "--states", "3", "--actions", "3",
            "--budget-frac", "nope", "--seed", "1",
            "--output-dir", str(tmp_path), "-o", "i.txt",
        ])
        assert code == cli.EXIT_USAGE

    def test_invalid_dimensions_data_error(self, tmp_path):
        code = run([
            "generate", "--arms", "0", "--states", "3", "--actions", "3",
            "--budget-frac", "0.4,0.2", "--seed", "1",
            "--output-dir", str(tmp_path), "-o", "i.txt",
        ])
        assert code == cli.EXIT_DATA


class TestValidate:
    def test_valid_instance_exit_zero(self, tiny_setup):
        assert run(["validate", "--instance", str(tiny_setup / "inst.txt")]) == 0

    def test_corrupted_instance_exit_data(self, tiny_setup, tmp_path):
        doc = textio.read_document(tiny_setup / "inst.txt")
        doc["budgets"] = doc["budgets"] + 1
        entries = {k: v for k, v in doc.items() if k != "_kind"}
        bad = tmp_path / "bad.txt"
        textio.write_document(bad, "rmab-instance", entries)
        assert run(["validate", "--instance", str(bad)]) == cli.EXIT_DATA

    def test_missing_file_data_error(self):
        assert run(["validate", "--instance", "/nonexistent/x.txt"]) == cli.EXIT_DATA


class TestOracle:
    def test_prints_bound_and_writes_file(self, tiny_setup, capsys):
        # rerun to capture output
        code = run([
            "oracle", "--instance", str(tiny_setup / "inst.txt"),
            "--output-dir", str(tiny_setup), "-o", "occ2.txt",
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "upper bound" in out
        doc = textio.read_document(tiny_setup / "occ2.txt", expect_kind="occupancy-measure")
        assert "omega" in doc and "objective_value" in doc and "pi" in doc

    def test_missing_instance(self, tmp_path):
        code = run(["oracle", "--instance", str(tmp_path / "nope.txt"),
                    "--output-dir", str(tmp_path)])
        assert code == cli.EXIT_DATA


class TestTrainEvalCli:
    def test_train_eval_roundtrip(self, tiny_setup, capsys):
        code = run([
            "train", "--instance", str(tiny_setup / "inst.txt"),
            "--oracle", str(tiny_setup / "occ.txt"),
            "--loss", "kl", "--epsilon", "0.1", "--epochs", "5",
            "--batch", "2", "--lr", "0.002", "--seed", "4",
            "--output-dir", str(tiny_setup),
        ])
        assert code == 0
        log_text = (tiny_setup / "train_log.csv").read_text().splitlines()
        assert log_text[0] == "epoch,train_loss,val_loss,reward_gap_pct,seconds"
        assert len(log_text) == 6

        code = run([
            "eval", "--instance", str(tiny_setup / "inst.txt"),
            "--oracle", str(tiny_setup / "occ.txt"),
            "--checkpoint", str(tiny_setup / "checkpoint.txt"),
            "--batches", "2", "--horizon", "6", "--seed", "5",
            "--output-dir", str(tiny_setup),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "reward gap" in out
        summary = (tiny_setup / "eval_summary.csv").read_text().splitlines()
        assert summary[0].startswith("n_arms,")
        assert len(summary) == 2

    def test_epochs_zero_checkpoint_is_initialization(self, tiny_setup):
        code = run([
            "train", "--instance", str(tiny_setup / "inst.txt"),
            "--oracle", str(tiny_setup / "occ.txt"),
            "--epochs", "0", "--seed", "4", "--hidden", "8",
            "--output-dir", str(tiny_setup),
            "--checkpoint-out", "init_ckpt.txt",
        ])
        assert code == 0
        from nipolicy.network import load_checkpoint, initialize_network

        loaded, extra = load_checkpoint(tiny_setup / "init_ckpt.txt")
        inst = read_instance(tiny_setup / "inst.txt")
        fresh = initialize_network(inst.n_arms + inst.n_states, inst.n_actions,
                                   hidden=8, seed=4, momentum=0.9)
        np.testing.assert_array_equal(loaded.get_parameters(), fresh.get_parameters())

    def test_resume_reproduces_straight_run(self, tiny_setup):
        base = [
            "train", "--instance", str(tiny_setup / "inst.txt"),
            "--oracle", str(tiny_setup / "occ.txt"),
            "--epsilon", "0.1", "--batch", "2", "--lr", "0.002",
            "--seed", "6", "--hidden", "8",
        ]
        run(base + ["--epochs", "6", "--output-dir", str(tiny_setup / "full")])
        run(base + ["--epochs", "3", "--output-dir", str(tiny_setup / "half")])
        code = run(base + [
            "--epochs", "6", "--output-dir", str(tiny_setup / "resumed"),
            "--resume", str(tiny_setup / "half" / "checkpoint.txt"),
        ])
        assert code == 0
        full_log = (tiny_setup / "full" / "train_log.csv").read_text().splitlines()
        res_log = (tiny_setup / "resumed" / "train_log.csv").read_text().splitlines()
        # Resumed log holds epochs 3..5; losses must match the straight run
        # column-for-column (wall-clock differs).
        for line_r, line_f in zip(res_log[1:], full_log[4:]):
            assert line_r.split(",")[:4] == line_f.split(",")[:4]

    def test_kl_without_oracle_fails(self, tiny_setup):
        code = run([
            "train", "--instance", str(tiny_setup / "inst.txt"),
            "--loss", "kl", "--epochs", "1",
            "--output-dir", str(tiny_setup / "x"),
        ])
        assert code == cli.EXIT_DATA

    def test_checkpoint_instance_mismatch(self, tiny_setup, tmp_path):
        run([
            "generate", "--arms", "6", "--states", "3", "--actions", "3",
            "--budget-frac", "0.3,0.25", "--seed", "2",
            "--output-dir", str(tmp_path), "-o", "other.txt",
        ])
        run([
            "train", "--instance", str(tiny_setup / "inst.txt"),
            "--oracle", str(tiny_setup / "occ.txt"),
            "--epochs", "1", "--batch", "1", "--output-dir", str(tiny_setup),
        ])
        code = run([
            "eval", "--instance", str(tmp_path / "other.txt"),
            "--oracle", str(tiny_setup / "occ.txt"),
            "--checkpoint", str(tiny_setup / "checkpoint.txt"),
            "--batches", "1", "--horizon", "2",
            "--output-dir", str(tmp_path),
        ])
        assert code == cli.EXIT_DATA


class TestSweepCli:
    def test_two_by_one_grid(self, tmp_path, capsys):
        code = run([
            "sweep", "--arms-list", "3,4", "--epsilon-list", "0.1",
            "--seeds", "0", "--states", "2", "--actions", "2",
            "--budget-frac", "0.5", "--epochs", "2", "--batch", "1",
            "--lr", "0.002", "--eval-batches", "1", "--eval-horizon", "3",
            "--output-dir", str(tmp_path),
        ])
        assert code == 0
        summary = (tmp_path / "sweep_summary.csv").read_text().splitlines()
        assert len(summary) == 3      # header + 2 cells
        table = (tmp_path / "sweep_table.dat").read_text().splitlines()
        assert table[0].startswith("#")
        assert len(table) == 3


class TestGradcheckCli:
    def test_passes(self, capsys):
        assert run(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "all gradient checks passed" in out


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, tmp_path):
        cfg = tmp_path / "config.txt"
        textio.write_document(cfg, "run-config", {"arms": 5, "states": 3, "actions": 3,
                                                  "budget_frac": "0.4,0.2", "seed": 21,
                                                  "output": "from_config.txt"})
        code = run(["generate", "--config", str(cfg), "--output-dir", str(tmp_path),
                    "--seed", "22"])
        assert code == 0
        inst = read_instance(tmp_path / "from_config.txt")
        assert inst.n_arms == 5
        assert inst.seed == 22        # flag wins over config
