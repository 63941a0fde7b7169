"""End-to-end tests for the experiment driver and the command line."""

import math

import numpy as np
import pytest

from nslab.cli import build_parser, main
from nslab.experiment import (
    ConfigError,
    ExperimentConfig,
    build_scenario,
    parse_space,
    perturbation_datum,
    replay,
    run,
    space_token,
    stationary_datum,
)
from nslab.spaces import SpaceNorm
from nslab.spectral import CheckpointError, GridSpec, l2_norm

BOX = 32.0 * math.pi


def config_text(**overrides) -> str:
    values = {
        "L": repr(BOX),
        "N": 16,
        "scenario": "zero_V",
        "space": "WeightedLinfty",
        "amplitude": 1.0,
        "seed": 7,
        "t_max": 0.5,
        "dt": 0.02,
        "hardy_trials": 4,
        "output_dir": "/tmp/unused",
        "checkpoint_every": 0,
    }
    values.update(overrides)
    return "\n".join(f"{k} = {v}" for k, v in values.items()) + "\n"


def make_config(tmp_path, **overrides) -> ExperimentConfig:
    overrides.setdefault("output_dir", str(tmp_path / "out"))
    return ExperimentConfig.from_text(config_text(**overrides))


class TestParseSpace:
    def test_plain_tags(self):
        assert parse_space("WeightedLinfty") == SpaceNorm("WeightedLinfty")
        assert parse_space(" Lebesgue3 ") == SpaceNorm("Lebesgue3")

    def test_morrey_with_exponent(self):
        space = parse_space("Morrey3p:2.5")
        assert space.tag == "Morrey3p"
        assert space.p == 2.5

    def test_unknown_tag_is_config_error(self):
        with pytest.raises(ConfigError):
            parse_space("NotASpace")

    def test_token_round_trip(self):
        for token in ("WeightedLinfty", "Lebesgue3", "Morrey3p:2.5"):
            assert space_token(parse_space(token)) == token


class TestExperimentConfig:
    def test_text_round_trip(self, tmp_path):
        cfg = make_config(tmp_path, alpha=2.5, checkpoint_every=5)
        again = ExperimentConfig.from_text(cfg.to_text())
        assert again == cfg

    def test_defaults_applied(self, tmp_path):
        text = config_text(output_dir=str(tmp_path))
        cfg = ExperimentConfig.from_text(text)
        assert cfg.dealias == pytest.approx(2.0 / 3.0)
        assert cfg.alpha == 3.0

    def test_comments_and_blanks_ignored(self, tmp_path):
        text = "# a comment\n\n" + config_text(output_dir=str(tmp_path))
        assert ExperimentConfig.from_text(text).N == 16

    def test_unknown_key_reports_line(self):
        text = config_text() + "bogus = 1\n"
        lineno = len(text.splitlines())
        with pytest.raises(ConfigError, match=f"line {lineno}: unknown key 'bogus'"):
            ExperimentConfig.from_text(text)

    def test_duplicate_key_reports_line(self):
        text = config_text() + "N = 8\n"
        lineno = len(text.splitlines())
        with pytest.raises(ConfigError, match=f"line {lineno}: duplicate key 'N'"):
            ExperimentConfig.from_text(text)

    def test_bad_type_reports_expectation(self):
        with pytest.raises(ConfigError, match="key 'N' expects int"):
            ExperimentConfig.from_text(config_text(N="many"))

    def test_bad_space_reports_line(self):
        with pytest.raises(ConfigError, match="key 'space'"):
            ExperimentConfig.from_text(config_text(space="Borel9"))

    def test_missing_keys_listed_sorted(self):
        with pytest.raises(ConfigError, match="missing required keys: .*dt.*seed"):
            ExperimentConfig.from_text("L = 1.0\nN = 8\n")

    def test_line_without_equals(self):
        with pytest.raises(ConfigError, match="line 1: expected key = value"):
            ExperimentConfig.from_text("just words\n" + config_text())

    def test_validation_errors(self, tmp_path):
        bad = [
            {"scenario": "warp_drive"},
            {"amplitude": -1.0},
            {"dt": 0.0},
            {"t_max": -2.0},
            {"hardy_trials": 0},
            {"checkpoint_every": -1},
        ]
        for override in bad:
            with pytest.raises(ConfigError):
                make_config(tmp_path, **override)

    def test_step_bookkeeping(self, tmp_path):
        cfg = make_config(tmp_path, t_max=1.0, dt=0.02)
        assert cfg.n_steps() == 50
        assert cfg.store_every() == 1
        long = make_config(tmp_path, t_max=100.0, dt=0.02)
        assert long.store_every() == long.n_steps() // 32

    def test_from_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(config_text(output_dir=str(tmp_path / "o")))
        assert ExperimentConfig.from_file(path).seed == 7

    def test_config_error_is_value_error(self):
        assert issubclass(ConfigError, ValueError)


@pytest.fixture(scope="module")
def grid():
    return GridSpec(BOX, 16)


class TestData:
    def test_perturbation_datum_unit_and_high_pass(self, grid):
        w = perturbation_datum(grid, seed=3)
        assert l2_norm(w) == pytest.approx(1.0, rel=1e-12)
        low = w.coeffs * (grid.k_int_sq <= 4.0)
        low_mass = grid.volume * float(np.sum(np.abs(low) ** 2))
        assert low_mass < 0.05

    def test_stationary_datum_unit_and_low_pass(self, grid):
        v = stationary_datum(grid, seed=3)
        assert l2_norm(v) == pytest.approx(1.0, rel=1e-12)
        high = v.coeffs * (grid.k_int_sq > 16.0)
        high_mass = grid.volume * float(np.sum(np.abs(high) ** 2))
        assert high_mass < 0.05

    def test_data_deterministic_in_seed(self, grid):
        a = perturbation_datum(grid, seed=5)
        b = perturbation_datum(grid, seed=5)
        c = perturbation_datum(grid, seed=6)
        assert np.array_equal(a.coeffs, b.coeffs)
        assert not np.array_equal(a.coeffs, c.coeffs)


class TestBuildScenario:
    def test_zero_v(self, grid, tmp_path):
        cfg = make_config(tmp_path, amplitude=2.0)
        setup = build_scenario(cfg, grid)
        assert setup.V0 is None
        assert l2_norm(setup.w0) == pytest.approx(2.0, rel=1e-12)

    def test_small_stationary(self, grid, tmp_path):
        cfg = make_config(tmp_path, scenario="small_stationary_V", amplitude=0.2)
        setup = build_scenario(cfg, grid)
        assert l2_norm(setup.V0) == pytest.approx(0.2, rel=1e-12)
        assert l2_norm(setup.w0) == pytest.approx(1.0, rel=1e-12)

    def test_self_similar(self, grid, tmp_path):
        cfg = make_config(tmp_path, scenario="self_similar_V", amplitude=0.15)
        setup = build_scenario(cfg, grid)
        assert setup.V0 is not None and l2_norm(setup.V0) > 0
        assert "1/|x|" in setup.note

    def test_calderon_active_clamp(self, grid, tmp_path):
        cfg = make_config(
            tmp_path, scenario="calderon_split", space="Lebesgue3", amplitude=15.0
        )
        setup = build_scenario(cfg, grid)
        assert l2_norm(setup.w0) > 0
        assert "clamp split" in setup.note

    def test_calderon_empty_remainder_rejected(self, grid, tmp_path):
        cfg = make_config(
            tmp_path, scenario="calderon_split", space="Lebesgue3", amplitude=2.0
        )
        with pytest.raises(ConfigError, match="empty remainder"):
            build_scenario(cfg, grid)


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    """One passing zero-background run shared by the read-only assertions."""
    out = tmp_path_factory.mktemp("smoke") / "run"
    cfg = ExperimentConfig.from_text(
        config_text(output_dir=str(out), checkpoint_every=10)
    )
    status = run(cfg)
    return cfg, out, status


class TestRunSmoke:
    def test_exit_status_zero(self, smoke):
        _, _, status = smoke
        assert status == 0

    def test_artifacts_present(self, smoke):
        _, out, _ = smoke
        for name in (
            "report.txt", "ledger.csv", "diagnostics.csv", "hardy.csv",
            "config_echo.cfg",
        ):
            assert (out / name).exists(), name
        assert sorted((out / "slices").glob("slice_*.npz"))
        states = sorted((out / "checkpoints").glob("state_*.npz"))
        assert states
        for state in states:
            assert state.with_suffix(".sha256").exists()

    def test_report_all_checks_pass(self, smoke):
        _, out, _ = smoke
        text = (out / "report.txt").read_text()
        assert "OVERALL: PASS" in text
        assert "[FAIL]" not in text
        assert text.count("[PASS]") >= 11

    def test_ledger_csv_parses_and_decays(self, smoke):
        _, out, _ = smoke
        lines = (out / "ledger.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        assert header[:3] == ["t", "l2_sq", "grad_l2_sq"]
        rows = [[float(c) for c in line.split(",")] for line in lines[1:]]
        times = [r[0] for r in rows]
        l2 = [r[1] for r in rows]
        assert times == sorted(times)
        assert l2[-1] < l2[0]

    def test_config_echo_round_trips(self, smoke):
        cfg, out, _ = smoke
        assert ExperimentConfig.from_file(out / "config_echo.cfg") == cfg

    def test_hardy_csv_has_summary_row(self, smoke):
        _, out, _ = smoke
        last = (out / "hardy.csv").read_text().strip().splitlines()[-1]
        assert last.startswith("K_hat,")

    def test_identical_config_reruns_bitwise(self, smoke, tmp_path):
        cfg, out, _ = smoke
        other = dataclass_replace(cfg, output_dir=str(tmp_path / "again"))
        assert run(other) == 0
        for name in ("ledger.csv", "diagnostics.csv", "hardy.csv"):
            assert (tmp_path / "again" / name).read_bytes() == (
                out / name
            ).read_bytes(), name


def dataclass_replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    import dataclasses

    return dataclasses.replace(cfg, **changes)


class TestScenarioRuns:
    def test_small_stationary_passes(self, tmp_path):
        cfg = make_config(
            tmp_path, scenario="small_stationary_V", amplitude=0.2, t_max=0.3
        )
        assert run(cfg) == 0

    def test_self_similar_passes_when_small(self, tmp_path):
        cfg = make_config(
            tmp_path, scenario="self_similar_V", amplitude=0.15, t_max=0.3
        )
        assert run(cfg) == 0

    def test_calderon_passes_when_admissible(self, tmp_path):
        cfg = make_config(
            tmp_path, scenario="calderon_split", space="Lebesgue3",
            amplitude=15.0, t_max=0.3,
        )
        assert run(cfg) == 0
        text = (tmp_path / "out" / "report.txt").read_text()
        assert "clamp split at R = 1.0" in text

    def test_self_similar_inadmissible_fails_cleanly(self, tmp_path):
        cfg = make_config(
            tmp_path, scenario="self_similar_V", amplitude=0.5, t_max=0.3
        )
        assert run(cfg) == 1
        text = (tmp_path / "out" / "report.txt").read_text()
        assert "admissible = False" in text
        assert "[FAIL] background admissible (K*sup < 1)" in text
        assert "OVERALL: FAIL" in text
        # the run stops before producing evolution artifacts
        assert not (tmp_path / "out" / "ledger.csv").exists()

    def test_picard_divergence_fails_cleanly(self, tmp_path):
        cfg = make_config(
            tmp_path, scenario="self_similar_V", amplitude=1000.0, t_max=0.3
        )
        assert run(cfg) == 1
        text = (tmp_path / "out" / "report.txt").read_text()
        assert "background construction failed" in text
        assert "contraction history" in text
        assert "[FAIL] background construction converged" in text


class TestEnvOverride:
    def test_output_dir_env_wins(self, tmp_path, monkeypatch):
        target = tmp_path / "env_target"
        monkeypatch.setenv("NSLAB_OUTPUT_DIR", str(target))
        cfg = make_config(tmp_path, t_max=0.1)
        assert run(cfg) == 0
        assert (target / "report.txt").exists()
        assert not (tmp_path / "out").exists()


class TestReplay:
    def test_split_run_matches_single_run_bitwise(self, tmp_path):
        single = make_config(
            tmp_path, output_dir=str(tmp_path / "single"), t_max=1.0,
            checkpoint_every=0,
        )
        assert run(single) == 0

        split = make_config(
            tmp_path, output_dir=str(tmp_path / "split"), t_max=0.5,
            checkpoint_every=0,
        )
        assert run(split) == 0
        state = tmp_path / "split" / "checkpoints" / "state_000025.npz"
        assert state.exists()
        assert replay(state, extra_time=0.5) == 0

        for name in ("ledger.csv", "diagnostics.csv"):
            assert (tmp_path / "split" / name).read_bytes() == (
                tmp_path / "single" / name
            ).read_bytes(), name

    def test_replay_zero_extra_time_is_idempotent(self, tmp_path):
        cfg = make_config(tmp_path, t_max=0.3)
        assert run(cfg) == 0
        out = tmp_path / "out"
        before = {
            name: (out / name).read_bytes()
            for name in ("ledger.csv", "diagnostics.csv")
        }
        state = out / "checkpoints" / "state_000015.npz"
        assert replay(state, extra_time=0.0) == 0
        for name, payload in before.items():
            assert (out / name).read_bytes() == payload, name

    def test_corrupted_checkpoint_rejected(self, tmp_path):
        cfg = make_config(tmp_path, t_max=0.2)
        assert run(cfg) == 0
        state = tmp_path / "out" / "checkpoints" / "state_000010.npz"
        blob = bytearray(state.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        state.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="digest mismatch"):
            replay(state, extra_time=0.0)

    def test_missing_sidecar_rejected(self, tmp_path):
        cfg = make_config(tmp_path, t_max=0.2)
        assert run(cfg) == 0
        state = tmp_path / "out" / "checkpoints" / "state_000010.npz"
        state.with_suffix(".sha256").unlink()
        with pytest.raises(CheckpointError, match="sidecar"):
            replay(state, extra_time=0.0)

    def test_replay_beyond_horizon_needs_zero_background(self, tmp_path):
        cfg = make_config(
            tmp_path, scenario="small_stationary_V", amplitude=0.2,
            t_max=0.2, checkpoint_every=5,
        )
        assert run(cfg) == 0
        state = tmp_path / "out" / "checkpoints" / "state_000010.npz"
        with pytest.raises(ValueError, match="beyond the original horizon"):
            replay(state, extra_time=0.2)
        # within the original horizon stays allowed
        mid = tmp_path / "out" / "checkpoints" / "state_000005.npz"
        assert replay(mid, extra_time=0.1) == 0

    def test_replay_validates_extra_time(self, tmp_path):
        cfg = make_config(tmp_path, t_max=0.2)
        assert run(cfg) == 0
        state = tmp_path / "out" / "checkpoints" / "state_000010.npz"
        with pytest.raises(ValueError, match="extra_time"):
            replay(state, extra_time=-0.1)
        with pytest.raises(ValueError, match="integer multiple"):
            replay(state, extra_time=0.0301)

    def test_replay_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="no checkpoint"):
            replay(tmp_path / "nope.npz", extra_time=0.0)


class TestCli:
    def test_parser_round_trip(self):
        parser = build_parser()
        args = parser.parse_args(["--serial", "replay", "x.npz", "--extra-time", "0.5"])
        assert args.serial and args.command == "replay"
        assert args.extra_time == 0.5

    def test_run_subcommand(self, tmp_path):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(
            config_text(output_dir=str(tmp_path / "cli_out"), t_max=0.1)
        )
        assert main(["--serial", "run", str(cfg_path)]) == 0
        assert (tmp_path / "cli_out" / "report.txt").exists()

    def test_run_missing_config_exits_2(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "absent.cfg")]) == 2
        assert "error" in capsys.readouterr().err

    def test_run_bad_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text(config_text() + "bogus = 1\n")
        assert main(["run", str(path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_replay_subcommand(self, tmp_path):
        cfg_path = tmp_path / "exp.cfg"
        out = tmp_path / "cli_replay"
        cfg_path.write_text(
            config_text(output_dir=str(out), t_max=0.2, checkpoint_every=5)
        )
        assert main(["run", str(cfg_path)]) == 0
        state = out / "checkpoints" / "state_000005.npz"
        assert main(["replay", str(state), "--extra-time", "0.1"]) == 0

    def test_replay_corrupt_exits_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.cfg"
        out = tmp_path / "cli_corrupt"
        cfg_path.write_text(
            config_text(output_dir=str(out), t_max=0.2, checkpoint_every=5)
        )
        assert main(["run", str(cfg_path)]) == 0
        state = out / "checkpoints" / "state_000005.npz"
        state.with_suffix(".sha256").write_text("0" * 64 + "\n")
        assert main(["replay", str(state)]) == 2
        assert "checkpoint error" in capsys.readouterr().err

    def test_hardy_subcommand(self, tmp_path, capsys):
        csv_path = tmp_path / "hardy.csv"
        status = main([
            "hardy", "WeightedLinfty", "--trials", "2", "--points", "8",
            "--seed", "1", "--output", str(csv_path),
        ])
        assert status == 0
        assert "K_hat =" in capsys.readouterr().out
        assert csv_path.read_text().splitlines()[-1].startswith("K_hat,")

    def test_hardy_bad_space_exits_2(self, capsys):
        assert main(["hardy", "Borel9"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_threads_exits_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(config_text(output_dir=str(tmp_path / "o")))
        assert main(["--threads", "0", "run", str(cfg_path)]) == 2
        assert "--threads" in capsys.readouterr().err
