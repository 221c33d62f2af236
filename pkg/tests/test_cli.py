import csv
import os

import pytest

from pilotsim import ConfigError, ExperimentConfig, parse_config_text, to_flat
from pilotsim.cli import emit_report, main, run_experiment

from conftest import zero_overhead


def small_cfg(tmp_path, **kw) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.name = kw.pop("name", "t")
    cfg.output_dir = str(tmp_path)
    cfg.workload.n_tasks = 8
    cfg.workload.duration_s = 4.0
    cfg.pool.nodes = 2
    cfg.backend.max_rate_hz = None
    cfg.agent.startup_s = 5.0
    cfg.agent.termination_s = 1.0
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def write_cfg(path, cfg):
    with open(path, "w") as fh:
        for k, v in to_flat(cfg).items():
            fh.write(f"{k}={v}\n")


class TestConfigParsing:
    def test_flat_round_trip(self, tmp_path):
        cfg = small_cfg(tmp_path)
        cfg.backend.submit_delay_s = 0.07
        parsed = parse_config_text(
            "\n".join(f"{k}={v}" for k, v in to_flat(cfg).items())
        )
        assert to_flat(parsed) == to_flat(cfg)

    def test_comments_and_blank_lines(self):
        cfg = parse_config_text("# comment\n\nworkload.n_tasks=3\n")
        assert cfg.workload.n_tasks == 3

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("backend.bogus=1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("workload.n_tasks=many\n")

    def test_max_rate_none(self):
        cfg = parse_config_text("backend.max_rate_hz=none\n")
        assert cfg.backend.max_rate_hz is None

    def test_local_exec_needs_real_clock(self):
        with pytest.raises(ConfigError):
            parse_config_text("backend.kind=local_exec\nclock=virtual\n")


class TestRunExperiment:
    def test_outputs_per_repetition(self, tmp_path):
        cfg = small_cfg(tmp_path, repetitions=2)
        run_dir = run_experiment(cfg)
        for rep in ("rep_000", "rep_001"):
            rep_dir = os.path.join(run_dir, rep)
            for fname in ("profile.log", "meta.txt", "report_overheads.csv",
                          "report_utilization.csv", "report_summary.csv",
                          "report_timeline.csv"):
                assert os.path.exists(os.path.join(rep_dir, fname)), fname

    def test_logs_never_mix_repetitions(self, tmp_path):
        cfg = small_cfg(tmp_path, repetitions=2)
        run_dir = run_experiment(cfg)
        n0 = len(open(os.path.join(run_dir, "rep_000", "profile.log")).readlines())
        n1 = len(open(os.path.join(run_dir, "rep_001", "profile.log")).readlines())
        assert n0 == n1  # same workload shape, separate files

    def test_replay_from_meta_reproduces_log(self, tmp_path):
        cfg = small_cfg(tmp_path, name="orig")
        run_dir = run_experiment(cfg)
        meta_path = os.path.join(run_dir, "rep_000", "meta.txt")
        replay_cfg = parse_config_text(open(meta_path).read())
        replay_cfg.name = "replay"
        replay_dir = run_experiment(replay_cfg)
        orig = open(os.path.join(run_dir, "rep_000", "profile.log")).read()
        replay = open(os.path.join(replay_dir, "rep_000", "profile.log")).read()
        assert orig == replay

    def test_dvm_crash_is_recorded_outcome(self, tmp_path):
        cfg = small_cfg(tmp_path, name="crash")
        cfg = zero_overhead(cfg)
        cfg.workload.duration_s = 30.0
        cfg.dvm.capacity_tasks = 3
        run_dir = run_experiment(cfg)  # must not raise
        summary = os.path.join(run_dir, "rep_000", "report_summary.csv")
        rows = dict((r[0], r[1]) for r in csv.reader(open(summary)))
        assert float(rows["n_failed"]) > 0


class TestEmitReport:
    def test_single_repetition_zero_stddev(self, tmp_path, capsys):
        cfg = small_cfg(tmp_path)
        run_dir = run_experiment(cfg)
        out_path = emit_report(run_dir)
        rows = {r[0]: r for r in csv.reader(open(out_path))}
        assert float(rows["ttx_s"][2]) == 0.0

    def test_identical_seeded_reps_zero_stddev(self, tmp_path):
        # four repetitions of the exact same seed are fully deterministic
        import shutil

        cfg = small_cfg(tmp_path)
        run_dir = run_experiment(cfg)
        src = os.path.join(run_dir, "rep_000")
        for rep in range(1, 4):
            shutil.copytree(src, os.path.join(run_dir, f"rep_{rep:03d}"))
        out_path = emit_report(run_dir)
        for row in list(csv.reader(open(out_path)))[1:]:
            assert float(row[2]) == 0.0, row[0]

    def test_distinct_seeds_mean_within_envelope(self, tmp_path):
        cfg = small_cfg(tmp_path, repetitions=4)
        run_dir = run_experiment(cfg)
        from pilotsim import compute_ttx, load_profile

        ttxs = []
        for rep in range(4):
            events = load_profile(os.path.join(run_dir, f"rep_{rep:03d}", "profile.log"))
            ttxs.append(compute_ttx(events))
        out_path = emit_report(run_dir)
        rows = {r[0]: r for r in csv.reader(open(out_path))}
        mean = float(rows["ttx_s"][1])
        assert min(ttxs) <= mean <= max(ttxs)

    def test_flagged_truncated_rep(self, tmp_path, capsys):
        cfg = small_cfg(tmp_path, repetitions=2)
        run_dir = run_experiment(cfg)
        log1 = os.path.join(run_dir, "rep_001", "profile.log")
        lines = open(log1).readlines()
        open(log1, "w").writelines(lines[:-1])  # drop pilot_stop
        emit_report(run_dir)
        out = capsys.readouterr().out
        assert "FLAGGED rep_001" in out
        assert "1 complete repetition(s)" in out

    def test_no_complete_runs(self, tmp_path):
        os.makedirs(tmp_path / "empty" / "rep_000")
        from pilotsim.cli import NoCompleteRuns

        with pytest.raises(NoCompleteRuns):
            emit_report(str(tmp_path / "empty"))


class TestSweep:
    def test_sweep_expands_scale_points(self, tmp_path):
        cfg = small_cfg(tmp_path, name="exp1")
        cfg.workload.duration_s = 5.0
        cfg.backend.submit_delay_s = 0.1
        cfg.pool.autosize = 1
        cfg.sweep.n_tasks = "4,8,16"
        run_dir = run_experiment(cfg)
        points = sorted(os.listdir(run_dir))
        assert points == ["n000004", "n000008", "n000016"]
        # aggregated scheduling/submission overhead grows with scale
        from pilotsim import component_overheads, load_profile

        unions = []
        for p in points:
            events = load_profile(os.path.join(run_dir, p, "rep_000", "profile.log"))
            unions.append(component_overheads(events).components["rp"].union_s)
        assert unions[0] < unions[1] < unions[2]

    def test_autosize_tracks_workload(self, tmp_path):
        cfg = small_cfg(tmp_path)
        cfg.pool.autosize = 1
        cfg.pool.cores_per_node = 42
        cfg.workload.n_tasks = 16384
        assert cfg.effective_nodes() == 391 + 1

    def test_bad_sweep_rejected(self, tmp_path):
        cfg = small_cfg(tmp_path)
        cfg.sweep.n_tasks = "4,zero"
        with pytest.raises(ConfigError):
            cfg.validate()


class TestShippedConfigs:
    @pytest.mark.parametrize("fname", ["exp1_local.cfg", "exp3_virtual.cfg",
                                       "exp4_optimized.cfg"])
    def test_parse_and_validate(self, fname):
        from pilotsim import parse_config_file

        here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        cfg = parse_config_file(os.path.join(here, "configs", fname))
        cfg.validate()

    def test_exp_partition_variant_runs(self, tmp_path):
        # partitioned variant of the optimized setup at reduced scale
        cfg = small_cfg(tmp_path, name="partitioned")
        cfg = zero_overhead(cfg)
        cfg.workload.n_tasks = 32
        cfg.pool.nodes = 5
        cfg.agent.partitions = 4
        cfg.subagents.n_sub_agents = 4
        run_dir = run_experiment(cfg)
        assert os.path.exists(os.path.join(run_dir, "rep_000", "report_summary.csv"))


class TestMainExitCodes:
    def test_success(self, tmp_path, capsys):
        cfg = small_cfg(tmp_path)
        cfg_path = tmp_path / "exp.cfg"
        write_cfg(cfg_path, cfg)
        assert main(["run", str(cfg_path)]) == 0
        assert main(["analyze", str(tmp_path / "t")]) == 0
        assert main(["report", str(tmp_path / "t")]) == 0

    def test_config_error_is_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("workload.n_tasks=0\n")
        assert main(["run", str(bad)]) == 2

    def test_missing_config_is_2(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.cfg")]) == 2

    def test_overrides(self, tmp_path, capsys):
        cfg = small_cfg(tmp_path)
        cfg_path = tmp_path / "exp.cfg"
        write_cfg(cfg_path, cfg)
        out2 = tmp_path / "other"
        assert main(["run", str(cfg_path), "--seed", "5", "--out", str(out2),
                     "--reps", "2"]) == 0
        assert os.path.isdir(out2 / "t" / "rep_001")

    def test_report_on_missing_dir_is_3(self, tmp_path):
        assert main(["report", str(tmp_path / "missing")]) == 3
