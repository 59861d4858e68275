"""Experiment front-end tests: config grammar, run fan-out, metrics
round-trips, report arithmetic, and SVG determinism."""

import csv
import hashlib
from pathlib import Path

import numpy as np
import pytest

from miro import cli, metrics, plotting
from miro.config import default_config, parse_config_text
from miro.errors import ConfigError, DataError
from miro.experiment import run_experiment, resolve_run_dir, seed_artifacts

TINY_CONFIG = """
# desk-top smoke configuration
[run]
variant = miro
seeds = 0, 1
output_dir = {out}

[env]
task = pendulum
image_size = 16
episode_len = 8
distractors = 0

[model]
n_z = 8
n_s = 8
hidden = 16
conv_channels = 8, 8

[loss]
lambda1 = 1.0
lambda2 = 10.0
nce_horizons = 1, 2

[planner]
horizon = 3
population = 10
elites = 3
iterations = 2

[train]
seed_episodes = 2
collect_episodes = 1
steps_per_episode = 2
batch_size = 2
chunk_len = 6
"""


def tiny_config(tmp_path, **overrides):
    cfg = parse_config_text(TINY_CONFIG.format(out=tmp_path / "runs"))
    if overrides:
        import dataclasses

        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def write_metrics(path, run_id, seed, variant, distractors, returns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(metrics.COLUMNS)
        for idx, ret in enumerate(returns):
            w.writerow(
                [run_id, seed, variant, distractors, "episode", 0, idx,
                 "", "", "", "", "", format(float(ret), ".10g"), 0]
            )


class TestConfigParsing:
    def test_defaults_roundtrip(self):
        cfg = parse_config_text("")
        assert cfg.variant == "miro"
        assert cfg.seeds == (0, 1, 2)
        assert cfg.env.task == "pendulum"

    def test_unknown_key_names_key_and_line(self):
        text = "[env]\ntask = pendulum\nwarp_speed = 9\n"
        with pytest.raises(ConfigError, match=r"line 3.*warp_speed"):
            parse_config_text(text)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"line 1"):
            parse_config_text("[warp]\n")

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError, match=r"line 2"):
            parse_config_text("[env]\nimage_size = many\n")

    def test_key_outside_section(self):
        with pytest.raises(ConfigError, match=r"line 1"):
            parse_config_text("task = pendulum\n")

    def test_recon_variant_enables_decoder(self):
        cfg = parse_config_text("[run]\nvariant = recon\n")
        assert cfg.model.decoder

    def test_comments_and_blank_lines_ignored(self):
        cfg = parse_config_text("# top\n\n[env]\ntask = pointmass  # inline\n")
        assert cfg.env.task == "pointmass"
        assert cfg.model.action_dim == 2

    def test_run_id_stable_and_seed_independent_of_order(self):
        a = parse_config_text("[env]\ntask = pendulum\n")
        b = parse_config_text("[env]\ntask = pendulum\n")
        assert a.run_id() == b.run_id()
        c = parse_config_text("[env]\ntask = pointmass\n")
        assert a.run_id() != c.run_id()

    def test_invalid_cross_field_combinations(self):
        with pytest.raises(ConfigError):
            default_config(variant="nope")
        with pytest.raises(ConfigError):
            default_config(seeds=())
        with pytest.raises(ConfigError):
            default_config(lam1=-1.0)


class TestRunExperiment:
    def test_fan_out_three_seeds(self, tmp_path):
        cfg = tiny_config(tmp_path, seeds=(0, 1, 2))
        assert run_experiment(cfg) == 0
        run_dir = resolve_run_dir(cfg)
        for seed in (0, 1, 2):
            assert seed_artifacts(run_dir, seed)["metrics"].exists()
            assert seed_artifacts(run_dir, seed)["checkpoint"].exists()
        assert (run_dir / "manifest.json").exists()
        assert not (run_dir / "FAILED").exists()

    def test_rerun_byte_identical(self, tmp_path):
        cfg = tiny_config(tmp_path, seeds=(0,))
        run_experiment(cfg)
        run_dir = resolve_run_dir(cfg)
        path = seed_artifacts(run_dir, 0)["metrics"]
        first = path.read_bytes()
        run_experiment(cfg)
        assert path.read_bytes() == first

    def test_metrics_accepted_by_plot_and_report(self, tmp_path):
        cfg = tiny_config(tmp_path)
        run_experiment(cfg)
        run_dir = resolve_run_dir(cfg)
        paths = [seed_artifacts(run_dir, s)["metrics"] for s in cfg.seeds]
        out_svg = tmp_path / "curves.svg"
        plotting.plot(paths, out_svg)
        assert out_svg.read_text().startswith("<svg")
        text = metrics.report(paths)
        assert "miro distractors=0" in text

    def test_output_root_env_override(self, tmp_path, monkeypatch):
        other = tmp_path / "elsewhere"
        monkeypatch.setenv("MIRO_OUTPUT_ROOT", str(other))
        cfg = tiny_config(tmp_path, seeds=(0,))
        run_experiment(cfg)
        assert (other / cfg.run_id() / "metrics_seed0.csv").exists()

    def test_schedule_row_counts(self, tmp_path):
        cfg = tiny_config(tmp_path, seeds=(0,))
        run_experiment(cfg)
        rows = metrics.read_metrics(seed_artifacts(resolve_run_dir(cfg), 0)["metrics"])
        episodes = [r for r in rows if r["event"] == "episode"]
        trains = [r for r in rows if r["event"] == "train"]
        assert len(episodes) == cfg.schedule.seed_episodes + cfg.schedule.collect_episodes
        assert len(trains) == cfg.schedule.collect_episodes * cfg.schedule.steps_per_episode
        assert all(np.isfinite(v) for r in trains for v in (r["total"], r["nce"]))


class TestReport:
    def test_constant_returns_give_unit_ratio(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_metrics(a, "rid", 0, "miro", 0, [5.0] * 12)
        write_metrics(b, "rid", 0, "miro", 2, [5.0] * 12)
        text = metrics.report([a, b])
        assert "5.000000000" in text
        assert "robustness ratio miro (distractors=2 vs 0): 1.000000000" in text

    def test_ratio_arithmetic(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_metrics(a, "rid", 0, "miro", 0, [5.0] * 12)
        write_metrics(b, "rid", 0, "miro", 2, [4.0] * 12)
        assert "robustness ratio miro (distractors=2 vs 0): 0.800000000" in metrics.report([a, b])

    def test_short_log_warns_and_uses_all(self, tmp_path):
        a = tmp_path / "a.csv"
        write_metrics(a, "rid", 0, "miro", 0, [1.0, 2.0, 3.0])
        text = metrics.report([a])
        assert "warning" in text
        assert "2.000000000" in text

    def test_values_match_independent_recomputation(self, tmp_path):
        rng = np.random.default_rng(3)
        paths = []
        finals = []
        for seed in range(3):
            p = tmp_path / f"s{seed}.csv"
            returns = rng.uniform(0, 40, size=25)
            write_metrics(p, "rid", seed, "miro", 0, returns)
            paths.append(p)
            # spreadsheet-style recomputation straight from the raw cells
            cells = [float(r[12]) for r in list(csv.reader(open(p)))[1:]]
            finals.append(sum(cells[-10:]) / 10.0)
        expect = sum(finals) / 3.0
        val, _ = None, None
        rowss = [metrics.read_metrics(p) for p in paths]
        got = np.mean([metrics.final_performance(rows)[0] for rows in rowss])
        assert abs(got - expect) < 1e-9
        assert f"{expect:14.9f}".strip() in metrics.report(paths)

    def test_file_order_invariance(self, tmp_path):
        paths = []
        for seed in range(3):
            p = tmp_path / f"s{seed}.csv"
            write_metrics(p, "rid", seed, "miro", 0, [float(seed)] * 12)
            paths.append(p)
        assert metrics.report(paths) == metrics.report(paths[::-1])

    def test_schema_mismatch_names_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(metrics.COLUMNS[:-1] + ["walrus"])
        with pytest.raises(DataError, match="walrus"):
            metrics.read_metrics(p)


class TestPlot:
    def test_single_seed_band_is_zero(self, tmp_path):
        p = tmp_path / "one.csv"
        write_metrics(p, "rid", 0, "miro", 0, [1.0, 2.0, 3.0])
        curves = plotting._group_curves([p])
        _, mean, std = curves[("miro", 0)]
        np.testing.assert_array_equal(std, 0.0)
        np.testing.assert_array_equal(mean, [1.0, 2.0, 3.0])

    def test_identical_files_mean_is_common_curve(self, tmp_path):
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_metrics(pa, "rid", 0, "miro", 0, [4.0, 5.0])
        write_metrics(pb, "rid", 1, "miro", 0, [4.0, 5.0])
        _, mean, std = plotting._group_curves([pa, pb])[("miro", 0)]
        np.testing.assert_array_equal(mean, [4.0, 5.0])
        np.testing.assert_array_equal(std, 0.0)

    def test_constructed_band_edges(self, tmp_path):
        # returns {0,1,2} at one episode: mean 1, population std 1
        paths = []
        for seed, r in enumerate([0.0, 1.0, 2.0]):
            p = tmp_path / f"s{seed}.csv"
            write_metrics(p, "rid", seed, "miro", 0, [r, r])
            paths.append(p)
        _, mean, std = plotting._group_curves(paths)[("miro", 0)]
        np.testing.assert_allclose(mean, 1.0)
        np.testing.assert_allclose(std, 1.0)

    def test_svg_bytes_deterministic(self, tmp_path):
        p = tmp_path / "m.csv"
        write_metrics(p, "rid", 0, "miro", 0, list(np.linspace(0, 20, 30)))
        a = plotting.render_svg([p])
        b = plotting.render_svg([p])
        assert a == b
        out1, out2 = tmp_path / "a.svg", tmp_path / "b.svg"
        plotting.plot([p], out1)
        plotting.plot([p], out2)
        assert hashlib.sha256(out1.read_bytes()).hexdigest() == hashlib.sha256(out2.read_bytes()).hexdigest()


class TestCli:
    def test_end_to_end(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(TINY_CONFIG.format(out=tmp_path / "runs"))
        assert cli.main(["run", str(cfg_path)]) == 0
        pattern = str(tmp_path / "runs" / "*" / "metrics_seed*.csv")
        out_svg = tmp_path / "plot.svg"
        assert cli.main(["plot", pattern, "--out", str(out_svg)]) == 0
        assert out_svg.exists()
        assert cli.main(["report", pattern]) == 0
        assert "miro distractors=0" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[env]\nwarp = 9\n")
        assert cli.main(["run", str(bad)]) == 2
        assert "warp" in capsys.readouterr().err

    def test_missing_metrics_file(self, tmp_path, capsys):
        assert cli.main(["report", str(tmp_path / "nope.csv")]) == 2
