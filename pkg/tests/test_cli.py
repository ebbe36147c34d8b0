import configparser

import numpy as np
import pytest

from flowdpp import fileio
from flowdpp.cli import main
from flowdpp.config import ConfigError, RunConfig, load_config, parse_config, save_config
from flowdpp.policies import PolicyKind
from flowdpp.sim import GPU_LATENCY


BASIC_CONFIG = """\
[run]
policy = dpp

[scenario]
horizon = 80
seed = 3
flow_rows = 16
flow_cols = 16
grid_rows = 4
grid_cols = 4

[controller]
tie_break = T
"""


def write_config(tmp_path, text=BASIC_CONFIG, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestFlo:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        flow = rng.standard_normal((6, 9, 2)).astype(np.float32)
        path = tmp_path / "field.flo"
        fileio.write_flo(path, flow)
        back = fileio.read_flo(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, flow)
        fileio.write_flo(tmp_path / "copy.flo", back)
        assert (tmp_path / "copy.flo").read_bytes() == path.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            fileio.read_flo(path)

    def test_truncated_payload(self, tmp_path):
        flow = np.ones((4, 4, 2), dtype=np.float32)
        path = tmp_path / "trunc.flo"
        fileio.write_flo(path, flow)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            fileio.read_flo(path)

    def test_magnitude(self):
        flow = np.zeros((1, 2, 2))
        flow[0, 0] = (3.0, 4.0)
        np.testing.assert_allclose(fileio.flow_magnitude(flow), [[5.0, 0.0]])


class TestMatrixCsv:
    def test_round_trip(self, tmp_path):
        arr = np.random.default_rng(1).standard_normal((3, 5))
        path = tmp_path / "m.csv"
        fileio.write_matrix_csv(path, arr)
        np.testing.assert_array_equal(fileio.read_matrix_csv(path), arr)

    def test_load_flow_map_dispatch(self, tmp_path):
        flow = np.zeros((2, 2, 2), dtype=np.float32)
        flow[..., 0] = 1.5
        fileio.write_flo(tmp_path / "f.flo", flow)
        np.testing.assert_allclose(fileio.load_flow_map(tmp_path / "f.flo"), 1.5)


class TestGridCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        conf = rng.random((2, 3, 2))
        boxes = rng.random((2, 3, 2, 4))
        from flowdpp.detection import ConfidenceGrid

        grid = ConfidenceGrid(conf, boxes)
        path = tmp_path / "grid.csv"
        fileio.save_grid_csv(path, grid)
        back = fileio.load_grid_csv(path)
        np.testing.assert_array_equal(back.conf, grid.conf)
        np.testing.assert_array_equal(back.boxes, grid.boxes)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "grid.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            fileio.load_grid_csv(path)


class TestConfig:
    def test_parse_basic(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.policy is PolicyKind.DPP
        assert cfg.scenario.horizon == 80
        assert cfg.scenario.seed == 3
        assert cfg.controller.tie_break.value == "T"

    def test_round_trip(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        out = tmp_path / "saved.ini"
        save_config(cfg, out)
        assert load_config(out) == cfg

    def test_defaults_round_trip(self, tmp_path):
        out = tmp_path / "defaults.ini"
        save_config(RunConfig(), out)
        assert load_config(out) == RunConfig()

    def test_unknown_key_reports_location(self):
        parser = configparser.ConfigParser()
        parser.read_string("[scenario]\nbogus_knob = 1\n")
        with pytest.raises(ConfigError, match=r"\[scenario\] bogus_knob"):
            parse_config(parser, source="test.ini")

    def test_unknown_section_rejected(self):
        parser = configparser.ConfigParser()
        parser.read_string("[mystery]\nx = 1\n")
        with pytest.raises(ConfigError, match=r"\[mystery\]"):
            parse_config(parser)

    def test_bad_value_reports_location(self):
        parser = configparser.ConfigParser()
        parser.read_string("[scenario]\nhorizon = soon\n")
        with pytest.raises(ConfigError, match=r"\[scenario\] horizon"):
            parse_config(parser)

    def test_latency_profile_shorthand(self):
        parser = configparser.ConfigParser()
        parser.read_string("[scenario]\nlatency_profile = gpu\n")
        cfg = parse_config(parser)
        assert cfg.scenario.base_latency_h == GPU_LATENCY[0]
        assert cfg.scenario.base_latency_t == GPU_LATENCY[1]

    def test_invalid_latency_profile(self):
        parser = configparser.ConfigParser()
        parser.read_string("[scenario]\nlatency_profile = tpu\n")
        with pytest.raises(ConfigError, match="latency_profile"):
            parse_config(parser)


class TestProcessFlowCommand:
    def test_csv_input_worked_example(self, tmp_path, capsys):
        src = tmp_path / "flow.csv"
        src.write_text("1,3\n5,7\n")
        out = tmp_path / "thresholds.csv"
        rc = main(["process-flow", str(src), "--grid", "2x2", "--k", "1", "--out", str(out)])
        assert rc == 0
        values = [float(line) for line in out.read_text().splitlines()]
        np.testing.assert_allclose(
            values, [0.064766, 0.094068, 0.094068, 0.064766], atol=1e-5
        )
        assert "n=4" in capsys.readouterr().out

    def test_flo_input_constant_field(self, tmp_path):
        flow = np.zeros((8, 8, 2), dtype=np.float32)
        flow[..., 0] = 2.0
        src = tmp_path / "flow.flo"
        fileio.write_flo(src, flow)
        out = tmp_path / "t.csv"
        assert main(["process-flow", str(src), "--grid", "4x4", "--k", "2", "--out", str(out)]) == 0
        values = [float(line) for line in out.read_text().splitlines()]
        assert len(values) == 32
        np.testing.assert_allclose(values, 0.5 / (1 + np.e))

    def test_truncated_flo_exits_2_without_partial_output(self, tmp_path, capsys):
        src = tmp_path / "broken.flo"
        fileio.write_flo(src, np.ones((4, 4, 2), dtype=np.float32))
        src.write_bytes(src.read_bytes()[:-4])
        out = tmp_path / "t.csv"
        assert main(["process-flow", str(src), "--out", str(out)]) == 2
        assert not out.exists()
        assert "error:" in capsys.readouterr().err

    def test_missing_input_exits_2(self, tmp_path, capsys):
        rc = main(["process-flow", str(tmp_path / "nope.flo"), "--out", str(tmp_path / "o.csv")])
        assert rc == 2
        capsys.readouterr()

    def test_bad_grid_exits_2(self, tmp_path, capsys):
        src = tmp_path / "flow.csv"
        src.write_text("1,2\n3,4\n")
        assert main(["process-flow", str(src), "--grid", "4by4", "--out", str(tmp_path / "o.csv")]) == 2
        capsys.readouterr()


class TestSimulateCommand:
    def test_outputs_and_determinism(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        outputs = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            assert main(["simulate", "--config", str(cfg_path), "--out", str(out_dir)]) == 0
            outputs.append(
                {
                    f: (out_dir / f).read_bytes()
                    for f in ("timeseries.csv", "summary.csv")
                }
            )
        assert outputs[0] == outputs[1]
        header = outputs[0]["timeseries.csv"].decode().splitlines()[0]
        assert header == "t,policy,alpha,Q,a,b,P,p,tpr,flops"
        assert len(outputs[0]["timeseries.csv"].decode().splitlines()) == 81
        capsys.readouterr()

    def test_seed_override_changes_output(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        files = []
        for seed in (1, 2):
            out_dir = tmp_path / f"s{seed}"
            assert main(["simulate", "--config", str(cfg_path), "--seed", str(seed),
                         "--out", str(out_dir)]) == 0
            files.append((out_dir / "timeseries.csv").read_bytes())
        assert files[0] != files[1]
        capsys.readouterr()

    def test_bad_config_exits_2(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, "[scenario]\nwarp_speed = 9\n")
        assert main(["simulate", "--config", str(cfg_path)]) == 2
        assert "warp_speed" in capsys.readouterr().err

    def test_missing_config_exits_2(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "none.ini")]) == 2
        capsys.readouterr()


@pytest.fixture(scope="module")
def compare_dir(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("compare")
    cfg_path = tmp_path / "run.ini"
    # keep REINFORCE training cheap
    cfg_path.write_text(
        "[run]\npolicy = dpp\nreinforce_train_episodes = 3\n"
        "reinforce_episode_len = 8\n\n"
        "[scenario]\nhorizon = 40\nseed = 3\nflow_rows = 16\nflow_cols = 16\n"
        "grid_rows = 4\ngrid_cols = 4\n\n[controller]\ntie_break = T\n"
    )
    out_dir = tmp_path / "out"
    assert main(["compare", "--config", str(cfg_path), "--out", str(out_dir)]) == 0
    return out_dir


class TestCompareCommand:
    def test_summary_has_all_policies(self, compare_dir, capsys):
        lines = (compare_dir / "summary.csv").read_text().splitlines()
        assert [line.split(",")[0] for line in lines] == [
            "policy", "dpp", "comp1", "comp2", "comp3",
        ]
        capsys.readouterr()

    def test_gnuplot_files(self, compare_dir):
        for name in ("queue_backlog.dat", "accuracy.dat"):
            lines = (compare_dir / name).read_text().splitlines()
            assert lines[0] == "# t dpp comp1 comp2 comp3"
            assert len(lines) == 41
            assert all(len(line.split()) == 5 for line in lines[1:])

    def test_accuracy_is_running_average(self, compare_dir):
        lines = (compare_dir / "accuracy.dat").read_text().splitlines()[1:]
        for line in lines:
            for v in line.split()[1:]:
                assert 0.0 <= float(v) <= 1.0 + 1e-12

    def test_timeseries_covers_all_policies(self, compare_dir):
        lines = (compare_dir / "timeseries.csv").read_text().splitlines()
        assert len(lines) == 1 + 4 * 40
