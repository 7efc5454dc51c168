import json
import os
import socket
import subprocess
import sys

import numpy as np
import pytest

from splitlab.harness import (
    CSV_HEADER,
    ConfigError,
    DpSettings,
    ExperimentConfig,
    emit_grid,
    preset,
    preset_names,
    read_pgm,
    run,
)
from splitlab.harness.cli import EXIT_CONFIG, EXIT_DATASET, main


def quick(cfg, data_dir, out, **kw):
    cfg.data_dir = str(data_dir)
    cfg.out_dir = str(out)
    cfg.eval_size = 64
    cfg.dump_every = 10
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


# -- presets and config ----------------------------------------------------------

def test_preset_values():
    cfg = preset("mnist_eps10_10k")
    assert cfg.dp.epsilon == 10 and cfg.iterations == 10000 and cfg.batch_size == 64
    assert preset("pca_k2").defense.pca_k == 2
    assert preset("pca_k4").defense.pca_k == 4
    assert preset("mnist_eps05_100k").dp.epsilon == 0.5
    assert preset("mnist_eps10_100k").iterations == 100000
    assert preset("fmnist_excl8_100k").excluded_classes == [8]


def test_desk_presets_shrink():
    for name in ("mnist_eps10_10k", "mnist_eps05_100k", "pca_k2", "fmnist_excl0_100k"):
        full, desk = preset(name), preset(name + "_desk")
        assert desk.iterations * 10 == full.iterations
        assert desk.image_size == 14 and full.image_size == 28
    assert preset("mnist_nodp_desk").iterations == 3000


def test_unknown_preset_lists_names():
    with pytest.raises(ConfigError) as info:
        preset("mnist_eps7")
    for name in preset_names():
        assert name in str(info.value)


@pytest.mark.parametrize("field,value", [("iterations", 0), ("batch_size", 0), ("transport", "udp"),
                                         ("server_mode", "lazy"), ("dataset", "cifar")])
def test_validation_rejects(field, value):
    cfg = ExperimentConfig()
    setattr(cfg, field, value)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_invalid_dp_rejected():
    cfg = ExperimentConfig(dp=DpSettings(epsilon=1.0, noise_multiplier=1.0))
    with pytest.raises(ConfigError):
        cfg.validate()


def test_config_json_round_trip(tmp_path):
    cfg = preset("pca_k4_desk")
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg
    with pytest.raises(ConfigError, match="unknown config keys"):
        ExperimentConfig.from_dict({"iterationz": 3})


# -- grids -------------------------------------------------------------------------

def test_grid_single_image(tmp_path):
    path = emit_grid(np.zeros((1, 5, 3)), np.ones((1, 5, 3)), tmp_path / "g.pgm")
    pixels = read_pgm(path)
    assert pixels.shape == (10, 3)
    assert (pixels[:5] == 0).all() and (pixels[5:] == 255).all()


def test_grid_half_grey(tmp_path):
    path = emit_grid(np.full((3, 1, 4, 4), 0.5), np.full((3, 1, 4, 4), 0.5), tmp_path / "g.pgm")
    raw = path.read_bytes()
    body = raw.split(b"\n", 1)[1]
    assert len(body) == 8 * 12 and set(body) == {128}


def test_grid_header(tmp_path):
    path = emit_grid(np.random.rand(8, 28, 28), np.random.rand(8, 28, 28), tmp_path / "g.pgm")
    assert path.read_bytes().startswith(b"P5 224 56 255\n")


def test_grid_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_grid(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)), tmp_path / "g.pgm")
    with pytest.raises(OSError):
        emit_grid(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)), tmp_path / "missing" / "g.pgm")


# -- runs --------------------------------------------------------------------------

def test_honest_toy_run_learns(tmp_path):
    cfg = ExperimentConfig(dataset="toy-separable", server_mode="honest", model="mlp", image_size=4, n_train=2000,
                           n_test=500, iterations=500, batch_size=32, out_dir=str(tmp_path),
                           lr_client=1e-3, lr_server=1e-3)
    report = run(cfg)
    losses = report.values("loss")
    assert len(losses) == 500
    assert losses[-50:].mean() < losses[:50].mean()
    assert report.test_accuracy > 0.9


def test_fsha_run_outputs(tmp_path, small_data_dir):
    cfg = quick(preset("mnist_nodp_desk"), small_data_dir, tmp_path, iterations=30, metric_stride=3)
    report = run(cfg)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) - 1 == len(report.rows) == 10
    its = [int(line.split(",")[0]) for line in lines[1:]]
    assert its == sorted(its) and its[-1] == 30
    assert all(line.endswith(",0") for line in lines[1:])
    assert sorted(report.grids) == ["grid_10.pgm", "grid_20.pgm", "grid_30.pgm"]
    assert read_pgm(tmp_path / "grid_30.pgm").shape == (28, 8 * 14)
    privacy = json.loads((tmp_path / "privacy.json").read_text())
    assert privacy["epsilon_spent"] is None
    assert set(report.class_mse) == set(range(10))


def test_same_seed_same_bytes(tmp_path, small_data_dir):
    outs = []
    for k in range(2):
        cfg = quick(preset("mnist_nodp"), small_data_dir, tmp_path / str(k), iterations=25, seed=7,
                    image_size=14)
        run(cfg)
        outs.append(tmp_path / str(k))
    for name in ("metrics.csv", "privacy.json", "grid_20.pgm", "grid_25.pgm"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_tcp_matches_inproc(tmp_path, small_data_dir):
    outs = {}
    for transport in ("inproc", "tcp"):
        cfg = quick(preset("mnist_eps10_10k_desk"), small_data_dir, tmp_path / transport,
                    iterations=20, transport=transport)
        run(cfg)
        outs[transport] = tmp_path / transport
    for name in ("metrics.csv", "privacy.json", "grid_20.pgm"):
        assert (outs["inproc"] / name).read_bytes() == (outs["tcp"] / name).read_bytes()


def test_budget_exhaustion_truncates(tmp_path, small_data_dir):
    cfg = quick(preset("mnist_nodp_desk"), small_data_dir, tmp_path, iterations=20,
                dp=DpSettings(noise_multiplier=1.0, budget_steps=6))
    report = run(cfg)
    assert report.truncated and report.stopped_at == 6
    assert len(report.rows) == 6
    summary = json.loads((tmp_path / "report.json").read_text())
    assert summary["truncated"] is True
    assert json.loads((tmp_path / "privacy.json").read_text())["steps"] == 6


def test_pca_defense_run(tmp_path, small_data_dir):
    cfg = quick(preset("pca_k2_desk"), small_data_dir, tmp_path, iterations=10)
    report = run(cfg)
    assert len(report.rows) == 10


def test_class_exclusion_run(tmp_path, small_data_dir):
    cfg = quick(preset("fmnist_excl8_100k_desk"), small_data_dir, tmp_path, iterations=10)
    report = run(cfg)
    assert 8 in report.class_mse


# -- CLI ---------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path, small_data_dir, capsys):
    assert main(["run", "--preset", "mnist_nodp_desk", "--iterations", "0"]) == EXIT_CONFIG
    assert main(["run", "--preset", "nope"]) == EXIT_CONFIG
    assert main(["run", "--preset", "mnist_nodp_desk", "--data-dir", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "o")]) == EXIT_DATASET
    assert main(["run", "--preset", "mnist_nodp_desk", "--data-dir", str(small_data_dir),
                 "--iterations", "5", "--out", str(tmp_path / "ok")]) == 0
    assert (tmp_path / "ok" / "metrics.csv").exists()


def test_cli_flags_override(tmp_path, small_data_dir, capsys):
    path = tmp_path / "c.json"
    cfg = preset("mnist_nodp_desk")
    cfg.eval_size = 32
    path.write_text(json.dumps(cfg.to_dict()))
    code = main(["run", "--config", str(path), "--seed", "3", "--iterations", "4", "--epsilon", "5",
                 "--data-dir", str(small_data_dir), "--out", str(tmp_path / "o")])
    assert code == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["config"]["seed"] == 3 and report["config"]["dp"]["epsilon"] == 5.0
    assert report["privacy"]["epsilon_target"] == 5.0


def test_cli_preset_list_and_privacy_report(capsys):
    assert main(["preset", "list"]) == 0
    out = capsys.readouterr().out
    assert "mnist_eps10_100k_desk" in out and "pca_k2" in out
    assert main(["privacy-report", "--epsilon", "10", "--steps", "1000"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert 0.99 * 10 < report["epsilon_spent"] <= 10
    assert main(["privacy-report", "--epsilon", "1", "--sigma", "1"]) == EXIT_CONFIG


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_separate_process_server(tmp_path, small_data_dir):
    port = _free_port()
    common = ["--preset", "mnist_nodp_desk", "--iterations", "12", "--data-dir", str(small_data_dir),
              "--transport", "tcp", "--port", str(port)]
    env = dict(os.environ)
    server = subprocess.Popen([sys.executable, "-m", "splitlab.harness.cli", "run", "--role", "server",
                               *common], env=env)
    try:
        assert main(["run", "--role", "client", "--out", str(tmp_path / "tcp"), *common]) == 0
        assert server.wait(timeout=60) == 0
    finally:
        server.kill()
    assert main(["run", "--out", str(tmp_path / "local"), *common[:-4]]) == 0
    assert ((tmp_path / "tcp" / "metrics.csv").read_bytes()
            == (tmp_path / "local" / "metrics.csv").read_bytes())
