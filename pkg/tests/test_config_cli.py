import numpy as np
import pytest

from fwiot.cli import main, make_rng, write_csv, write_pgm
from fwiot.config import ExperimentConfig
from fwiot.errors import ConfigError
from fwiot.fileio import read_shot_file
from tests.conftest import first_break

BASE = """
[grid]
nx = 41
nz = 41
dx = 20
dz = 20

[time]
nt = 220
dt = 0.004

[model]
kind = homogeneous
velocity = 2000
vmin = 1000
vmax = 2600

[truth]
kind = gaussian_lens
velocity = 2000
lens_center_x = 400
lens_center_z = 400
lens_sigma = 150
lens_amplitude = -0.2
vmin = 1000
vmax = 2600

[acquisition]
source_count = 2
source_z = 40
source_x0 = 200
source_x1 = 600
receiver_count = 9
receiver_z = 720
receiver_x0 = 40
receiver_x1 = 760

[wavelet]
peak_frequency = 8
delay = 0.2

[misfit]
kind = w2_trace

[normalization]
kind = square

[optimizer]
max_iters = 2
snapshot_every = 1

[ma]
grid_n = 65
densities = translate

[sensitivity]
shift_max = 0.1
shift_step = 0.02
trace_length = 2.6
normalization_kind = square

[noise]
n_min_exp = 4
n_max_exp = 6
realizations = 2
normalization_kind = linear

[tomo]
samples = 8

[lsrtm]
iterations = 3
scatterers = 400,400,2e-8

[output]
seed = 42
"""


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(BASE)
    return p


def run(cmd, config_path, out_dir, *extra):
    return main([cmd, "--config", str(config_path), "--output-dir", str(out_dir), *extra])


def test_missing_section_names_it(tmp_path):
    p = tmp_path / "broken.ini"
    p.write_text("[time]\nnt = 10\ndt = 0.001\n")
    cfg = ExperimentConfig.load(p)
    with pytest.raises(ConfigError, match=r"\[grid\]"):
        cfg.grid()


def test_config_error_exit_code(tmp_path):
    p = tmp_path / "broken.ini"
    p.write_text("[grid]\nnx = 4\n")
    assert main(["forward", "--config", str(p), "--output-dir", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path):
    bad = BASE.replace("dt = 0.004", "dt = 0.02")  # violates CFL
    p = tmp_path / "bad.ini"
    p.write_text(bad)
    assert main(["forward", "--config", str(p), "--output-dir", str(tmp_path)]) == 2


def test_forward_moveout_follows_geometry(config_path, tmp_path):
    out = tmp_path / "fwd"
    assert run("forward", config_path, out) == 0
    shot = read_shot_file(out / "shot_000.gather")
    # picking oracle: differential first breaks across the spread equal the
    # hyperbolic distance differences over c (the wavelet onset cancels)
    src = np.array([200.0, 40.0])
    rec = np.array([[40.0 + 90.0 * i, 720.0] for i in range(9)])
    dist = np.linalg.norm(rec - src, axis=1)
    picks = np.array([first_break(shot.samples[r], shot.time.dt) for r in range(9)])
    predicted = (dist - dist[0]) / 2000.0
    measured = picks - picks[0]
    assert np.abs(measured - predicted).max() <= 2 * shot.time.dt


def test_zero_amplitude_wavelet_gives_zero_files(config_path, tmp_path):
    cfgtext = BASE + "\n"
    cfgtext = cfgtext.replace("[wavelet]\npeak_frequency = 8\ndelay = 0.2",
                              "[wavelet]\npeak_frequency = 8\ndelay = 0.2\namplitude = 0")
    p = tmp_path / "zero.ini"
    p.write_text(cfgtext)
    out = tmp_path / "zero_out"
    assert main(["forward", "--config", str(p), "--output-dir", str(out)]) == 0
    shot = read_shot_file(out / "shot_000.gather")
    assert np.all(shot.samples == 0.0)


def test_sensitivity_csv_minimum_at_zero(config_path, tmp_path):
    out = tmp_path / "sens"
    assert run("sensitivity", config_path, out) == 0
    rows = np.genfromtxt(out / "sensitivity.csv", delimiter=",", names=True)
    for col in ("J_l2", "J_intl2", "J_w2trace"):
        assert np.argmin(rows[col]) == len(rows) // 2


def test_noise_zero_amplitude_row(config_path, tmp_path):
    text = BASE.replace("[noise]", "[noise]\namplitude_rel = 0")
    p = tmp_path / "zn.ini"
    p.write_text(text)
    out = tmp_path / "noise0"
    assert main(["noise", "--config", str(p), "--output-dir", str(out)]) == 0
    rows = np.genfromtxt(out / "noise.csv", delimiter=",", names=True)
    assert np.all(rows["w2_squared"] < 1e-20)


def test_masolve_uniform(config_path, tmp_path):
    text = BASE.replace("densities = translate", "densities = uniform")
    p = tmp_path / "mu.ini"
    p.write_text(text)
    out = tmp_path / "ma"
    assert main(["ma-solve", "--config", str(p), "--output-dir", str(out)]) == 0
    rows = np.genfromtxt(out / "ma_diagnostics.csv", delimiter=",", names=True)
    assert rows["w2_squared"] < 1e-6


def test_tomo_roundtrip_csv(config_path, tmp_path):
    out = tmp_path / "tomo"
    assert run("tomo", config_path, out) == 0
    rows = np.genfromtxt(out / "profile.csv", delimiter=",", names=True)
    rel = np.abs(rows["v_recovered"] - rows["v_true"]) / rows["v_true"]
    assert rel.max() < 0.01


def test_lsrtm_residual_strictly_decreasing(config_path, tmp_path):
    out = tmp_path / "lsrtm"
    assert run("lsrtm", config_path, out) == 0
    rows = np.genfromtxt(out / "lsrtm_convergence.csv", delimiter=",", names=True)
    resid = rows["data_residual"]
    assert np.all(np.diff(resid) < 0)


def test_invert_smoke_and_resume(config_path, tmp_path):
    out = tmp_path / "inv"
    assert run("invert", config_path, out) == 0
    assert (out / "history.csv").exists()
    rows = np.genfromtxt(out / "history.csv", delimiter=",", names=True)
    assert rows["J"][-1] < rows["J"][0]
    snaps_before = sorted(out.glob("model_iter_*.grid"))
    assert snaps_before
    # resume: raising max_iters continues from the last snapshot
    text = BASE.replace("max_iters = 2", "max_iters = 3")
    p2 = tmp_path / "resume.ini"
    p2.write_text(text)
    assert main(["invert", "--config", str(p2), "--output-dir", str(out)]) == 0


def test_rng_is_counter_based_philox():
    r1 = make_rng(7)
    r2 = make_rng(7)
    assert r1.bit_generator.state["bit_generator"] == "Philox"
    assert np.array_equal(r1.random(16), r2.random(16))


def test_csv_roundtrip_and_pgm_format(tmp_path, rng):
    rows = [(1, 0.5), (2, float(np.pi))]
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], rows)
    back = np.genfromtxt(path, delimiter=",", names=True)
    assert back["b"][1] == np.pi  # %.17g round-trips float64 exactly

    img = tmp_path / "t.pgm"
    write_pgm(img, rng.standard_normal((7, 5)))
    data = img.read_bytes()
    assert data.startswith(b"P5\n5 7\n255\n")
    assert len(data) == len(b"P5\n5 7\n255\n") + 35


def test_repeated_runs_bitwise_identical(config_path, tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"det_{tag}"
        assert run("sensitivity", config_path, out) == 0
        assert run("noise", config_path, out) == 0
        outs.append((out / "sensitivity.csv").read_bytes() + (out / "noise.csv").read_bytes())
    assert outs[0] == outs[1]
