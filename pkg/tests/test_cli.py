import json
import time

import numpy as np
import pytest

from wfp.cli import DESK, build_parser, main
from wfp.datagen import read_dataset
from wfp.fields import Grid, SpatialField, read_field, write_field
from wfp.network import ActivationSpec, GatedNetParams, load_checkpoint
from wfp.pipeline import SpectralLeakage


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("WFP_THREADS", raising=False)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


SMALL = ["--grid", 256]


@pytest.fixture
def trained(work):
    assert run("gen-data", "--n", 50, *SMALL, "--out", "d.wfpd") == 0
    assert run("train", "--data", "d.wfpd", "--epochs", 50, "--hidden", 16, "--n-test", 10, "--out", "m.wfpm") == 0
    return work


def test_smoke_pipeline(work):
    start = time.time()
    assert run("gen-data", "--n", 50, *SMALL, "--out", "d.wfpd") == 0
    assert run("train", "--data", "d.wfpd", "--epochs", 50, "--hidden", 32, "--n-test", 10, "--out", "m.wfpm") == 0
    assert run("infer", "--model", "m.wfpm", "--init-k", 30, *SMALL, "--out", "inf") == 0
    assert run("eval", "--model", "m.wfpm", "--grid", 256, "--n-media", 3, "--out", "ev.csv") == 0
    assert time.time() - start < 300
    assert len(read_dataset("d.wfpd")) == 50
    loss = (work / "m.wfpm.loss.csv").read_text().splitlines()
    assert loss[0] == "epoch,train_mse,test_mse" and len(loss) == 51
    assert read_field("inf.u.wfp").grid == Grid(1, 256)
    rows = (work / "ev.csv").read_text().splitlines()
    assert rows[0] == "run_id,index,k,L1,L2,max,rel_L2" and len(rows) == 4


def test_infer_with_reference_and_rollout(trained):
    assert run("solve-ref", "--init-k", 30, *SMALL, "--t-final", 0.02, "--out", "ref") == 0
    assert run("infer", "--model", "m.wfpm", "--init-k", 30, *SMALL, "--reference", "ref.u.wfp", "--out", "inf") == 0
    row = json.loads((trained / "inf.metrics.jsonl").read_text())
    assert set(row) >= {"run_id", "t", "L1", "L2", "max", "rel_L2"}
    assert row["t"] == pytest.approx(0.02)
    assert run("infer", "--model", "m.wfpm", "--init-k", 30, *SMALL, "--steps", 3, "--out", "roll") == 0
    assert json.loads((trained / "roll.metrics.jsonl").read_text())["t"] == pytest.approx(0.06)


def test_infer_from_field_files(trained):
    g = Grid(1, 256)
    (x,) = g.coords()
    write_field("f.wfp", SpatialField(g, np.sin(2 * np.pi * 25 * x)))
    write_field("c2.wfp", SpatialField(g, np.full(256, 1.01)))
    assert run("infer", "--model", "m.wfpm", "--init-field", "f.wfp", "--medium", "c2.wfp", "--out", "o") == 0
    assert read_field("o.v.wfp").grid == g


def test_solve_ref_energy_csv(work):
    assert run("solve-ref", "--init-k", 5, "--grid", 128, "--t-final", 0.05, "--out", "r") == 0
    lines = (work / "r.energy.csv").read_text().splitlines()
    assert lines[0] == "t,E,E_rel_drift"
    assert max(abs(float(l.split(",")[2])) for l in lines[1:]) < 1e-10


def test_verify_theorem_eps_zero(work):
    assert run("verify-theorem", "--eps", 0, "--n", 1024, "--timeline", 3, "--out", "th.csv") == 0
    lines = (work / "th.csv").read_text().splitlines()
    assert lines[0].split(",") == [
        "eps", "T", "k0", "n1", "eta", "abs_err", "err_over_eta",
        "u_approx_re", "u_approx_im", "u_true_re", "u_true_im",
    ]
    assert len(lines) == 1 + len(DESK["n1"])
    for line in lines[1:]:
        assert float(line.split(",")[5]) < 1e-12
    assert (work / "th.csv.timeline.csv").read_text().startswith("t,k0,abs_u")


def test_eval_ood(trained):
    assert run("eval-ood", "--model", "m.wfpm", "--grid", 256, "--levels", "0.03,0.1", "--n-media", 2, "--out", "o.csv") == 0
    lines = (trained / "o.csv").read_text().splitlines()
    assert lines[0] == "level,mean_l1,std_l1,n_media,skipped,spearman_rho" and len(lines) == 3
    with pytest.warns(SpectralLeakage):
        assert run("eval-ood", "--model", "m.wfpm", "--grid", 256, "--sweep", "delta", "--levels", "0.005,0.2", "--n-media", 1, "--out", "d.csv") == 0


def test_epochs_zero_keeps_initialization(work):
    assert run("gen-data", "--n", 5, *SMALL, "--out", "d.wfpd") == 0
    assert run("train", "--data", "d.wfpd", "--epochs", 0, "--hidden", 8, "--seed", 3, "--out", "z.wfpm") == 0
    params, meta = load_checkpoint("z.wfpm")
    init = GatedNetParams.init(meta.in_dim, 8, meta.out_dim, ActivationSpec(), seed=3)
    for a, b in zip(params.arrays(), init.arrays()):
        assert np.array_equal(a, b)
    assert (work / "z.wfpm.loss.csv").read_text() == "epoch,train_mse,test_mse\n"


def test_reruns_are_byte_identical(work):
    for tag in ("a", "b"):
        assert run("gen-data", "--n", 8, *SMALL, "--seed", 4, "--out", f"{tag}.wfpd") == 0
        assert run("train", "--data", f"{tag}.wfpd", "--epochs", 3, "--hidden", 8, "--n-test", 2, "--out", f"{tag}.wfpm") == 0
        assert run("eval", "--model", f"{tag}.wfpm", "--grid", 256, "--n-media", 2, "--out", f"{tag}.csv") == 0
    for suffix in (".wfpd", ".wfpm", ".wfpm.loss.csv"):
        assert (work / f"a{suffix}").read_bytes() == (work / f"b{suffix}").read_bytes()
    # run ids hash the config, which differs only in the model path
    strip = lambda p: [l.split(",", 1)[1] for l in p.read_text().splitlines()[1:]]
    assert strip(work / "a.csv") == strip(work / "b.csv")
    assert (work / "a.wfpd.runlog").exists()


def test_config_file_layering(work):
    (work / "c.cfg").write_text("# small run\nn_samples = 3\ngrid_n = 256\nseed = 9\n")
    assert run("gen-data", "--config", "c.cfg", "--n", 4, "--out", "d.wfpd") == 0
    ds = read_dataset("d.wfpd")
    assert len(ds) == 4  # flag beats file
    assert run("gen-data", "--n", 4, "--grid", 256, "--out", "d0.wfpd") == 0
    assert not np.array_equal(ds.k0, read_dataset("d0.wfpd").k0)  # seed came from the file


class TestErrors:
    def test_unknown_config_key(self, work, capsys):
        (work / "c.cfg").write_text("hidden = 12\nbogus = 3\n")
        assert run("gen-data", "--config", "c.cfg", "--out", "d") == 2
        err = error_of(capsys)
        assert err["error"] == "ConfigError" and "bogus" in err["message"]

    def test_bad_config_value(self, work, capsys):
        (work / "c.cfg").write_text("hidden = many\n")
        assert run("gen-data", "--config", "c.cfg", "--out", "d") == 2

    def test_missing_file(self, work, capsys):
        assert run("train", "--data", "nope.wfpd", "--out", "m") == 3
        assert error_of(capsys)["error"] == "IoError"

    def test_corrupt_model(self, work, capsys):
        (work / "bad.wfpm").write_bytes(b"garbage" * 20)
        assert run("infer", "--model", "bad.wfpm", "--init-k", 20, "--out", "o") == 3

    def test_missing_initial(self, trained, capsys):
        assert run("infer", "--model", "m.wfpm", "--out", "o") == 2

    def test_module_error_exit_one(self, work, capsys):
        assert run("solve-ref", "--init-k", 200, "--grid", 128, "--out", "r") == 1
        assert error_of(capsys)["error"] == "NyquistViolation"

    def test_bad_thread_env(self, work, capsys, monkeypatch):
        monkeypatch.setenv("WFP_THREADS", "lots")
        assert run("solve-ref", "--init-k", 3, "--grid", 64, "--out", "r") == 2


def test_thread_env_accepted(work, monkeypatch):
    monkeypatch.setenv("WFP_THREADS", "1")
    assert run("solve-ref", "--init-k", 3, "--grid", 64, "--threads", 4, "--out", "r") == 0


@pytest.mark.parametrize("cmd", ["gen-data", "train", "infer", "solve-ref", "verify-theorem", "eval", "eval-ood"])
def test_help_lists_defaults(cmd, capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([cmd, "--help"])
    text = capsys.readouterr().out
    assert "--out" in text and "--config" in text
    if cmd == "train":
        assert f"(default: {DESK['hidden']})" in text
        assert f"(default: {DESK['epochs']})" in text
    if cmd == "gen-data":
        assert f"(default: {DESK['n_samples']})" in text
