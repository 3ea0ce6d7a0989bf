import json
import shutil
import subprocess
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from tot.chains import DiscreteLatentChain
from tot.cli import main, sub_seed
from tot.synthgen import load_dataset, save_dataset
from tot.train import load_checkpoint

SMALL_MODEL = {"t_in": 4, "horizon": 2, "enc_hidden": [16], "dec_hidden": [16], "fc_hidden": [16],
               "red_hidden": [16], "rnet_hidden": [8]}


def write(path, obj):
    Path(path).write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A generated dataset, a config and a trained checkpoint shared by the module."""
    d = tmp_path_factory.mktemp("cli")
    cfg = write(d / "cfg.json", {"gen": {"total_steps": 2000, "validation_size": 200},
                                 "model": SMALL_MODEL, "train": {"epochs": 1, "batch_size": 64},
                                 "baselines": {"hidden": [16], "epochs": 2}})
    assert main(["gen", "--preset", "A", "--config", cfg, "--out", str(d / "a.totd")]) == 0
    assert main(["train", "--data", str(d / "a.totd"), "--config", cfg, "--out", str(d / "a.ckpt")]) == 0
    return d, cfg


def test_gen_presets(tmp_path):
    cfg = write(tmp_path / "c.json", {"gen": {"total_steps": 300, "validation_size": 50}})
    for name, obs in (("A", True), ("B", False)):
        out = tmp_path / f"{name}.totd"
        assert main(["gen", "--preset", name, "--config", cfg, "--out", str(out)]) == 0
        ds = load_dataset(out)
        assert (ds.n, ds.config.lag, ds.config.obs_edges) == (5, 1, obs)
        assert ds.config.seed == sub_seed(0, "generation")
        man = json.loads((tmp_path / f"{name}.totd.manifest.json").read_text())
        assert man["subcommand"] == "gen" and man["config"]["preset"] == name
        assert man["artifacts"][str(out)] == __import__("hashlib").sha256(out.read_bytes()).hexdigest()


def test_gen_errors(tmp_path, capsys):
    assert main(["gen", "--preset", "Z", "--out", str(tmp_path / "z")]) == 2
    assert "A, B, C, D" in capsys.readouterr().err
    bad = write(tmp_path / "bad.json", {"gen": {"n_latents": 3}})
    assert main(["gen", "--config", bad, "--out", str(tmp_path / "z")]) == 2
    assert "config.gen.n_latents: unknown field" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{")
    assert main(["gen", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path / "z")]) == 2
    with pytest.raises(SystemExit) as e:
        main(["gen"])
    assert e.value.code == 2


def test_seed_streams_are_independent():
    assert sub_seed(0, "init") != sub_seed(0, "training") != sub_seed(0, "generation")
    assert sub_seed(1, "init") != sub_seed(0, "init") and sub_seed(3, "eval") == sub_seed(3, "eval")


def test_train_outputs_and_missing_data(work, tmp_path):
    d, cfg = work
    state, tcfg = load_checkpoint(d / "a.ckpt")
    assert state.epoch == 1 and tcfg.epochs == 1
    lines = (d / "a.ckpt.losses.csv").read_text().splitlines()
    assert lines[0] == "epoch,l_y,l_r,l_kl_z,l_kl_o,l_s,total" and len(lines) == 2
    assert main(["train", "--data", str(tmp_path / "nope.totd"), "--out", str(tmp_path / "x.ckpt")]) == 4


def test_train_smoke_under_a_minute(work, tmp_path):
    import time
    d, _ = work
    t0 = time.perf_counter()
    assert main(["train", "--data", str(d / "a.totd"), "--epochs", "1", "--out", str(tmp_path / "t.ckpt")]) == 0
    assert time.perf_counter() - t0 < 60


def test_train_sign_mode_flag(work, tmp_path):
    d, cfg = work
    out = tmp_path / "v.ckpt"
    assert main(["train", "--data", str(d / "a.totd"), "--config", cfg, "--max-steps", "2",
                 "--sign-mode", "verbatim", "--out", str(out)]) == 0
    assert load_checkpoint(out)[1].weights.sign_mode == "verbatim"


def test_resume_equals_uninterrupted(work, tmp_path):
    d, cfg = work
    data = str(d / "a.totd")
    assert main(["train", "--data", data, "--config", cfg, "--max-steps", "10", "--out", str(tmp_path / "p.ckpt")]) == 0
    assert main(["train", "--data", data, "--resume", str(tmp_path / "p.ckpt"), "--out", str(tmp_path / "r.ckpt")]) == 0
    a, _ = load_checkpoint(tmp_path / "r.ckpt")
    b, _ = load_checkpoint(d / "a.ckpt")
    assert all(a.model.params[k].tobytes() == b.model.params[k].tobytes() for k in a.model.params)


def test_eval_report(work, tmp_path):
    d, _ = work
    out = tmp_path / "e.json"
    assert main(["eval", "--ckpt", str(d / "a.ckpt"), "--data", str(d / "a.totd"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert set(rep) == {"mse", "mae", "n_windows", "mcc", "mcc_assignment"}
    assert 0 <= rep["mcc"] <= 1 and sorted(rep["mcc_assignment"]) == list(range(5))
    assert rep["n_windows"] == 200 - 2 + 1 and rep["mse"] > 0


def test_eval_n_mismatch(work, tmp_path):
    d, _ = work
    cfg = write(tmp_path / "c.json", {"gen": {"n": 3, "total_steps": 300, "validation_size": 50}})
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "n3.totd")]) == 0
    assert main(["eval", "--ckpt", str(d / "a.ckpt"), "--data", str(tmp_path / "n3.totd"),
                 "--out", str(tmp_path / "e.json")]) == 2


def test_online_k0_leaves_checkpoint_unchanged(work, tmp_path):
    d, _ = work
    out, ck = tmp_path / "o.csv", tmp_path / "o.ckpt"
    assert main(["online", "--ckpt", str(d / "a.ckpt"), "--data", str(d / "a.totd"), "--k-steps", "0",
                 "--out", str(out), "--out-ckpt", str(ck)]) == 0
    a, _ = load_checkpoint(ck)
    b, _ = load_checkpoint(d / "a.ckpt")
    assert all(a.model.params[k].tobytes() == b.model.params[k].tobytes() for k in a.model.params)
    assert len(out.read_text().splitlines()) == 1 + 2000 - (4 - 1 + 2)


def test_risk_lab_channels(tmp_path):
    chain = DiscreteLatentChain.random(3, 4, np.random.default_rng(0), floor=0.05)
    spec = write(tmp_path / "chain.json", chain.to_dict())
    reps = {}
    for ch in ("identity", "bijection", "independent", "noisy"):
        out = tmp_path / f"{ch}.json"
        assert main(["risk-lab", "--chain", spec, "--channel", ch, "--out", str(out)]) == 0
        reps[ch] = json.loads(out.read_text())["report"]
    assert abs(reps["bijection"]["r_zhat"] - reps["identity"]["r_z"]) <= 1e-12
    assert abs(reps["independent"]["r_zhat"] - reps["independent"]["r_o"]) <= 1e-12
    assert reps["noisy"]["decomposition_residual"] <= 1e-12
    assert main(["risk-lab", "--chain", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 4


def test_operator_lab_outcomes(tmp_path):
    out = tmp_path / "op.json"
    assert main(["operator-lab", "--seed", "1", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["trivial"] is False and rep["result"]["max_kernel_error"] <= 1e-8
    assert main(["operator-lab", "--k", "1", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["trivial"] is True
    base = DiscreteLatentChain.random(3, 3, np.random.default_rng(2), floor=0.05)
    P_x = base.P_x.copy()
    P_x[2] = P_x[0]
    spec = write(tmp_path / "deg.json", DiscreteLatentChain(base.P_z, P_x).to_dict())
    assert main(["operator-lab", "--chain", spec, "--out", str(out)]) == 3
    assert json.loads(out.read_text())["error"].startswith("UniquenessError")


def test_baselines_and_missing_latents(work, tmp_path):
    d, cfg = work
    out = tmp_path / "b.json"
    assert main(["baselines", "--data", str(d / "a.totd"), "--ckpt", str(d / "a.ckpt"), "--config", cfg,
                 "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert set(rep["mse"]) == {"baseline", "oracle", "tot"}
    assert (tmp_path / "b.json.csv").read_text().splitlines()[0] == "regime,mse,mae"
    ds = load_dataset(d / "a.totd")
    save_dataset(replace(ds, has_latents=False, z=np.zeros_like(ds.z)), tmp_path / "noz.totd")
    assert main(["baselines", "--data", str(tmp_path / "noz.totd"), "--ckpt", str(d / "a.ckpt"),
                 "--out", str(tmp_path / "nb.json")]) == 2


def test_console_script_installed(tmp_path):
    exe = shutil.which("tot")
    if exe is None:
        pytest.skip("console script not on PATH")
    r = subprocess.run([exe, "risk-lab", "--out", str(tmp_path / "r.json")], capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "r.json.manifest.json").exists()
