import hashlib
import json
import os

import numpy as np
import pytest

from sdtgan import tsr
from sdtgan.checks import REGISTRY
from sdtgan.cli import main

from conftest import small_model


def digest_dir(path):
    h = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        h.update(name.encode())
        with open(os.path.join(path, name), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A corpus plus a 4-step checkpoint on the 16x16 geometry."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-corpus", "--out", str(root), "--vocab", "8", "--F", "16", "--T", "16"]) == 0
    cfg = {"corpus": "corpus.json", "total_g_steps": 4, "checkpoint_interval": 2, "batch_size": 4,
           "n_probes": 8, "model": small_model().to_dict()}
    (root / "train.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(root / "train.json")]) == 0
    return root


def ckpt(workdir, step=4):
    return str(workdir / "checkpoints" / f"step_{step:06d}")


def test_make_corpus_defaults_and_bytes(tmp_path):
    assert main(["make-corpus", "--out", str(tmp_path / "a")]) == 0
    assert main(["make-corpus", "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "corpus.json").read_bytes()
    assert a == (tmp_path / "b" / "corpus.json").read_bytes()
    d = json.loads(a)
    assert (d["vocab_size"], d["F"], d["T"]) == (16, 64, 64)


def test_make_corpus_rejects_vocab_one(tmp_path, capsys):
    assert main(["make-corpus", "--out", str(tmp_path), "--vocab", "1"]) == 2
    assert "vocab" in capsys.readouterr().err


def test_unknown_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["make-corpus", "--out", str(tmp_path), "--colour", "red"])
    assert info.value.code == 2


def test_config_supplies_flag_defaults(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"vocab": 5, "F": 16, "T": 16}))
    assert main(["make-corpus", "--out", str(tmp_path), "--config", str(tmp_path / "c.json")]) == 0
    assert json.loads((tmp_path / "corpus.json").read_text())["vocab_size"] == 5
    (tmp_path / "bad.json").write_text(json.dumps({"vocabulary": 5}))
    with pytest.raises(SystemExit) as info:
        main(["make-corpus", "--out", str(tmp_path), "--config", str(tmp_path / "bad.json")])
    assert info.value.code == 2


def test_train_outputs(workdir):
    lines = (workdir / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 4 * 3
    assert sorted(os.listdir(workdir / "checkpoints")) == ["step_000000", "step_000002", "step_000004"]


def test_train_is_reproducible(workdir, tmp_path):
    cfg = json.loads((workdir / "train.json").read_text())
    cfg["corpus"] = str(workdir / "corpus.json")
    (tmp_path / "train.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "train.json")]) == 0
    assert digest_dir(tmp_path / "checkpoints" / "step_000004") == digest_dir(ckpt(workdir))
    assert (tmp_path / "train_log.jsonl").read_bytes() == (workdir / "train_log.jsonl").read_bytes()


def test_train_missing_corpus(tmp_path):
    (tmp_path / "t.json").write_text(json.dumps({"corpus": "nowhere.json"}))
    assert main(["train", "--config", str(tmp_path / "t.json")]) == 2


def test_train_nan_exits_3(workdir, tmp_path, capsys):
    bad = tmp_path / "bad_ckpt"
    src = ckpt(workdir, 2)
    os.makedirs(bad)
    for name in os.listdir(src):
        (bad / name).write_bytes(open(os.path.join(src, name), "rb").read())
    tsr.save(bad / "d.d3.b.tsr", np.array([np.nan], np.float32))
    cfg = json.loads((workdir / "train.json").read_text())
    cfg.update(corpus=str(workdir / "corpus.json"), checkpoint_dir=str(tmp_path / "ck"))
    (tmp_path / "t.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "t.json"), "--resume", str(bad)]) == 3
    err = capsys.readouterr().err
    assert "adv" in err and "step 2" in err


def test_generate_files_and_determinism(workdir, tmp_path, capsys):
    args = ["generate", "--ckpt", ckpt(workdir), "--caption", "tok3 tok7", "--n", "4", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    files = sorted(os.listdir(tmp_path / "a"))
    assert len(files) == 4 and all(f.endswith(f"_{i}.tsr") for i, f in enumerate(files))
    assert digest_dir(tmp_path / "a") == digest_dir(tmp_path / "b")
    assert tsr.load(tmp_path / "a" / files[0]).shape == (16, 16, 1)
    times = [float(line.split("\t")[1].split()[0]) for line in out.splitlines()]
    assert len(times) == 4 and max(times) < 1000


def test_generate_unknown_token(workdir, tmp_path, capsys):
    assert main(["generate", "--ckpt", ckpt(workdir), "--caption", "tok3 tok99", "--out", str(tmp_path)]) == 2
    assert "tok0 tok1" in capsys.readouterr().err


def test_eval_json_and_determinism(workdir, tmp_path, capsys):
    args = ["eval", "--ckpt", ckpt(workdir), "--corpus", str(workdir / "corpus.json"), "--n", "64"]
    assert main(args + ["--out", str(tmp_path / "a.json")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.json")]) == 0
    a, b = (json.loads((tmp_path / n).read_text()) for n in ("a.json", "b.json"))
    assert set(a) == {"fd_stub", "is_stub", "kl_stub", "alignment_energy", "mean_ms", "params"}
    a.pop("mean_ms"), b.pop("mean_ms")
    assert a == b


def test_eval_real_vs_real_noise_floor(workdir, capsys):
    capsys.readouterr()
    assert main(["eval", "--ckpt", ckpt(workdir), "--corpus", str(workdir / "corpus.json"),
                 "--n", "256", "--reference", "real"]) == 0
    assert json.loads(capsys.readouterr().out)["fd_stub"] < 0.5


def test_eval_small_n_warns_but_succeeds(workdir, capsys):
    from sdtgan.metrics import SingularCovarianceWarning
    with pytest.warns(SingularCovarianceWarning):
        assert main(["eval", "--ckpt", ckpt(workdir), "--corpus", str(workdir / "corpus.json"), "--n", "8"]) == 0
    assert "regularized" in capsys.readouterr().err


def test_grad_check_tensor_scope_lists_every_op(capsys):
    assert main(["grad-check", "--scope", "tensor"]) == 0
    out = capsys.readouterr().out
    listed = {line.split()[0] for line in out.splitlines()[1:]}
    assert listed == {n for n, c in REGISTRY.items() if c.scope == "tensor"}
    assert "FAIL" not in out


def test_grad_check_detects_fault(capsys):
    assert main(["grad-check", "--scope", "losses", "--inject-fault", "occ_loss"]) != 0
    assert "FAIL" in capsys.readouterr().out


def test_inspect_attention(workdir, tmp_path, capsys):
    from sdtgan.models import ModelConfig
    out = tmp_path / "maps"
    assert main(["inspect-attention", "--ckpt", ckpt(workdir), "--caption", "tok1 tok2 tok5",
                 "--out", str(out)]) == 0
    files = sorted(os.listdir(out))
    per_kind = {"self": 3, "word": 3, "sentence": 3}
    expected = sum(per_kind[b] for attn in small_model().g_attention() for b in attn)
    assert len(files) == expected
    f2t = tsr.load(out / "g0_self_f2t.tsr")
    np.testing.assert_allclose(f2t.sum(-1), 1.0, atol=1e-5)
    assert abs(tsr.load(out / "g0_word_fused_multi.tsr").sum() - 3) < 1e-3
    again = tmp_path / "again"
    main(["inspect-attention", "--ckpt", ckpt(workdir), "--caption", "tok1 tok2 tok5", "--out", str(again)])
    assert digest_dir(out) == digest_dir(again)
