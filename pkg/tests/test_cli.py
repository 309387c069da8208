import subprocess
import sys

import pytest

from segcascade import acoustics
from segcascade.cascade import CascadeConfig
from segcascade.cli import main
from segcascade.corpus import load_gold, read_transcriptions
from segcascade.lattice import Alphabet, read_lattice_interned


def run(*argv):
    assert main([str(a) for a in argv]) == 0


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    w = tmp_path_factory.mktemp("cli")
    run("synth", "spec", "--out", w / "spec.conf", "--labels", 3, "--count", 12,
        "--max-duration", 5, "--noise", 0.5)
    run("synth", "generate", "--spec", w / "spec.conf", "--out", w / "data/train", "--prefix", "tr")
    run("synth", "generate", "--spec", w / "spec.conf", "--out", w / "data/dev", "--prefix", "dv",
        "--seed", 2, "--count", 5)
    labels = w / "data/train/labels.txt"
    run("acoustics", "train", "--frames", w / "data/train/frames", "--gold",
        w / "data/train/gold.txt", "--labels", labels, "--out", w / "clf.txt", "--epochs", 2,
        "--subsample")
    for split in ("train", "dev"):
        run("acoustics", "classify", "--model", w / "clf.txt", "--frames",
            w / f"data/{split}/frames", "--labels", labels, "--out", w / f"data/{split}/posteriors")
    CascadeConfig.default(max_duration=6, epochs=(1, 1, 1)).save(w / "cascade.conf")
    run("cascade", "train", "--config", w / "cascade.conf", "--data", w / "data", "--out",
        w / "models")
    return w


def test_generated_corpus_layout(workdir):
    train = workdir / "data/train"
    assert len(list((train / "frames").glob("*.frames"))) == 12
    assert len(list((train / "posteriors").glob("*.post"))) == 12
    gold = read_transcriptions(train / "gold.txt")
    assert sorted(gold) == [f"tr{i:02d}" for i in range(12)]
    post = acoustics.read_posteriors(train / "posteriors/tr00.post")
    assert list(post.alphabet) == ["p0", "p1", "p2"]


def test_cascade_train_outputs(workdir):
    m = workdir / "models"
    for name in ("model1.txt", "model2.txt", "model3.txt", "bigram.lm", "training.tsv",
                 "epochs.tsv", "cascade.conf"):
        assert (m / name).exists(), name
    rows = (m / "training.tsv").read_text().splitlines()
    assert rows[0].startswith("pass\ttrain_hours\tdev_per") and len(rows) == 4
    assert len(list((m / "lattices2").glob("*.lat"))) == 17


def test_decode_from_posteriors_and_frames(workdir, capsys):
    w = workdir
    run("cascade", "decode", "--config", w / "cascade.conf", "--models", w / "models", "--in",
        w / "data/dev/posteriors", "--out", w / "hyp.txt", "--timing", w / "timing.tsv")
    ab = Alphabet(["p0", "p1", "p2"])
    hyp = load_gold(w / "hyp.txt", ab)
    gold = load_gold(w / "data/dev/gold.txt", ab)
    assert sorted(hyp) == sorted(gold)
    for uid in gold:
        assert hyp[uid].end == gold[uid].end
    stages = dict(line.split("\t") for line in (w / "timing.tsv").read_text().splitlines()[1:])
    assert set(stages) == {"pass1", "pass2", "pass3", "decoding", "feed_forward", "total"}
    assert float(stages["feed_forward"]) == 0.0
    run("cascade", "decode", "--config", w / "cascade.conf", "--models", w / "models", "--in",
        w / "data/dev/frames", "--classifier", w / "clf.txt", "--timing", w / "timing2.tsv")
    out = capsys.readouterr().out
    assert out.count("#utt") == 5
    stages = dict(line.split("\t") for line in (w / "timing2.tsv").read_text().splitlines()[1:])
    assert float(stages["feed_forward"]) > 0.0


def test_eval_reports_per_and_oracle(workdir, capsys):
    w = workdir
    run("eval", "--config", w / "cascade.conf", "--models", w / "models", "--posteriors",
        w / "data/dev/posteriors", "--gold", w / "data/dev/gold.txt", "--out", w / "eval.tsv")
    lines = (w / "eval.tsv").read_text().splitlines()
    assert lines[0] == "uid\tper\toracle\tdensity\trtf" and len(lines) == 7
    per, oracle = (float(x) for x in lines[-1].split("\t")[1:3])
    assert 0.0 <= oracle <= per
    assert capsys.readouterr().out.startswith("ALL\t")


def test_prune_command(workdir, capsys):
    lat = sorted((workdir / "models/lattices2").glob("*.lat"))[0]
    run("prune", "--method", "edge", "--alpha", 1.0, "--in", lat, "--out", workdir / "p.lat")
    out = capsys.readouterr().out
    fields = dict(f.split("=") for f in out.split())
    assert int(fields["edges_out"]) <= int(fields["edges_in"])
    fst, alphabet = read_lattice_interned(workdir / "p.lat")
    assert fst.num_edges == int(fields["edges_out"]) and fst.is_trimmed()


def test_single_pass_train_command(workdir, capsys):
    w = workdir
    run("train", "--pass-config", w / "cascade.conf", "--pass", 2, "--lattices",
        w / "models/lattices2", "--posteriors", w / "data/train/posteriors", "--gold",
        w / "data/train/gold.txt", "--dev", w / "data/dev/gold.txt", "--dev-posteriors",
        w / "data/dev/posteriors", "--out-model", w / "m2.txt", "--log", w / "m2.log")
    assert (w / "m2.txt").exists()
    assert len((w / "m2.log").read_text().splitlines()) == 1


def test_missing_inputs_exit_cleanly(tmp_path):
    (tmp_path / "labels.txt").write_text("a\nb\n")
    with pytest.raises(SystemExit, match="no \\*.frames"):
        main(["acoustics", "train", "--frames", str(tmp_path), "--gold", "g", "--labels",
              str(tmp_path / "labels.txt"), "--out", str(tmp_path / "c")])
    with pytest.raises(SystemExit):
        main([])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "segcascade", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "cascade" in r.stdout
