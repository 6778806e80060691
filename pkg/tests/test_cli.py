"""The ``nocs-forge`` command line: config resolution, exit codes and each command's outputs."""

from __future__ import annotations

import csv
import json
import shutil
import subprocess
import sys

import pytest

from nocs_forge.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, SEED_ENV, ConfigError, build_parser, main, resolve
from nocs_forge.datagen.dataset_io import read_dataset, view_stem
from nocs_forge.denoiser import checkpoint as ckpt
from nocs_forge.evaluation import GRID_HEADER

TINY_TRAIN = ["--steps", "4", "--batch-size", "2", "--crop-size", "16", "--base-width", "8", "--pca-dim", "2"]
FAST_INFER = ["--n-noise", "2", "--steps", "2"]


def files_of(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def run(*argv) -> int:
    return main([str(a) for a in argv])


def last_json_line(text: str) -> dict:
    return json.loads([ln for ln in text.splitlines() if ln.startswith("{")][-1])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert run("render", "--out", out, "--categories", "cylinder,cone", "--subdiv", "0", "--seed", "0") == EXIT_OK
    return out


@pytest.fixture(scope="module")
def checkpoint(dataset):
    out = dataset.parent / "tiny.nfck"
    assert run("train", "--data", dataset, "--out", out, *TINY_TRAIN) == EXIT_OK
    return out


# ── configuration ────────────────────────────────────────────────────────

class TestResolve:
    def parse(self, *argv):
        return build_parser().parse_args([str(a) for a in argv])

    def test_defaults(self):
        cfg = resolve(self.parse("infer", "--checkpoint", "c", "--data", "d", "--out", "o"), env={})
        assert cfg["n_noise"] == 6 and cfg["steps"] == 10 and cfg["seed"] == 0
        cfg = resolve(self.parse("render", "--out", "o"), env={})
        assert cfg["subdiv"] == 2

    def test_env_seed_fallback(self):
        args = self.parse("render", "--out", "o")
        assert resolve(args, env={SEED_ENV: "17"})["seed"] == 17
        assert resolve(self.parse("render", "--out", "o", "--seed", "3"), env={SEED_ENV: "17"})["seed"] == 3
        with pytest.raises(ConfigError):
            resolve(args, env={SEED_ENV: "abc"})

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"out": "from_file", "instances": 4, "seed": 9}))
        cfg = resolve(self.parse("render", "--config", path, "--instances", "2"), env={SEED_ENV: "1"})
        assert cfg["instances"] == 2 and cfg["seed"] == 9 and str(cfg["out"]) == "from_file"

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"out": "x", "colour": "red"}))
        with pytest.raises(ConfigError):
            resolve(self.parse("render", "--config", path), env={})

    @pytest.mark.parametrize(
        "argv",
        [
            ["render", "--out", "o", "--subdiv", "9"],
            ["render", "--out", "o", "--categories", "teapot"],
            ["train", "--data", "d", "--out", "o", "--p-drop", "1.0"],
            ["train", "--data", "d", "--out", "o", "--steps", "0"],
            ["train", "--data", "d", "--out", "o", "--loss-weighting", "snr"],
            ["infer", "--checkpoint", "c", "--data", "d", "--out", "o", "--n-noise", "0"],
            ["infer", "--checkpoint", "c", "--data", "d", "--out", "o", "--modalities", "normal,sonar"],
            ["infer", "--checkpoint", "c", "--out", "o"],
            ["eval", "--data", "d", "--out", "o"],
            ["eval", "--data", "d", "--out", "o", "--grid", "--checkpoint", "c", "--noises", "0"],
        ],
    )
    def test_validation(self, argv):
        with pytest.raises(ConfigError):
            resolve(self.parse(*argv), env={})


# ── exit codes ───────────────────────────────────────────────────────────

class TestExitCodes:
    def test_usage_error(self, capsys):
        assert main(["render", "--instances", "many"]) == EXIT_INVALID
        assert main(["teleport"]) == EXIT_INVALID

    def test_missing_required(self, capsys):
        assert run("render") == EXIT_INVALID
        assert "needs --out" in capsys.readouterr().err

    def test_missing_checkpoint(self, dataset, tmp_path, capsys):
        assert run("infer", "--checkpoint", tmp_path / "none.nfck", "--data", dataset, "--out", tmp_path / "p.json") == EXIT_INVALID

    def test_corrupt_dataset(self, dataset, tmp_path):
        bad = tmp_path / "bad"
        shutil.copytree(dataset, bad)
        (bad / "meta.json").write_text("{")
        assert run("eval", "--data", bad, "--predictions", tmp_path / "p.json", "--out", tmp_path / "m.csv") == EXIT_INVALID

    def test_runtime_failure(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run("render", "--out", blocker / "data", "--categories", "box", "--subdiv", "0") == EXIT_RUNTIME

    def test_console_script(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "nocs_forge.cli", "render"], capture_output=True, text=True, timeout=120
        )
        assert proc.returncode == EXIT_INVALID


# ── render ───────────────────────────────────────────────────────────────

class TestRender:
    def test_twelve_views_per_instance(self, dataset):
        ds = read_dataset(dataset)
        assert len(ds) == 24 and ds.categories == ["cylinder", "cone"]

    def test_provenance(self, dataset):
        prov = json.loads((dataset / "provenance.json").read_text())
        assert prov["command"] == "render" and prov["seed"] == 0 and prov["checkpoint_hash"] is None
        assert len(prov["config_hash"]) == 16

    def test_byte_identical_rerun(self, dataset, tmp_path, capsys):
        again = tmp_path / "again"
        assert run("render", "--out", again, "--categories", "cylinder,cone", "--subdiv", "0", "--seed", "0") == EXIT_OK
        a, b = files_of(dataset), files_of(again)
        a.pop(next(k for k in a if k.name == "provenance.json"))
        b.pop(next(k for k in b if k.name == "provenance.json"))
        assert a == b

    def test_env_seed_changes_output(self, dataset, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(SEED_ENV, "5")
        other = tmp_path / "other"
        assert run("render", "--out", other, "--categories", "cylinder,cone", "--subdiv", "0") == EXIT_OK
        assert json.loads((other / "provenance.json").read_text())["seed"] == 5
        assert files_of(other) != files_of(dataset)


# ── train ────────────────────────────────────────────────────────────────

class TestTrain:
    def test_outputs(self, checkpoint):
        ck = ckpt.load(checkpoint)
        assert len(ck.losses) == 4
        assert ck.meta["categories"] == ["cylinder", "cone"]
        assert ck.meta["provenance"]["command"] == "train"
        assert ck.pca is not None and ck.pca.n_components == 2
        with open(checkpoint.with_suffix(".loss.csv")) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "loss"] and len(rows) == 5

    def test_stop_and_resume(self, dataset, checkpoint, tmp_path, capsys):
        part, done = tmp_path / "part.nfck", tmp_path / "done.nfck"
        assert run("train", "--data", dataset, "--out", part, "--stop-at", "2", *TINY_TRAIN) == EXIT_OK
        assert len(ckpt.load(part).losses) == 2
        assert run("train", "--data", dataset, "--out", done, "--resume", part, *TINY_TRAIN) == EXIT_OK
        full, resumed = ckpt.load(checkpoint), ckpt.load(done)
        assert list(resumed.losses) == list(full.losses)
        assert (resumed.params == full.params).all()

    def test_resume_with_other_config(self, dataset, checkpoint, tmp_path, capsys):
        argv = [a if a != "4" else "6" for a in TINY_TRAIN]
        assert run("train", "--data", dataset, "--out", tmp_path / "x.nfck", "--resume", checkpoint, *argv) == EXIT_INVALID


# ── infer, eval, plot ────────────────────────────────────────────────────

@pytest.fixture(scope="module")
def predictions(dataset, checkpoint):
    out = dataset.parent / "pred.json"
    assert run("infer", "--checkpoint", checkpoint, "--data", dataset, "--out", out, *FAST_INFER) == EXIT_OK
    return out


class TestInfer:
    def test_record_per_view(self, predictions, dataset, checkpoint):
        data = json.loads(predictions.read_text())
        assert data["provenance"]["checkpoint_hash"] == ckpt.file_hash(checkpoint)
        recs = data["records"]
        assert len(recs) == 24
        for r in recs:
            assert len(r["hypotheses"]) == 2
            assert r["confidence"] == max(h["confidence"] for h in r["hypotheses"])

    def test_same_seed_same_json(self, predictions, dataset, checkpoint, tmp_path, capsys):
        again = tmp_path / "again.json"
        assert run("infer", "--checkpoint", checkpoint, "--data", dataset, "--out", again, *FAST_INFER) == EXIT_OK
        assert json.loads(again.read_text())["records"] == json.loads(predictions.read_text())["records"]

    def test_thread_count_does_not_matter(self, predictions, dataset, checkpoint, tmp_path, capsys):
        one = tmp_path / "one.json"
        assert run("infer", "--checkpoint", checkpoint, "--data", dataset, "--out", one, "--threads", "1", *FAST_INFER) == EXIT_OK
        assert json.loads(one.read_text())["records"] == json.loads(predictions.read_text())["records"]

    def test_depth_only_with_outputs(self, dataset, checkpoint, tmp_path, capsys):
        out = tmp_path / "n.json"
        code = run(
            "infer", "--checkpoint", checkpoint, "--data", dataset, "--out", out, "--modalities", "normal",
            "--n-noise", "1", "--steps", "1", "--cloud-dir", tmp_path / "clouds", "--plots", tmp_path / "plots",
        )
        assert code == EXIT_OK
        assert len(list((tmp_path / "clouds").glob("*.ply"))) == 24
        assert len(list((tmp_path / "plots").glob("*_sphere.csv"))) == 24
        assert len(list((tmp_path / "plots").glob("*_overlay.png"))) == 24
        ply = next((tmp_path / "clouds").glob("*.ply")).read_text().splitlines()
        n = int(ply[2].split()[-1])
        assert ply[0] == "ply" and len(ply) == 7 + n

    def test_single_image_mode(self, dataset, checkpoint, tmp_path, capsys):
        ds = read_dataset(dataset)
        v = ds.views[0]
        stem = dataset / view_stem(ds.categories, v)
        dets = tmp_path / "dets.json"
        from nocs_forge.pipeline.estimate import write_detections
        from nocs_forge.pipeline.warp import Detection

        write_detections([Detection.from_mask(v.mask, v.category)], dets)
        intr = tmp_path / "k.json"
        intr.write_text(json.dumps(ds.intrinsics.to_dict()))
        depth = next(p for p in stem.parent.glob(stem.name + "*depth*"))
        out = tmp_path / "single.json"
        code = run("infer", "--checkpoint", checkpoint, "--depth", depth, "--intrinsics", intr, "--detections", dets,
                   "--out", out, *FAST_INFER)
        assert code == EXIT_OK
        recs = json.loads(out.read_text())["records"]
        assert [r["view"] for r in recs] == ["detection/000"]


class TestEval:
    def test_perfect_predictions(self, dataset, tmp_path, capsys):
        ds = read_dataset(dataset)
        preds = tmp_path / "perfect.json"
        preds.write_text(json.dumps({"records": [{"view": view_stem(ds.categories, v), "pose": v.pose.to_dict()} for v in ds.views]}))
        out = tmp_path / "m.csv"
        assert run("eval", "--data", dataset, "--predictions", preds, "--out", out) == EXIT_OK
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["category", "map_5_5", "map_10_5", "map_15_5"]
        assert [r[0] for r in rows[1:]] == ["cone", "cylinder", "mean"]
        assert all(float(x) == 1.0 for r in rows[1:] for x in r[1:])
        assert out.with_suffix(".provenance.json").exists()
        assert "provenance" in last_json_line(capsys.readouterr().out)

    def test_mismatched_counts(self, dataset, predictions, tmp_path):
        data = json.loads(predictions.read_text())
        data["records"] = data["records"][:-1]
        short = tmp_path / "short.json"
        short.write_text(json.dumps(data))
        assert run("eval", "--data", dataset, "--predictions", short, "--out", tmp_path / "m.csv") == EXIT_INVALID

    def test_grid(self, dataset, checkpoint, tmp_path, capsys):
        out = tmp_path / "grid.csv"
        code = run("eval", "--grid", "--data", dataset, "--checkpoint", checkpoint, "--out", out,
                   "--noises", "1,2", "--pcas", "1,2", "--steps", "1")
        assert code == EXIT_OK
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert tuple(rows[0]) == GRID_HEADER
        assert [(r["noise"], r["pca"]) for r in rows] == [("1", "1"), ("1", "2"), ("2", "1"), ("2", "2")]
        assert all(0.0 <= float(r[k]) <= 1.0 for r in rows for k in GRID_HEADER[2:5])
        prov = json.loads(out.with_suffix(".provenance.json").read_text())
        assert prov["checkpoint_hash"] == ckpt.file_hash(checkpoint)

    def test_grid_pca_out_of_range(self, dataset, checkpoint, tmp_path, capsys):
        code = run("eval", "--grid", "--data", dataset, "--checkpoint", checkpoint, "--out", tmp_path / "g.csv",
                   "--noises", "1", "--pcas", "5", "--steps", "1")
        assert code == EXIT_INVALID


class TestPlot:
    def test_outputs(self, dataset, predictions, tmp_path, capsys):
        out = tmp_path / "plots"
        assert run("plot", "--data", dataset, "--predictions", predictions, "--out", out) == EXIT_OK
        spheres = sorted(out.glob("*_sphere.csv"))
        assert len(spheres) == 24 and len(list(out.glob("*_overlay.png"))) == 24
        assert len(spheres[0].read_text().splitlines()) == 3  # header plus two hypotheses
