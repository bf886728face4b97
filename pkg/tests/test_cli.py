import json

import numpy as np
import pytest

from pairseld.calibration import DoaGrid, tetrahedral_geometry
from pairseld.cli import main
from pairseld.dsp import StftConfig
from pairseld.fileio import rasterize_labels, read_calibration, read_labels, read_results, write_labels, write_wav
from pairseld.sim import SceneScript, ScriptEvent, synthesize


def script_doc(events, duration, **extra):
    return {"duration_sec": duration, "events": events, **extra}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def sweep_events(grid, dur=0.2, gap=0.04, elevations=None):
    events, t = [], 0.02
    for q in range(grid.size):
        az, el = grid.lookup(q)
        if elevations is not None and el not in elevations:
            continue
        events.append({"onset_sec": round(t, 3), "offset_sec": round(t + dur, 3), "azimuth_deg": az, "elevation_deg": el, "snr_db": 30})
        t += dur + gap
    return events, t + 0.05


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    events = [
        {"class": "dog", "onset_sec": 0.3, "offset_sec": 1.7, "azimuth_deg": 40, "elevation_deg": 10},
        {"class": "bell", "onset_sec": 1.1, "offset_sec": 2.6, "azimuth_deg": -120, "elevation_deg": -30},
        {"class": "dog", "onset_sec": 2.9, "offset_sec": 3.8, "azimuth_deg": 170, "elevation_deg": 0},
    ]
    script = write_json(d / "script.json", script_doc(events, 4.0, class_names=["dog", "bell"], seed=5))
    config = write_json(d / "config.json", {"class_names": ["dog", "bell"]})
    assert main(["simulate", "--script", str(script), "--config", str(config), "--out", str(d / "sim")]) == 0
    assert main(["calibrate", "--analytic", "--out", str(d / "cal.json")]) == 0
    return d


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit) as info:
        main(["detect", "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--config", "--geometry", "--calibration", "--detector", "--seed", "--out", "--sigma", "--gamma", "--tau-max", "--grid-g", "--segment-frames"):
        assert flag in text


def test_simulate_writes_outputs(scene_dir):
    sim = scene_dir / "sim"
    for name in ("scene.wav", "labels.csv", "scores.json", "scores.f32", "tdoas.json", "tdoas.f32", "run_config.json"):
        assert (sim / name).exists()
    assert len(read_labels(sim / "labels.csv")) == 3
    assert json.loads((sim / "run_config.json").read_text())["seed"] == 5


def test_simulate_off_grid_names_event(tmp_path, capsys):
    events = [{"onset_sec": 0.1, "offset_sec": 0.5, "azimuth_deg": 0, "elevation_deg": 0},
              {"onset_sec": 0.6, "offset_sec": 0.9, "azimuth_deg": 15, "elevation_deg": 0}]
    script = write_json(tmp_path / "s.json", script_doc(events, 1.0))
    assert main(["simulate", "--script", str(script), "--out", str(tmp_path / "o")]) == 2
    assert "event 1" in capsys.readouterr().err


def test_seed_override(tmp_path):
    script = write_json(tmp_path / "s.json", script_doc([{"onset_sec": 0.1, "offset_sec": 0.5, "azimuth_deg": 0, "elevation_deg": 0}], 0.6))
    outs = {}
    for name, seed in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["simulate", "--script", str(script), "--seed", seed, "--out", str(tmp_path / name)]) == 0
        outs[name] = (tmp_path / name / "scene.wav").read_bytes()
    assert outs["a"] == outs["b"] != outs["c"]


def test_detect_oracle_tensors_exact(scene_dir, tmp_path):
    sim = scene_dir / "sim"
    config = str(scene_dir / "config.json")
    rc = main(["detect", "--config", config, "--detector", "tensors", "--scores", str(sim / "scores.json"),
               "--tdoas", str(sim / "tdoas.json"), "--calibration", str(scene_dir / "cal.json"), "--out", str(tmp_path)])
    assert rc == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    T = summary["num_frames"]
    est = read_results(tmp_path / "results.csv", T)
    _, ref = rasterize_labels(read_labels(sim / "labels.csv"), StftConfig(), DoaGrid(), T, ["dog", "bell"])
    assert est == ref

    assert main(["eval", "--config", config, "--results", str(tmp_path / "results.csv"),
                 "--labels", str(sim / "labels.csv"), "--out", str(tmp_path / "m.json")]) == 0
    m = json.loads((tmp_path / "m.json").read_text())
    assert (m["er"], m["f"], m["doae"], m["fr"]) == (0.0, 1.0, 0.0, 1.0)


def test_detect_unreadable_calibration(scene_dir, tmp_path):
    bad = tmp_path / "cal.json"
    bad.write_text("{not json")
    sim = scene_dir / "sim"
    rc = main(["detect", "--config", str(scene_dir / "config.json"), "--detector", "tensors", "--scores", str(sim / "scores.json"),
               "--tdoas", str(sim / "tdoas.json"), "--calibration", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2
    rc = main(["detect", "--config", str(scene_dir / "config.json"), "--detector", "tensors", "--scores", str(sim / "scores.json"),
               "--tdoas", str(sim / "tdoas.json"), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_eval_empty_results(scene_dir, tmp_path, capsys):
    (tmp_path / "results.csv").write_text("frame_index,class,azimuth_deg,elevation_deg\n")
    rc = main(["eval", "--config", str(scene_dir / "config.json"), "--results", str(tmp_path / "results.csv"),
               "--labels", str(scene_dir / "sim" / "labels.csv"), "--num-frames", "198", "--out", str(tmp_path / "m.json")])
    assert rc == 0
    assert "undefined" in capsys.readouterr().out
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["f"] == 0.0 and m["doae"] is None
    assert m["diagnostics"]["doae"] == "undefined (no estimates)"


def test_eval_hand_counted_fixture(tmp_path):
    # reference: class 0 over segment 0 only; estimate: class 0 in segment 0 and an insertion in segment 1
    (tmp_path / "labels.csv").write_text("class,onset_sec,offset_sec,azimuth_deg,elevation_deg\n0,0.1,0.5,0,0\n")
    rows = ["frame_index,class,azimuth_deg,elevation_deg", "4,0,10,0"] + [f"{t},0,0,0" for t in range(5, 24)] + ["60,0,90,0"]
    (tmp_path / "results.csv").write_text("\n".join(rows) + "\n")
    rc = main(["eval", "--results", str(tmp_path / "results.csv"), "--labels", str(tmp_path / "labels.csv"),
               "--num-frames", "100", "--out", str(tmp_path / "m.json")])
    assert rc == 0
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["counts"] == {"tp": 1, "fn": 0, "fp": 1, "n": 1, "s": 0, "d": 0, "i": 1}
    assert m["er"] == 1.0 and m["f"] == pytest.approx(2 / 3)
    # reference frames are 4..23; frame 4 is 10 degrees off and frame 60 has no partner, so it only adds to the count
    assert m["doae"] == pytest.approx(10 / 21)
    assert m["fr"] == pytest.approx(99 / 100)


def test_tune_thresholds_on_oracle_scores(scene_dir, tmp_path):
    sim = scene_dir / "sim"
    manifest = write_json(tmp_path / "m.json", {"recordings": [{"scores": str(sim / "scores.json"), "labels": str(sim / "labels.csv")}]})
    rc = main(["tune-thresholds", "--config", str(scene_dir / "config.json"), "--manifest", str(manifest), "--out", str(tmp_path / "eps.json")])
    assert rc == 0
    # "dog" is active in every segment, so even 0 is optimal for it
    assert json.loads((tmp_path / "eps.json").read_text())["thresholds"] == [0.0, 0.01]


def test_calibrate_missing_elevation(tmp_path, capsys):
    grid = DoaGrid()
    events, dur = sweep_events(grid, dur=0.1, gap=0.02, elevations=[-10.0, 0.0])
    script = write_json(tmp_path / "s.json", script_doc(events, dur))
    assert main(["simulate", "--script", str(script), "--out", str(tmp_path / "sim")]) == 0
    manifest = write_json(tmp_path / "m.json", {"recordings": [{"audio": "sim/scene.wav", "labels": "sim/labels.csv"}]})
    assert main(["calibrate", "--manifest", str(manifest), "--out", str(tmp_path / "cal.json")]) == 2
    err = capsys.readouterr().err
    assert "elevation 40: missing azimuths" in err


@pytest.mark.slow
def test_calibrate_sweep_matches_analytic(tmp_path, capsys):
    grid = DoaGrid()
    events, dur = sweep_events(grid)
    script = write_json(tmp_path / "s.json", script_doc(events, dur, seed=2))
    assert main(["simulate", "--script", str(script), "--out", str(tmp_path / "sim")]) == 0
    manifest = write_json(tmp_path / "m.json", {"recordings": [{"audio": "sim/scene.wav", "labels": "sim/labels.csv"}]})
    assert main(["calibrate", "--manifest", str(manifest), "--out", str(tmp_path / "cal.json")]) == 0
    assert "fit RMS" in capsys.readouterr().out
    assert main(["calibrate", "--analytic", "--out", str(tmp_path / "ana.json")]) == 0
    fitted = read_calibration(tmp_path / "cal.json")
    analytic = read_calibration(tmp_path / "ana.json")
    assert fitted.provenance == "measured"
    assert np.abs(fitted.tdoa - analytic.tdoa).max() < 0.5


@pytest.mark.slow
def test_detect_silence_with_tuned_thresholds(tmp_path):
    geom = tetrahedral_geometry()

    def render(name, script):
        scene = synthesize(script, geom)
        (tmp_path / name).mkdir()
        write_wav(tmp_path / name / "scene.wav", scene.signals, scene.sample_rate)
        write_labels(scene.labels, tmp_path / name / "labels.csv")
        return {"audio": f"{name}/scene.wav", "labels": f"{name}/labels.csv"}

    events = tuple(ScriptEvent(0, 1.0 + 4 * k, 3.0 + 4 * k, 37 * k + 5) for k in range(4))
    recs = [render("events", SceneScript(18.0, events, seed=1))]
    recs += [render(f"quiet{k}", SceneScript(20.0, seed=900 + k)) for k in range(2)]
    manifest = write_json(tmp_path / "m.json", {"recordings": recs})
    assert main(["tune-thresholds", "--manifest", str(manifest), "--out", str(tmp_path / "eps.json")]) == 0
    assert main(["calibrate", "--analytic", "--out", str(tmp_path / "cal.json")]) == 0

    render("silence", SceneScript(20.0, seed=950))
    rc = main(["detect", "--audio", str(tmp_path / "silence" / "scene.wav"), "--calibration", str(tmp_path / "cal.json"),
               "--thresholds", str(tmp_path / "eps.json"), "--out", str(tmp_path / "out")])
    assert rc == 0
    assert (tmp_path / "out" / "results.csv").read_text() == "frame_index,class,azimuth_deg,elevation_deg\n"
