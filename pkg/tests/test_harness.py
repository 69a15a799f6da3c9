import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from rffi.harness import (
    ExperimentSpec,
    Report,
    emit_report,
    load_report,
    make_datasets,
    run_aug_compare,
    run_complexity,
    run_experiment,
    run_multipacket_curve,
    run_position_study,
    run_slicing_compare,
    run_snr_sweep,
)
from rffi.harness.cli import EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK, EXIT_USAGE, main
from rffi.harness.experiments import confusion, predictions
from rffi.harness.report import svg_documents, to_csv, to_json
from rffi.impairment import PopulationSpec
from rffi.models import ModelSpec, build_model
from rffi.pipeline import generate_dataset, save_dataset

TINY = dict(k_devices=3, sfs=(7,), n_train=8, n_test=4, max_epochs=1, test_snrs_db=(0.0, 20.0))


def tiny(experiment, **kw):
    return ExperimentSpec(experiment, **{**TINY, **kw})


@pytest.fixture(scope="module")
def shared():
    spec = tiny("SnrSweep")
    return make_datasets(spec), {}


# --- spec ----------------------------------------------------------------------------


def test_spec_roundtrip():
    spec = tiny("MultiPacketCurve", ranges={"cfo_hz": [-10, 10]})
    back = ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert back == spec
    assert back.population().ranges["cfo_hz"] == (-10, 10)


@pytest.mark.parametrize(
    "bad",
    [{"experiment": "Nope"}, {"experiment": "SnrSweep", "sfs": ()},
     {"experiment": "SnrSweep", "architectures": ("Mlp",)},
     {"experiment": "SnrSweep", "n_pkt_list": (0,)},
     {"experiment": "SnrSweep", "test_snrs_db": (float("inf"),)}],
)
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        ExperimentSpec(**bad)


def test_confusion_and_undetected_column():
    labels = np.array([0, 0, 1, 1])
    probs = np.eye(2)[[0, 1, 1, 0]]
    pred = predictions(probs.copy(), np.array([True, True, True, False]))
    np.testing.assert_array_equal(pred, [0, 1, 1, -1])
    np.testing.assert_array_equal(confusion(labels, pred, 2, True), [[1, 1, 0], [0, 1, 1]])


# --- experiments ---------------------------------------------------------------------


def test_snr_sweep_rows(shared):
    datasets, cache = shared
    report = run_snr_sweep(tiny("SnrSweep"), cache, datasets)
    assert [r["snr_db"] for r in report.rows] == [0.0, 20.0]
    assert all(r["n"] == 12 and 0 <= r["accuracy"] <= 1 for r in report.rows)
    assert len(report.confusions) == 2


def test_multipacket_n1_equals_single_packet(shared):
    datasets, cache = shared
    sweep = run_snr_sweep(tiny("SnrSweep"), cache, datasets)
    curve = run_multipacket_curve(tiny("MultiPacketCurve", n_pkt_list=(1, 2, 4)), cache, datasets)
    for snr in (0.0, 20.0):
        assert curve.accuracy(n_pkt=1, snr_db=snr) == sweep.accuracy(snr_db=snr)
    assert curve.select(n_pkt=4, snr_db=0.0)[0]["n"] == 3


def test_multipacket_needs_enough_packets():
    with pytest.raises(ValueError):
        run_multipacket_curve(tiny("MultiPacketCurve", n_pkt_list=(10,)))


def test_aug_compare_arms(shared):
    datasets, cache = shared
    report = run_aug_compare(tiny("AugCompare"), cache, datasets)
    assert {r["augmentation"] for r in report.rows} == {"none", "offline", "online"}
    assert set(report.metadata["models"]) == {"FlattenFreeCnn/none", "FlattenFreeCnn/offline",
                                              "FlattenFreeCnn/online"}


def test_slicing_compare_param_counts(shared):
    datasets, cache = shared
    report = run_slicing_compare(tiny("SlicingCompare"), cache, datasets)
    counts = report.metadata["param_counts"]
    assert counts["SlicingCnn/online"] > counts["FlattenFreeCnn/online"]
    assert {r["architecture"] for r in report.rows} == {"FlattenFreeCnn", "SlicingCnn"}


def test_position_study_matrix(shared):
    datasets, cache = shared
    report = run_position_study(tiny("PositionStudy", positions=(0, 3)), cache, datasets)
    grid = np.array(report.matrices["position_accuracy"])
    assert grid.shape == (2, 2)
    assert report.select(model_position=4, test_position=1)[0]["accuracy"] == grid[1, 0]


def test_complexity_rows():
    spec = ExperimentSpec("Complexity", architectures=("GruNet", "SlicingCnn"), sfs=(7, 8), timing_runs=2)
    report = run_complexity(spec)
    assert [(r["architecture"], r["sf"], r["width"]) for r in report.rows] == [("GruNet", 7, 62), ("GruNet", 8, 126)]


def test_realistic_sync_counts_undetected(shared):
    datasets, cache = shared
    report = run_snr_sweep(tiny("SnrSweep", realistic_sync=True, test_snrs_db=(-30.0, 30.0)), cache, datasets)
    low = report.confusions["FlattenFreeCnn/SF7/-30dB"]
    assert len(low[0]) == 4
    assert sum(row[3] for row in low) > 0
    high = report.confusions["FlattenFreeCnn/SF7/30dB"]
    assert sum(row[3] for row in high) == 0


def test_experiments_deterministic():
    a = run_snr_sweep(tiny("SnrSweep", seed=5))
    b = run_snr_sweep(tiny("SnrSweep", seed=5))
    assert a.rows == b.rows and a.confusions == b.confusions
    c = run_snr_sweep(tiny("SnrSweep", seed=6))
    assert c.metadata["population"] != a.metadata["population"]


def test_checkpoint_skips_training(shared, tmp_path):
    datasets, cache = shared
    model = build_model(ModelSpec("FlattenFreeCnn", 3, seed=9))
    model.save(tmp_path / "m.ckpt")
    spec = tiny("SnrSweep", checkpoints={"FlattenFreeCnn": str(tmp_path / "m.ckpt")})
    report = run_snr_sweep(spec, {}, datasets)
    assert report.metadata["models"]["FlattenFreeCnn/online"]["epochs"] == 0
    with pytest.raises(FileNotFoundError):
        run_snr_sweep(tiny("SnrSweep", checkpoints={"FlattenFreeCnn": str(tmp_path / "x")}), {}, datasets)


# --- reports -------------------------------------------------------------------------


def sample_report():
    r = Report("SnrSweep", ["architecture", "snr_db", "accuracy"])
    r.rows = [{"architecture": "A", "snr_db": s, "accuracy": s / 40} for s in (0.0, 20.0, 40.0)]
    r.confusions = {"A/SF7/0dB": [[1, 0], [1, 1]]}
    r.matrices = {"grid": [[0.5, 0.25], [0.0, 1.0]]}
    r.metadata = {"note": "x"}
    return r


def test_report_json_roundtrip(tmp_path):
    r = sample_report()
    (tmp_path / "r.json").write_text(to_json(r))
    back = load_report(tmp_path / "r.json")
    assert back.to_dict() == r.to_dict()
    assert back.accuracy(snr_db=20.0) == 0.5


def test_report_csv_header_and_floats():
    lines = to_csv(sample_report()).splitlines()
    assert lines[0] == "architecture,snr_db,accuracy"
    assert lines[2] == "A,20.0,0.5"


def test_emit_is_deterministic(tmp_path):
    r = sample_report()
    a = emit_report(r, tmp_path / "a")
    b = emit_report(r, tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_svg_documents_parse():
    docs = svg_documents(sample_report())
    assert docs
    for text in docs.values():
        root = ET.fromstring(text)
        assert root.tag.endswith("svg")


def test_emit_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report(sample_report(), tmp_path, ("pdf",))


# --- command line --------------------------------------------------------------------


def test_cli_pipeline(tmp_path, capsys):
    ds = tmp_path / "ds"
    assert main(["synth", "--devices", "3", "--sfs", "7", "--per-sf", "6", "--out", str(ds)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["records"] == 18
    aug = tmp_path / "aug"
    assert main(["augment", "--dataset", str(ds), "--copies", "2", "--out", str(aug)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["records"] == 36
    # output directories that do not exist yet
    model = tmp_path / "models" / "m.ckpt"
    hist = tmp_path / "logs" / "h.csv"
    assert main(["train", "--arch", "GruNet", "--dataset", str(ds), "--out", str(model), "--epochs", "1",
                 "--history", str(hist)]) == EXIT_OK
    assert hist.read_text().startswith("epoch,lr")
    capsys.readouterr()

    from rffi.pipeline import load_dataset

    iq = load_dataset(ds).groups[7].iq[:3]
    inter = np.empty(iq.shape + (2,), dtype="<f4")
    inter[..., 0], inter[..., 1] = iq.real, iq.imag
    (tmp_path / "one.bin").write_bytes(inter[0].tobytes())
    (tmp_path / "three.bin").write_bytes(inter.tobytes())

    assert main(["infer", "--model", str(model), "--iq-file", str(tmp_path / "one.bin")]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert len(out["probs"]) == 3 and out["fused_probs"] == out["probs"]

    state = tmp_path / "fusion" / "state.json"
    args = ["infer", "--model", str(model), "--iq-file", str(tmp_path / "three.bin"), "--sf", "7",
            "--n-pkt", "3", "--state", str(state), "--stream-key", "dev"]
    assert main(args) == EXIT_OK
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert len(lines) == 3
    np.testing.assert_allclose(lines[2]["fused_probs"], np.mean([x["probs"] for x in lines], 0), atol=2e-6)
    assert json.loads(state.read_text())["n_pkt"] == 3


def test_cli_experiment_and_report(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**TINY, "sfs": [7], "test_snrs_db": [10.0]}))
    out = tmp_path / "out"
    assert main(["experiment", "--kind", "SnrSweep", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    written = capsys.readouterr().out.split()
    assert any(w.endswith(".json") for w in written) and any(w.endswith(".svg") for w in written)
    js = next(w for w in written if w.endswith(".json"))
    again = tmp_path / "again"
    assert main(["report", "--in", js, "--formats", "csv", "--out", str(again)]) == EXIT_OK
    assert list(again.glob("*.csv"))


@pytest.mark.parametrize(
    "argv", [[], ["synth"], ["train", "--arch", "Mlp", "--dataset", "x", "--out", "y"], ["bogus"]]
)
def test_cli_parse_errors_exit_1(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == EXIT_USAGE


@pytest.mark.parametrize(
    "argv",
    [["synth", "--devices", "1", "--out", "x"],
     ["infer", "--model", "m", "--iq-file", "f", "--n-pkt", "0"],
     ["experiment", "--kind", "SnrSweep", "--formats", "pdf"],
     ["augment", "--dataset", "d", "--snr-min", "30", "--snr-max", "10", "--out", "o"]],
)
def test_cli_semantic_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_USAGE


def test_cli_data_errors(tmp_path):
    assert main(["train", "--arch", "GruNet", "--dataset", str(tmp_path / "none"), "--out", "m"]) == EXIT_DATA
    assert main(["report", "--in", str(tmp_path / "none.json")]) == EXIT_DATA
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["report", "--in", str(tmp_path / "bad.json")]) == EXIT_DATA
    (tmp_path / "odd.bin").write_bytes(b"\0" * 12)
    build_model(ModelSpec("GruNet", 3)).save(tmp_path / "m.ckpt")
    assert main(["infer", "--model", str(tmp_path / "m.ckpt"), "--iq-file", str(tmp_path / "odd.bin")]) == EXIT_DATA


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_cli_divergence_exit_3(tmp_path):
    ds = generate_dataset(PopulationSpec(k_devices=3, seed=0), (7,), 4, seed=0)
    ds.groups[7].iq[:] = np.nan
    save_dataset(ds, tmp_path / "nan")
    argv = ["train", "--arch", "GruNet", "--dataset", str(tmp_path / "nan"), "--out", str(tmp_path / "m"),
            "--epochs", "1"]
    assert main(argv) == EXIT_DIVERGENCE


def test_run_experiment_dispatch(shared):
    datasets, cache = shared
    assert run_experiment(tiny("SnrSweep"), cache, datasets).experiment == "SnrSweep"
