import csv
import json

import pytest

from encids.cli import main
from encids.ingest import parse_header_tsv
from encids.pipeline import KmeansParams, PipelineConfig, load_config

import pcapgen

SYNTH_ARGS = ["--normal-flows", "40", "--attack-flows", "10", "--dos-flows", "0", "--seed", "1"]
FAST = ["--max-points", "300", "--seeds", "3"]


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out-dir", str(d)] + SYNTH_ARGS) == 0
    return d


def test_synth_writes_bundle(bundle):
    assert {p.name for p in bundle.iterdir()} == {"traffic.tsv", "schedule.csv", "synth.json"}
    assert json.loads((bundle / "synth.json").read_text())["attack_flows"] == 10


def test_ingest_pcap(tmp_path):
    pcap = tmp_path / "f.pcap"
    pcap.write_bytes(pcapgen.three_ipv4_one_arp())
    out, meta = tmp_path / "f.tsv", tmp_path / "meta.json"
    assert main(["ingest", str(pcap), "-o", str(out), "--meta", str(meta)]) == 0
    assert len(parse_header_tsv(out.read_text())) == 3
    assert json.loads(meta.read_text())["skipped_frames"] == 1


def test_ingest_tsv_passthrough(tmp_path, bundle):
    out = tmp_path / "again.tsv"
    assert main(["ingest", str(bundle / "traffic.tsv"), "-o", str(out)]) == 0
    assert out.read_text() == (bundle / "traffic.tsv").read_text()


def test_ingest_empty_file(tmp_path):
    (tmp_path / "e.tsv").write_text("")
    assert main(["ingest", str(tmp_path / "e.tsv"), "-o", str(tmp_path / "o.tsv")]) == 0
    assert (tmp_path / "o.tsv").read_text() == ""


def test_label_flows_stats(tmp_path, bundle):
    labeled = tmp_path / "labeled.tsv"
    assert main(["label", str(bundle / "traffic.tsv"), str(bundle / "schedule.csv"), "-o", str(labeled)]) == 0
    recs = parse_header_tsv(labeled.read_text())
    assert {int(r.label) for r in recs} >= {0, 1}
    flows = tmp_path / "flows.csv"
    assert main(["flows", str(labeled), "-o", str(flows), "--merge-directions"]) == 0
    rows = list(csv.DictReader(flows.open()))
    assert sum(int(r["count"]) for r in rows) == len(recs)
    assert main(["stats", str(labeled), "--out-dir", str(tmp_path / "stats")]) == 0
    assert (tmp_path / "stats" / "stddev_hist.svg").exists()
    assert (tmp_path / "stats" / "coi.csv").exists()


def test_embed_cluster_evaluate(tmp_path, bundle):
    labeled = tmp_path / "labeled.tsv"
    main(["label", str(bundle / "traffic.tsv"), str(bundle / "schedule.csv"), "-o", str(labeled)])
    assert main(["embed", str(labeled), "--out-dir", str(tmp_path / "emb"), "--max-points", "200"]) == 0
    meta = json.loads((tmp_path / "emb" / "embedding.json").read_text())
    assert meta["n"] <= 200 and meta["m"] == 3
    assign = tmp_path / "assign.csv"
    assert main(["cluster", str(labeled), "-o", str(assign), "--seeds", "2"]) == 0
    report = tmp_path / "cm.json"
    assert main(["evaluate", str(assign), "-o", str(report)]) == 0
    cm = json.loads(report.read_text())
    assert cm["total"] == len(parse_header_tsv(labeled.read_text()))


def test_run_is_reproducible(tmp_path, bundle):
    args = ["run", str(bundle / "traffic.tsv"), str(bundle / "schedule.csv")] + FAST
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        a, b = (tmp_path / "a" / name).read_text(), (tmp_path / "b" / name).read_text()
        if name == "manifest.json":
            ja, jb = json.loads(a), json.loads(b)
            ja.pop("timestamp"), jb.pop("timestamp")
            assert ja == jb
        else:
            assert a == b, name
    ev = json.loads((tmp_path / "a" / "evaluation.json").read_text())["kmeans"]
    assert sum(ev["rates"].values()) == pytest.approx(1, abs=1e-9)


def test_run_empty_schedule(tmp_path, bundle):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["run", str(bundle / "traffic.tsv"), str(empty), "--out-dir", str(tmp_path / "r")] + FAST) == 0
    ev = json.loads((tmp_path / "r" / "evaluation.json").read_text())
    assert ev["kmeans"]["counts"]["tp"] == ev["kmeans"]["counts"]["fp"] == 0
    assert ev["summary"]["labels"]["1"] == 0


def test_exit_codes(tmp_path, bundle):
    assert main(["run", str(tmp_path / "missing.tsv"), "--out-dir", str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.tsv"
    bad.write_text("10.0.0.1\t10.0.0.2\t60\n")
    assert main(["ingest", str(bad)]) == 2
    with pytest.raises(SystemExit) as err:
        main(["flows"])
    assert err.value.code == 1
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert main(["flows", str(bundle / "traffic.tsv"), "--config", str(cfg)]) == 1
    assert main(["flows", str(bundle / "traffic.tsv"), "--slice", "0"]) == 1


def test_config_roundtrip_and_override(tmp_path):
    cfg = PipelineConfig().override({"kernel.t": 2, "coi.threshold": 0.25, "min_count": None})
    assert cfg.kernel.t == 2 and cfg.coi.threshold == 0.25 and cfg.min_count == 3
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        PipelineConfig().override({"kernel.nope": 1})
    with pytest.raises(ValueError):
        PipelineConfig(kmeans=KmeansParams(k=3)).validate()
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"kernel": {"m": 2}}))
    loaded = load_config(path)
    assert loaded.kernel.m == 2 and loaded.kernel.t == 1


def test_flow_eval_unit(tmp_path, bundle):
    out = tmp_path / "r"
    assert main(["run", str(bundle / "traffic.tsv"), str(bundle / "schedule.csv"), "--out-dir", str(out),
                 "--eval-unit", "flow", "--source", "embedding"] + FAST) == 0
    ev = json.loads((out / "evaluation.json").read_text())["kmeans"]
    assert ev["eval_unit"] == "flow" and ev["feature_source"] == "embedding"
