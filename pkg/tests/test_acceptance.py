"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a one-line PASS/FAIL verdict (shown in the pytest terminal
summary) before asserting, so a failing criterion is reported, not hidden.
"""

import json
import math
import os
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from encids.cli import main
from encids.cluster import InertiaIncreased, evaluate, kmeans_restarts, map_clusters_to_classes
from encids.flows import aggregate_flows
from encids.ingest import Label, PacketRecord, parse_header_tsv, parse_pcap, write_header_tsv
from encids.labeling import label_packets
from encids.manifold import (choose_epsilon, diffusion_embed, kernel_matrix, markov_normalize,
                             spectral_decompose)
from encids.stats import (CoiConfig, classify_by_stddev, coi_scores, packets_per_flow_distribution,
                          stddev_histogram)
from encids.synth import SynthSpec, generate

import pcapgen


def _random_datasets(count, max_n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(3, max_n + 1))
        x = rng.normal(size=(n, int(rng.integers(1, 5)))) * rng.uniform(0.1, 10)
        yield x, choose_epsilon(x) * float(rng.uniform(0.3, 3.0))


def _brute_diffusion_sq(w, t):
    p = w / w.sum(axis=1, keepdims=True)
    pi = w.sum(axis=1) / w.sum()
    pt = np.eye(len(w))
    for _ in range(t):
        pt = pt @ p
    diff = pt[:, None, :] - pt[None, :, :]
    return (diff ** 2 / pi[None, None, :]).sum(axis=2)


def test_criterion_1_diffusion_oracle(acceptance):
    start = time.perf_counter()
    worst = 0.0
    for x, eps in _random_datasets(20, 50, seed=2024):
        w = kernel_matrix(x, eps)
        dec = spectral_decompose(w)
        for t in (1, 2, 5):
            coords = diffusion_embed(dec, t, len(x) - 1).coordinates
            emb = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2))
            ref = np.sqrt(np.maximum(_brute_diffusion_sq(w, t), 0))
            worst = max(worst, float(np.abs(emb - ref).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10
    acceptance(1, ok, f"max |embedding - diffusion distance| = {worst:.2e} (tol 1e-6), {elapsed:.2f} s (< 10 s)")
    assert ok


def test_criterion_2_spectral_invariants(acceptance):
    checks = {"lambda1": 0.0, "psi1_spread": 0.0, "max_abs_lambda": 0.0, "residual": 0.0, "row_sum": 0.0}
    exact = True
    for x, eps in list(_random_datasets(30, 50, seed=7)) + [(np.array([[0.0], [1.0]]), 1.0)]:
        w = kernel_matrix(x, eps)
        exact &= bool((w == w.T).all() and (np.diag(w) == 1.0).all())
        p = markov_normalize(w)
        dec = spectral_decompose(w)
        lam, psi = dec.eigenvalues, dec.eigenvectors
        checks["lambda1"] = max(checks["lambda1"], abs(lam[0] - 1))
        checks["psi1_spread"] = max(checks["psi1_spread"], float(np.ptp(psi[:, 0])))
        checks["max_abs_lambda"] = max(checks["max_abs_lambda"], float(np.abs(lam).max()))
        checks["residual"] = max(checks["residual"], float(np.abs(p @ psi - psi * lam).max()))
        checks["row_sum"] = max(checks["row_sum"], float(np.abs(p.sum(axis=1) - 1).max()))
    ok = (checks["lambda1"] <= 1e-9 and checks["psi1_spread"] <= 1e-9 and checks["max_abs_lambda"] <= 1 + 1e-9
          and checks["residual"] < 1e-8 and checks["row_sum"] <= 1e-12 and exact)
    acceptance(2, ok, "|l1-1|={lambda1:.1e} psi1 spread={psi1_spread:.1e} max|l|={max_abs_lambda:.12f} "
                      "residual={residual:.1e} row-sum err={row_sum:.1e}".format(**checks)
               + f" kernel exact={exact}")
    assert ok


@pytest.fixture(scope="module")
def default_synth():
    start = time.perf_counter()
    records, events = generate(SynthSpec())
    labeled = label_packets(records, events)
    flows = aggregate_flows(labeled)
    return labeled, flows, time.perf_counter() - start


def test_criterion_3_stddev_separation(acceptance, default_synth):
    start = time.perf_counter()
    labeled, flows, build_time = default_synth
    normal, attack = stddev_histogram(flows, 50)
    attack_le = attack.fraction_at_or_below(50)
    normal_le = normal.fraction_at_or_below(50)
    attack_flows = [f for f in flows if f.is_attack]
    recall = sum(classify_by_stddev(f, 50, 3) == Label.ATTACK for f in attack_flows) / len(attack_flows)
    elapsed = build_time + time.perf_counter() - start
    ok = attack_le >= 0.95 and recall >= 0.95 and normal_le < attack_le and elapsed < 5
    acceptance(3, ok, f"attack flows at stddev <= 50: {attack_le:.3f} (>= 0.95), recall {recall:.3f} (>= 0.95), "
                      f"normal at <= 50: {normal_le:.3f} (< attack), {elapsed:.2f} s (< 5 s)")
    assert ok


def test_criterion_4_dos_tail(acceptance, default_synth):
    _, flows, _ = default_synth
    normal, attack = packets_per_flow_distribution(flows)
    dos_bins = {int(math.log2(f.count)) for f in flows if f.is_attack and f.count >= 100_000}
    tail_clean = bool(dos_bins) and all(normal.counts[b] == 0 for b in dos_bins)

    records, _ = generate(SynthSpec(dos_flows=2, dos_packets=(490_000, 490_000), seed=1))
    start = time.perf_counter()
    big = aggregate_flows(records)
    elapsed = time.perf_counter() - start
    ok = tail_clean and len(records) >= 1_000_000 and elapsed < 30 and sum(f.count for f in big) == len(records)
    acceptance(4, ok, f"DoS bins {sorted(2 ** b for b in dos_bins)} hold 0 normal flows: {tail_clean}; "
                      f"{len(records):,} packets -> {len(big):,} flows in {elapsed:.2f} s (< 30 s)")
    assert ok


def _optimal_two_partition(x):
    """Vectorized enumeration of every split into two non-empty groups."""
    n = len(x)
    masks = np.arange(1, 2 ** (n - 1))
    member = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)
    n1 = member.sum(axis=1)
    n0 = n - n1
    s1 = member @ x
    s0 = x.sum(axis=0) - s1
    total = (x ** 2).sum()
    sse = total - (s1 ** 2).sum(axis=1) / n1 - (s0 ** 2).sum(axis=1) / n0
    return float(sse.min())


def test_criterion_5_kmeans_oracle(acceptance):
    rng = np.random.default_rng(5)
    matched = 0
    monotone = True
    for _ in range(50):
        n = int(rng.integers(4, 16))
        x = rng.normal(size=(n, int(rng.integers(1, 4))))
        try:
            best = kmeans_restarts(x, 2, seeds=range(10))
        except InertiaIncreased:
            monotone = False
            continue
        opt = _optimal_two_partition(x)
        matched += abs(best.inertia - opt) <= 1e-9 * max(1.0, opt)
    sigma = 1.0
    x = np.concatenate([rng.normal(0, sigma, (100, 2)), rng.normal(0, sigma, (100, 2)) + [8 * sigma, 0]])
    truth = np.repeat([False, True], 100)
    try:
        r = kmeans_restarts(x, 2, seeds=range(10))
        mapping = map_clusters_to_classes(r.assignments, truth)
        acc = evaluate([mapping[a] for a in r.assignments], truth).accuracy
    except InertiaIncreased:
        monotone, acc = False, 0.0
    ok = matched >= 45 and acc >= 0.99 and monotone
    acceptance(5, ok, f"optimal 2-partition matched {matched}/50 (>= 45), blob accuracy {acc:.3f} (>= 0.99), "
                      f"inertia monotone: {monotone}")
    assert ok


def test_criterion_6_end_to_end(acceptance, tmp_path):
    bundle = tmp_path / "synth"
    assert main(["synth", "--out-dir", str(bundle)]) == 0
    args = ["run", str(bundle / "traffic.tsv"), str(bundle / "schedule.csv")]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0

    ev = json.loads((tmp_path / "a" / "evaluation.json").read_text())
    rates_sum = sum(ev["kmeans"]["rates"].values())
    counts = ev["kmeans"]["counts"]
    n_packets = len(parse_header_tsv((bundle / "traffic.tsv").read_text()))
    partition = sum(counts.values()) == ev["kmeans"]["total"] == n_packets

    differing = []
    for f in sorted((tmp_path / "a").iterdir()):
        a, b = f.read_bytes(), (tmp_path / "b" / f.name).read_bytes()
        if f.name == "manifest.json":
            ma, mb = json.loads(a), json.loads(b)
            ma.pop("timestamp"), mb.pop("timestamp")
            # inputs are the same files, so only the timestamp may differ
            if ma != mb:
                differing.append(f.name)
        elif a != b:
            differing.append(f.name)
    ok = abs(rates_sum - 1) <= 1e-9 and partition and not differing
    r = ev["kmeans"]["rates"]
    acceptance(6, ok, f"rates sum {rates_sum:.12f}, counts partition {n_packets} packets: {partition}, "
                      f"non-identical artifacts: {differing or 'none'} "
                      f"(TP {100 * r['tp']:.2f}% FP {100 * r['fp']:.2f}% TN {100 * r['tn']:.2f}% "
                      f"FN {100 * r['fn']:.2f}%)")
    assert ok


def _coi_bin_scan(records, cfg):
    t0 = min(r.ts for r in records)
    if cfg.period is None:
        n_bins = math.floor((max(r.ts for r in records) - t0) / cfg.bin_size) + 1
    else:
        n_bins = math.floor(cfg.period / cfg.bin_size)
    binned = [(tuple(sorted((r.src, r.dst))), math.floor((r.ts - t0) / cfg.bin_size)) for r in records]
    pairs = {p for p, b in binned if b < n_bins}
    out = {}
    for p in pairs:
        hit = sum(1 for b in range(n_bins) if (p, b) in set(binned))
        frac = Fraction(hit, n_bins)
        out[p] = (frac, frac >= Fraction(cfg.threshold))
    return out


def test_criterion_7_coi_oracle(acceptance):
    rnd = random.Random(77)
    agree = 0
    for _ in range(20):
        hosts = rnd.randint(2, 8)
        n = rnd.randint(1, 200)
        records = [PacketRecord(rnd.randint(1, hosts), rnd.randint(1, hosts), 60, 64,
                                rnd.randint(0, 48 * 3600 * 10**6) / 1e6) for _ in range(n)]
        cfg = CoiConfig(rnd.choice([600.0, 3600.0]), rnd.choice([None, 86400.0, 7200.0]),
                        rnd.choice([0.0, 0.1, 0.5, 1.0]))
        got = {s.pair: (Fraction(s.bins_hit, s.n_bins), s.member) for s in coi_scores(records, cfg)}
        agree += got == _coi_bin_scan(records, cfg)
    ok = agree == 20
    acceptance(7, ok, f"exact agreement with brute-force bin scan on {agree}/20 datasets")
    assert ok


def test_criterion_8_roundtrips(acceptance):
    rnd = random.Random(8)
    records = [PacketRecord(rnd.getrandbits(32), rnd.getrandbits(32), rnd.randint(20, 65535),
                            rnd.randint(0, 255), rnd.randint(0, 2 * 10**15) / 1e6, Label(rnd.randint(0, 2)))
               for _ in range(1000)]
    tsv_ok = parse_header_tsv(write_header_tsv(records)) == records

    def capture(payload):
        frames = []
        for i, (src, dst, length, ttl) in enumerate([("10.0.0.1", "10.0.0.2", 60, 64),
                                                     ("10.0.0.2", "10.0.0.1", 1500, 128),
                                                     ("192.168.1.7", "172.16.112.50", 40, 1)]):
            ip = pcapgen.ipv4_header(src, dst, length, ttl) + payload(length - 20)
            frames.append(pcapgen.record(pcapgen.ethernet(ip), i + 1, 0))
        return pcapgen.global_header() + b"".join(frames)

    base, _ = parse_pcap(capture(lambda k: bytes(k)))
    trials = 50
    same = sum(parse_pcap(capture(lambda k: rnd.randbytes(k)))[0] == base for _ in range(trials))
    ok = tsv_ok and same == trials and len(base) == 3
    acceptance(8, ok, f"TSV identity on 1000 records: {tsv_ok}; pcap parse unchanged under "
                      f"{same}/{trials} payload randomizations")
    assert ok


DARPA_ENV = "ENCIDS_DARPA_TCPDUMP"


def test_criterion_9_darpa_optional(acceptance, tmp_path):
    path = os.environ.get(DARPA_ENV)
    if not path:
        acceptance(9, None, f"optional, not gating: set {DARPA_ENV} (and ENCIDS_DARPA_SCHEDULE) to run")
        pytest.skip(f"{DARPA_ENV} not set")
    args = ["run", path]
    if os.environ.get("ENCIDS_DARPA_SCHEDULE"):
        args.append(os.environ["ENCIDS_DARPA_SCHEDULE"])
    code = main(args + ["--out-dir", str(tmp_path / "darpa")])
    report = tmp_path / "darpa" / "report.txt"
    ev = json.loads((tmp_path / "darpa" / "evaluation.json").read_text()) if code == 0 else {}
    s = ev.get("summary", {})
    direction = s.get("attack_flows_stddev_le_threshold", 0) > s.get("normal_flows_stddev_le_threshold", 1)
    ok = code == 0 and report.exists() and direction
    acceptance(9, ok, f"exit {code}, report written: {report.exists()}, attack share at <= 50 bytes "
                      f"exceeds normal share: {direction}")
    assert ok
