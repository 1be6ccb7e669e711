"""Sweep the stddev detector threshold on synthetic flows.

    python3 scripts/threshold_sweep.py [--thresholds 10 25 50 100 200 400] [--min-count 3]

For each threshold prints attack recall and the share of normal flows flagged.
"""

import argparse

from encids.flows import aggregate_flows
from encids.ingest import Label
from encids.labeling import label_packets
from encids.stats import classify_by_stddev
from encids.synth import SynthSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--thresholds", type=float, nargs="+", default=[10, 25, 50, 100, 200, 400])
    ap.add_argument("--min-count", type=int, default=3)
    ap.add_argument("--jitter", type=int, default=10, help="attack length jitter in bytes")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    records, events = generate(SynthSpec(attack_len_jitter=args.jitter, seed=args.seed))
    flows = aggregate_flows(label_packets(records, events))
    attack = [f for f in flows if f.is_attack]
    normal = [f for f in flows if not f.is_attack]
    print(f"{len(attack)} attack flows, {len(normal)} normal flows, min_count={args.min_count}")
    print(f"{'threshold':>10} {'recall':>8} {'normal flagged':>15}")
    for t in args.thresholds:
        tp = sum(classify_by_stddev(f, t, args.min_count) == Label.ATTACK for f in attack)
        fp = sum(classify_by_stddev(f, t, args.min_count) == Label.ATTACK for f in normal)
        print(f"{t:>10g} {tp / max(len(attack), 1):>8.3f} {fp / max(len(normal), 1):>15.3f}")


if __name__ == "__main__":
    main()
