"""
Reading a finished pipeline run
===============================

After ``styleumt run-all -c configs/desk.cfg -w work`` the work directory
holds everything needed to compare the three systems. This script prints
the evaluation summary, the per-epoch trend from the metrics ledger and a
few sentences the final model changed relative to iteration 0.

    python3 demos/inspect_run.py work
"""

import csv
import json
import sys
from pathlib import Path

work = Path(sys.argv[1] if len(sys.argv) > 1 else "work")

print((work / "eval" / "summary.txt").read_text())

# epoch 0 is the pretrained model, later rows follow each back-translation epoch
print("epoch  direction  accuracy    BLEU  mean reward")
for line in (work / "bt" / "metrics.jsonl").read_text().splitlines():
    r = json.loads(line)
    reward = "" if "mean_reward" not in r else f"{r['mean_reward']:.3f}"
    print(f"{r['epoch']:>5}  {r['direction']:<9}  {100 * r['transfer_accuracy']:>7.1f}%  {r['bleu']:>6.2f}  {reward:>11}")


def rows(name):
    with open(work / "eval" / f"{name}.tsv", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f, delimiter="\t"))


for tag in ("s2t", "t2s"):
    before, after = rows(f"iter0.{tag}"), rows(f"final.{tag}")
    changed = [(a, b) for a, b in zip(before, after) if a["output"] != b["output"]]
    print(f"\n{tag}: {len(changed)} of {len(after)} outputs changed by back-translation")
    for a, b in changed[:4]:
        print("  input  ", a["input"])
        print("  iter0  ", a["output"], f"(p={float(a['probability']):.2f})")
        print("  final  ", b["output"], f"(p={float(b['probability']):.2f})")
        print("  ref    ", b["reference"])
