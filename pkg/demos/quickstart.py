"""End to end with the command line: generate data, pretrain, evaluate, convert.

The test split and epoch count are cut down so the whole thing runs in about
four minutes on one core. Expect a probe near 0.9 and weaker retrieval and
semi-supervised scores. Longer pretraining (train.epochs=20) lifts all three.
Outputs go to ./quickstart_run (or the directory given as the first argument).
"""

import json
import sys
from pathlib import Path

from hetskel.cli import main

out = Path(sys.argv[1] if len(sys.argv) > 1 else "quickstart_run")
small = [
    "data.test_per_class=32",
    "train.epochs=10",
    "loss.lambda_con=2",
]


def run(*argv):
    print("$ hetskel", " ".join(map(str, argv)))
    code = main([str(a) for a in argv])
    if code:
        sys.exit(code)


run("generate", "--out", out / "data", *small)
run("pretrain", "--out", out / "pretrain", *small, f"data.dataset_dir={out / 'data'}")
ckpt = out / "pretrain" / "model.ckpt"
for task in ("probe", "retrieve"):
    run(task, "--checkpoint", ckpt, "--out", out / task)
run("semi", "--checkpoint", ckpt, "--out", out / "semi", "eval.fraction=0.25")
run("convert", "--checkpoint", ckpt, "--input", out / "data" / "test_C17.hskl", "--output", out / "test_lifted.hskl")

print()
print((out / "pretrain" / "loss_history.csv").read_text())
for task in ("probe", "retrieve", "semi"):
    m = json.loads((out / task / "metrics.json").read_text())
    print(f"{task:9s} top-1 {m['top1']:.3f} on {m['n_test']} test clips")
