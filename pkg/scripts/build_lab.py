"""Generate corpora and train the recognizer and codec into one directory.

    python3 scripts/build_lab.py --root runs/lab
"""
import argparse
import json
import logging

from rvqlab.harness.lab import LabConfig, build_lab


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--root", default="runs/lab")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=LabConfig.n_train)
    p.add_argument("--n-test", type=int, default=LabConfig.n_test)
    p.add_argument("--force", action="store_true", help="rebuild even if a matching build exists")
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    lab = build_lab(LabConfig(seed=a.seed, n_train=a.n_train, n_test=a.n_test), a.root, reuse=not a.force)
    info = json.loads((lab.root / "lab_info.json").read_text())
    print(f"lab at {lab.root}: dev WER {info['dev_wer']:.4f}, built in {info['build_seconds']}s")


if __name__ == "__main__":
    main()
