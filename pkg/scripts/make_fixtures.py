#!/usr/bin/env python3
"""Generate the bundled synthetic fixture dataset plus a ready eval config."""

import argparse
import json
from pathlib import Path

from evbench.fixtures import fixture_eval_config, make_fixture_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixtures", help="output directory")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out = Path(args.out)
    manifest = make_fixture_dataset(out, seed=args.seed)
    config = fixture_eval_config(out)
    with open(out / "eval_config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    total = sum(s["event_count"] for s in manifest["sequences"])
    print(f"wrote {len(manifest['sequences'])} sequences, {total} events total -> {out}")
    print(f"run: evbench eval --config {out / 'eval_config.json'} --out-dir {out / 'run'}")


if __name__ == "__main__":
    main()
