"""
The command-line pipeline
=========================

Everything the library does is reachable from the `onomaret` command:
generate or ingest packs, train one checkpoint per seed, evaluate, run the
zero-shot baseline, retrieve for a single query, and emit analysis tables.
This script drives a full round trip in a temporary directory.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp())


def cli(*args):
    print(f"\n$ onomaret {' '.join(args)}")
    proc = subprocess.run(
        [sys.executable, "-m", "onomaret", *args], capture_output=True, text=True
    )
    print(proc.stdout.rstrip())
    if proc.returncode != 0:
        print(proc.stderr.rstrip())
        raise SystemExit(proc.returncode)


##############################################################################
# 1. Synthesize a split pack pair (a stand-in for extractor output).

cli("synth", "--out", str(work / "syn"), "--classes", "12", "--dim", "32",
    "--pairs-per-class", "8", "--audio-spread", "0.02", "--image-spread", "0.06",
    "--rotation-seed", "1", "--noise-seed", "2", "--split-seed", "3")

##############################################################################
# 2. Train two seeds from a flat JSON config. Flags override config values;
#    every random choice flows from the explicit seeds.

config = {
    "image_pack": str(work / "syn_image"),
    "audio_pack": str(work / "syn_audio"),
    "out_dir": str(work / "run"),
    "seeds": [0, 1],
    "max_epochs": 15,
    "patience": 6,
    "batch_size": 32,
    "hidden_dim": 32,
    "joint_dim": 16,
}
(work / "config.json").write_text(json.dumps(config, indent=2))
cli("train", "--config", str(work / "config.json"))

##############################################################################
# 3. The zero-shot baseline and the trained evaluation, side by side.

cli("baseline", "--image-pack", str(work / "syn_image"),
    "--audio-pack", str(work / "syn_audio"), "--split", "test")

cli("eval", "--image-pack", str(work / "syn_image"),
    "--audio-pack", str(work / "syn_audio"),
    "--checkpoint", str(work / "run" / "seed_0"),
    "--checkpoint", str(work / "run" / "seed_1"),
    "--split", "test", "--out", str(work / "eval.json"))

##############################################################################
# 4. Ad-hoc retrieval for one query id.

query_id = json.loads((work / "syn_image.meta.jsonl").read_text().splitlines()[0])["id"]
cli("retrieve", "--image-pack", str(work / "syn_image"),
    "--audio-pack", str(work / "syn_audio"),
    "--checkpoint", str(work / "run" / "seed_0"),
    "--query-id", query_id, "--direction", "i2a", "--top-n", "5", "--split", "test")

##############################################################################
# 5. Class-level analysis tables (lowest-AP classes, confusion, dispersion).

cli("analyze", "--image-pack", str(work / "syn_image"),
    "--audio-pack", str(work / "syn_audio"),
    "--checkpoint", str(work / "run" / "seed_0"),
    "--checkpoint", str(work / "run" / "seed_1"),
    "--split", "test", "--bottom-n", "3")

print(f"\nartifacts left in {work}")
