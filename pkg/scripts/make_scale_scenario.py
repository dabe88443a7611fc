"""Regenerate the builtin ``scale`` scenario (10 cameras x 32,900 ticks)."""

import argparse
import json
import random
from pathlib import Path

CLASSES = ["obstruction", "noise_burst", "frozen", "loiter_alarm"]


def build(seed: int = 329, cameras: int = 10, ticks: int = 32_900) -> dict:
    rng = random.Random(seed)
    timeline = []
    for i in range(cameras):
        cam = f"s{i:02d}"
        t = rng.randint(100, 1500)
        butted = False
        while True:
            length = rng.randint(30, 600)
            cls = rng.choice(CLASSES)
            if butted and cls == "loiter_alarm":
                # alarms look back a few frames; keep that window on normal footage
                t += rng.randint(200, 3000)
            if t + length >= ticks:
                break
            timeline.append({"start": t, "end": t + length - 1, "camera": cam, "class": cls})
            # occasionally butt two segments together
            butted = rng.random() < 0.1
            t += length + (0 if butted else rng.randint(200, 3000))
    return {
        "schema": "v1",
        "name": "scale",
        "seed": seed,
        "duration_ticks": ticks,
        "cameras": [{"id": f"s{i:02d}"} for i in range(cameras)],
        "timeline": timeline,
        "probe_interval": 10.0,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1]
                                         / "src/cascadewatch/scenarios/scale.json"))
    args = ap.parse_args()
    doc = build()
    Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    print(f"{len(doc['timeline'])} segments -> {args.out}")


if __name__ == "__main__":
    main()
