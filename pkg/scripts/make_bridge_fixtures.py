#!/usr/bin/env python3
"""Regenerates the bridge conformance fixtures in frontend/tests/fixtures/.

Each case holds a small random gray slice, a point prompt, and the expected
Otsu threshold plus flood mask computed by the engine's own operators. The
bridge's threshold mode must reproduce the masks bit-exactly.
"""

import base64
import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from voxflood import ops

OUT = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"
SIZE = 64


def flood(binary, x, y):
    if not binary[y, x]:
        return np.zeros_like(binary)
    lab, _ = ndimage.label(binary, structure=np.ones((3, 3), dtype=bool))
    return lab == lab[y, x]


def make_case(rng, blobs):
    gray = np.full((SIZE, SIZE), 20, dtype=np.uint8)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    for _ in range(blobs):
        cx, cy = rng.integers(8, SIZE - 8, size=2)
        r = int(rng.integers(3, 12))
        gray[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = int(rng.integers(120, 255))
    gray = np.clip(gray.astype(np.int16) + rng.integers(-3, 4, gray.shape), 0, 255).astype(np.uint8)
    px, py = (int(v) for v in rng.integers(0, SIZE, size=2))
    threshold = ops.otsu_threshold(ops.histogram_u8(gray))
    mask = flood(gray > threshold, px, py)
    return {
        "w": SIZE,
        "h": SIZE,
        "gray": base64.b64encode(gray.tobytes()).decode("ascii"),
        "point": [px, py],
        "otsu": int(threshold),
        "mask": base64.b64encode(mask.astype(np.uint8).tobytes()).decode("ascii"),
    }


def main():
    rng = np.random.default_rng(424242)
    cases = [make_case(rng, blobs) for blobs in [1, 1, 2, 2, 3, 3, 4, 4, 0, 0] for _ in range(2)]
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "threshold_cases.json", "w", encoding="ascii") as f:
        json.dump(cases, f)
    print(f"wrote {OUT / 'threshold_cases.json'} ({len(cases)} cases)")


if __name__ == "__main__":
    main()
