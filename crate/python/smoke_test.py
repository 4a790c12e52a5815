"""Smoke test for the framesift_py extension module."""

import math
import tempfile
from pathlib import Path

import framesift_py as fs


def main():
    red = fs.Frame(8, 8, 3, bytes([255, 0, 0]) * 64)
    assert abs(fs.colorfulness(red) - 85.5296) < 1e-3
    gray = fs.Frame(8, 8, 3, bytes([90]) * 192)
    assert fs.colorfulness(gray) == 0.0
    assert fs.cbt(1.0, 1.0) == 1.0

    xs = [(i - 20) / 20 for i in range(41)]
    poly = [1.0 - 2.0 * x + 0.5 * x**3 for x in xs]
    assert max(abs(a - b) for a, b in zip(fs.savgol(poly, 11, 3), poly)) < 1e-9
    wave = [math.sin(2 * math.pi * 2 * i / 100) for i in range(100)]
    assert max(abs(a - b) for a, b in zip(fs.fft_lowpass(wave, 0.1), wave)) < 1e-9
    assert [p for p, _ in fs.find_peaks([0, 1, 0, 2, 2, 0])] == [1, 3]

    mask = [1, 1, 0, 0, 0, 0, 0, 1, 1]
    assert [a for a, _ in fs.find_contours(3, 3, mask)] == [2, 2]

    dets = [fs.Detection("v", 5, 0, t) for t in (0.0, 0.9, 1.8)]
    assert [d.time_s for d in fs.dedupe(dets, 1.0)] == [0.0, 1.8]
    f1, counts = fs.evaluate(dets[:1], [("v", 5, 0.0, 1.0)])
    assert f1 == 1.0 and counts == {5: (1, 0, 0)}

    bg = fs.gradient_background(11, 7, "circular", [255, 255, 255], [0, 0, 0])
    assert bg.data()[(3 * 11 + 5) * 3] == 255

    scenario = """
video_id = "smoke"
duration_s = 8.0
[[events]]
class_id = 12
enter_t = 2.0
exit_t = 4.0
"""
    with tempfile.TemporaryDirectory() as tmp:
        frames, gt_csv, labels_csv = fs.synthesize(tmp, scenario)
        labels = dict(
            line.split(",") for line in Path(labels_csv).read_text().splitlines()[1:]
        )
        labels = {k: int(v) for k, v in labels.items()}
        found = fs.run_pipeline(frames, frame_rate=30.0, labels=labels, default_class=116)
        assert [d.class_id for d in found] == [12], found
        assert 2.0 <= found[0].time_s <= 4.5

    print("framesift_py smoke test passed:", fs.preset_names())


if __name__ == "__main__":
    main()
