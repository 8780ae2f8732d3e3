"""Quick end-to-end check of the motionatt_py extension."""

import json
import math
import tempfile
from pathlib import Path

import motionatt_py as ma


def close(a, b, tol=1e-9):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    seq = [[math.sin(0.3 * i + k) for i in range(16)] for k in range(3)]
    back = ma.idct(ma.dct(seq, 16), 16)
    assert all(close(r, s) for r, s in zip(back, seq))

    s = ma.attention_scores([1.0, 0.0], [[1.0, 0.0], [0.5, 0.5], [0.0, 2.0]])
    assert abs(sum(s) - 1.0) < 1e-12 and min(s) >= 0.0
    assert ma.horizon_frames([80, 400, 1000]) == [2, 10, 25]
    assert abs(ma.lr_schedule(1, lr=0.01) - 0.01) < 1e-15

    spec = ma.periodic_spec(joints=2, period=10, orders=2, amplitude=0.5, length=60, seed=3)
    data = ma.gen_synthetic(spec, seed=3)
    assert len(data) == 60 and data.pose_dim == 6
    assert close(data.frames[5], data.frames[15])

    cfg = json.dumps({"m": 12, "t": 4, "d": 8, "hidden": 8, "blocks": 1, "width": 8,
                      "epochs": 2, "batch_size": 4, "lr": 1e-3})
    model = ma.Model(data.pose_dim, cfg, seed=1)
    windows = [data.slice(i, i + 30) for i in range(0, 30, 3)]
    losses = model.train(windows, cfg)
    assert len(losses) == 2 and all(math.isfinite(x) for x in losses)

    history = data.slice(0, 40)
    frames, scores = model.predict(history, steps=2)
    assert len(frames) == 8 and len(frames[0]) == 6 and len(scores) == 2

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = Path(tmp) / "ckpt"
        model.save(str(ckpt))
        again = ma.Model.load(str(ckpt))
        assert again.predict(history, steps=2)[0] == frames
        data.save(str(Path(tmp) / "walk_0.seq"))
        assert ma.PoseSequence.load(str(Path(tmp) / "walk_0.seq")).frames == data.frames

    zv = ma.zero_velocity(history, 3)
    assert zv == [history.frames[-1]] * 3

    try:
        model.predict(data.slice(0, 5))
    except ma.MotionattError as e:
        print("expected error:", e)
    else:
        raise AssertionError("short history accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
