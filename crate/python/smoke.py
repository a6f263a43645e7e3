"""End-to-end smoke run of the Python bindings.

Builds the extension if needed, then trains three small teachers on a
synthetic dataset, distils a student and checks the basic invariants.

    python3 python/smoke.py
"""

import math
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "pyhetcomp", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    out = tempfile.mkdtemp(prefix="pyhetcomp-")
    shutil.copy(os.path.join(ROOT, "target", "release", "libpyhetcomp.so"), os.path.join(out, "pyhetcomp.so"))
    sys.path.insert(0, out)


def main():
    build()
    import pyhetcomp as hc

    assert hc.discrepancy([1, 2, 3], [1, 2, 3], k=3) < 1e-12
    assert hc.discrepancy([3, 2, 1], [1, 2, 3], k=3) > 0.0
    assert hc.loss_overall([2.0, 1.0], [0.0]) < hc.loss_fine([2.0, 1.0], [0.0]) + 1e-12
    assert hc.ensemble_rank([([5, 6, 7], [0.0, 0.0, 0.0])], 2) == [5, 6]

    ds = hc.Dataset.synthetic(users=80, items=200, seed=3)
    print(ds)
    trajs = [
        hc.train_teacher(ds, kind, dim=16, max_epochs=30, seed=i, name=kind)
        for i, kind in enumerate(["mf", "ml", "dnn"])
    ]
    for t in trajs:
        assert t.num_checkpoints == 4 and t.num_users == ds.num_users
        assert len(t.ranking(4, 0)) == 50

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "mf.traj")
        trajs[0].save(path)
        assert hc.Trajectory.load(path).ranking(2, 5) == trajs[0].ranking(2, 5)
        ds.save(os.path.join(tmp, "data"))
        assert hc.Dataset.load(os.path.join(tmp, "data")).num_items == ds.num_items

    student = hc.distill(ds, trajs, variant="full", epochs=30, seed=1)
    v = [r["mean_v"] for r in student.log]
    assert all(a <= b for a, b in zip(v, v[1:])), v
    assert all(math.isfinite(r["loss"]) for r in student.log if r["epoch"] > 0)
    recs = student.recommend(ds, k=10)
    assert len(recs) == ds.num_users
    for u in range(ds.num_users):
        assert len(set(recs[u])) == 10
        assert not set(recs[u]) & set(ds.train_items(u))

    again = hc.distill(ds, trajs, variant="full", epochs=30, seed=1)
    assert again.recommend(ds, k=10) == recs

    try:
        hc.Trajectory.load("/nonexistent.traj")
    except OSError:
        pass
    else:
        raise AssertionError("missing file should raise OSError")

    last = student.log[-1]
    print(f"ok: D@10 {last['D@10']:.4f}, mean_v {last['mean_v']:.2f}, converged users {student.converged_users}")


if __name__ == "__main__":
    main()
