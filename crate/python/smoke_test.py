#!/usr/bin/env python3
"""Smoke test for the plr_py extension module.

Builds the cdylib with cargo, stages it as an importable module in a temp
directory, and exercises the bound surface: the analytic cost model, batch
apportionment, the Frechet distance, and the classifier/generator wrappers.

Run from the repository root:  python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "plr-py"],
        cwd=REPO,
        check=True,
    )
    built = REPO / "target" / "release" / "libplr_py.so"
    if not built.exists():  # macOS fallback
        built = REPO / "target" / "release" / "libplr_py.dylib"
    stage = Path(tempfile.mkdtemp(prefix="plr_py_"))
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy2(built, stage / f"plr_py{suffix}")
    sys.path.insert(0, str(stage))
    import plr_py

    return plr_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    plr_py = build_and_import()

    assert set(plr_py.arch_presets()) == {"ARCH1", "ARCH2", "FMNIST3"}

    # analytic cost model reproduces the reference relative costs
    assert plr_py.cost_blocks("ARCH1") == [4_000_000.0, 200_000.0]
    assert plr_py.cost_blocks("ARCH2") == [1_000_000.0, 1_000_000.0, 100_000.0]
    approx(plr_py.updates("ARCH1", [0.5, 0.5]), 2_200_000.0)
    for arch, freqs, want in [
        ("ARCH1", [0.7, 0.3], 71.4),
        ("ARCH1", [0.5, 0.5], 52.4),
        ("ARCH1", [0.3, 0.7], 33.3),
        ("ARCH2", [0.5, 0.3, 0.2], 66.7),
        ("ARCH2", [0.34, 0.33, 0.33], 52.9),
        ("ARCH2", [0.2, 0.3, 0.5], 38.1),
    ]:
        approx(100.0 * plr_py.relative_cost(arch, freqs), want, tol=0.05)
    approx(plr_py.relative_cost("ARCH1", plr_py.internal_replay("ARCH1")), 1.0)

    # apportionment
    assert plr_py.split_batch(256, [0.7, 0.3]) == [179, 77]
    assert plr_py.split_batch(256, [1.0, 0.0]) == [256, 0]
    assert plr_py.split_batch(0, [0.5, 0.5]) == [0, 0]

    # bad strategies raise
    try:
        plr_py.split_batch(10, [0.5, 0.6])
    except ValueError:
        pass
    else:
        raise AssertionError("off-simplex strategy must raise ValueError")

    # Frechet distance closed forms
    approx(plr_py.frechet_distance([0.0], [[0.0]], [1.0], [[0.0]]), 1.0, tol=1e-4)
    approx(plr_py.frechet_distance([0.0], [[1.0]], [0.0], [[4.0]]), 1.0, tol=1e-4)

    # SEM
    mean, sem = plr_py.average_accuracy_sem([0.70, 0.71, 0.72])
    approx(mean, 0.71, tol=1e-12)
    approx(sem, 0.00577, tol=1e-5)
    _, single = plr_py.average_accuracy_sem([0.5])
    assert single is None

    # classifier: softmax-normalized tails reproduce the full forward
    clf = plr_py.Classifier("FMNIST3", seed=0)
    c, h, w = clf.input_shape()
    assert (c, h, w) == (1, 28, 28)
    batch = 3
    images = [((i * 37) % 255) / 255.0 for i in range(batch * c * h * w)]
    logits, taps = clf.forward_with_taps(images)
    assert len(logits) == batch and len(logits[0]) == 10
    assert len(taps) == clf.num_levels() == 3
    for level in range(3):
        assert len(taps[level][0]) == clf.level_width(level) == 50
        re = clf.forward_from_level(taps[level], level)
        for row_a, row_b in zip(re, logits):
            for a, b in zip(row_a, row_b):
                approx(a, b, tol=0.0)  # bit-exact recomputation

    clf.freeze_extractor()
    mask = clf.frozen_mask()
    assert mask[:3] == [True, True, True] and mask[-1] is False

    # generator: mirrored shapes and prefix-only decoding
    gen = plr_py.Generator("ARCH2", latent_dim=16, seed=0)
    assert gen.encoder_shapes() == [(1024, 1000), (1000, 1000), (1000, 1000)]
    assert gen.decoder_shapes() == [(16, 1000), (1000, 1000), (1000, 1000), (1000, 1024)]
    before = gen.stages_executed()
    deep = gen.sample_features(2, 4, seed=1)
    deep_stages = gen.stages_executed() - before
    assert len(deep) == 4 and len(deep[0]) == 1000
    before = gen.stages_executed()
    shallow = gen.sample_features(0, 4, seed=1)
    shallow_stages = gen.stages_executed() - before
    assert len(shallow[0]) == 1000
    assert deep_stages < shallow_stages, "deep sampling must run fewer decoder stages"

    print("plr_py smoke test: all checks passed")


if __name__ == "__main__":
    main()
