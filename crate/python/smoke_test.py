"""Smoke test for the pystyleco extension.

Build the library first (``cargo build --release -p styleco-python``); the
script copies it next to a temporary package path and imports it.
"""

import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_module(tmp):
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libpystyleco.so"
        if lib.exists():
            shutil.copy(lib, Path(tmp) / "pystyleco.so")
            sys.path.insert(0, tmp)
            import pystyleco

            return pystyleco
    sys.exit("libpystyleco.so not found; run cargo build --release -p styleco-python")


def main():
    with tempfile.TemporaryDirectory() as tmp:
        ps = import_module(tmp)

        cfg = ps.Config()
        d = cfg.to_dict()
        assert d["views"] == 12 and d["eta"] == 0.2 and d["patch_size"] == 48
        small = cfg.replace(views=4, seeds=12, preselect_k=10, latent_k=8, pslf_max_iters=100,
                            pslf_restarts=1, max_iterations=3)
        assert small.to_dict()["views"] == 4
        try:
            cfg.replace(eta=2.0)
        except ValueError:
            pass
        else:
            raise AssertionError("out-of-range eta accepted")

        cube = ps.Mesh(
            [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
            [[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
             [1, 2, 6], [1, 6, 5], [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7]],
            "cube",
        )
        assert len(cube) == 12 and abs(cube.total_area() - 6.0) < 1e-12
        img = cube.render(0)
        assert len(img) == 200 and any(v > 0 for row in img for v in row)

        bench = Path(tmp) / "bench"
        truth = ps.synth_benchmark(str(bench), shapes=8)
        assert len(truth) == 8 and len(set(truth.values())) == 4
        labels = ps.planted_labels(truth, 0.3, 0)
        assert all(truth[k] == v for k, v in labels.items())
        triplets = ps.planted_triplets(truth, 10, 0)
        assert all(truth[a] == truth[b] != truth[c] for a, b, c in triplets)

        mesh = ps.Mesh.load(str(bench / "meshes" / "s000.obj"))
        out, flags, stats = mesh.simplify([], reduction=0.5)
        assert stats["faces_after"] <= 0.5 * stats["faces_before"] and len(flags) == len(out)

        run = small.replace(manifest=str(bench / "manifest.json"), truth=str(bench / "truth.csv"),
                            output_dir=os.path.join(tmp, "run"))
        summary = ps.analyze(run, "unsupervised")
        assert sorted(summary["assignment"]) == sorted(truth) and 0.0 < summary["purity"] <= 1.0
        assert (Path(tmp) / "run" / "summary.json").exists()
        assert abs(ps.purity([0, 0, 0, 1, 1], [0, 0, 1, 0, 1]) - 0.6) < 1e-12
        print("pystyleco smoke test passed; purity", summary["purity"])


if __name__ == "__main__":
    main()
