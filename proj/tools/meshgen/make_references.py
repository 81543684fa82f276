#!/usr/bin/env python3
"""Regenerates the reference slices in data/reference.

The benchmark reference curves are not available here, so each reference is this
solver's own P2 solution on a mesh with a three times smaller element size. Every preset
with a slice "reference" gets one; the preset's own mesh and degree are replaced.

    python3 tools/meshgen/make_references.py --dfm build/dfm
"""

import argparse
import glob
import json
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--dfm", default=os.path.join(ROOT, "build", "dfm"))
    parser.add_argument("--refine", type=float, default=3.0)
    parser.add_argument("--degree", type=int, default=2)
    args = parser.parse_args()

    work = tempfile.mkdtemp(prefix="dfm_ref_")
    subprocess.run([sys.executable, os.path.join(ROOT, "tools", "meshgen", "generate.py"),
                    "--out", work, "--refine", str(args.refine)], check=True)
    for preset in sorted(glob.glob(os.path.join(ROOT, "presets", "*.json"))):
        with open(preset) as f:
            cfg = json.load(f)
        slices = cfg.get("outputs", {}).get("slices", [])
        refs = [s for s in slices if "reference" in s]
        if not refs:
            continue
        mesh = os.path.basename(cfg["mesh"]["file"])
        cfg["mesh"]["file"] = os.path.join(work, "meshes", mesh)
        frac = cfg["fractures"]["file"]
        cfg["fractures"]["file"] = os.path.normpath(os.path.join(ROOT, "presets", frac))
        cfg["scheme"]["degree"] = args.degree
        cfg["outputs"] = {"slices": [{k: v for k, v in s.items() if k != "reference"} for s in refs],
                          "vtk": False}
        cfg["name"] = cfg["name"] + "_reference"
        path = os.path.join(work, os.path.basename(preset))
        with open(path, "w") as f:
            json.dump(cfg, f, indent=2)
        out = os.path.join(work, "out_" + cfg["name"])
        subprocess.run([args.dfm, "steady", "--config", path, "--out-dir", out], check=True)
        for s in refs:
            target = os.path.normpath(os.path.join(ROOT, "presets", s["reference"]))
            os.makedirs(os.path.dirname(target), exist_ok=True)
            shutil.copyfile(os.path.join(out, "slice_%s.csv" % s["name"]), target)
            print("wrote", os.path.relpath(target, ROOT))
    shutil.rmtree(work)


if __name__ == "__main__":
    main()
