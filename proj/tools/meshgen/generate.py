#!/usr/bin/env python3
"""Generates the fitted benchmark meshes and fracture CSVs under data/.

Requires the gmsh Python module. Each mesh is searched over the target element size until
the triangle count equals the target grid size. Fracture lines carry physical tags
101+i (i-th blocking feature) and 301+j (j-th conductive feature); the boundary is left
untagged and classified per side at load time.

    python3 tools/meshgen/generate.py [--only NAME] [--out data]
"""

import argparse
import csv
import math
import os
import sys

import numpy as np

import gmsh


def single_vertical():
    return [((0.5, 0.5), (0.5, 1.0), "conductive", 1e-3, 1e8)]


def single_slanted():
    return [((0.25, 0.75), (0.75, 0.25), "conductive", 1e-3, 1e8)]


def regular():
    lines = [
        ((0.0, 0.5), (1.0, 0.5)),
        ((0.5, 0.0), (0.5, 1.0)),
        ((0.5, 0.75), (1.0, 0.75)),
        ((0.75, 0.5), (0.75, 1.0)),
        ((0.5, 0.625), (0.75, 0.625)),
        ((0.625, 0.5), (0.625, 0.75)),
    ]
    return [(a, b, "conductive", 1e-4, 1e4) for a, b in lines]


def complex_network():
    rows = [
        (0.05, 0.4160, 0.22, 0.0624),
        (0.05, 0.2750, 0.25, 0.1350),
        (0.15, 0.6300, 0.45, 0.0900),
        (0.15, 0.9167, 0.40, 0.5000),
        (0.65, 0.8333, 0.849723, 0.167625),
        (0.70, 0.2350, 0.849723, 0.167625),
        (0.60, 0.3800, 0.85, 0.2675),
        (0.35, 0.9714, 0.80, 0.7143),
        (0.75, 0.9574, 0.95, 0.8155),
        (0.15, 0.8363, 0.40, 0.9727),
    ]
    out = []
    for i, (x1, y1, x2, y2) in enumerate(rows):
        if i in (3, 4):
            out.append(((x1, y1), (x2, y2), "blocking", 1e-4, 1e-4))
        else:
            out.append(((x1, y1), (x2, y2), "conductive", 1e-4, 1e4))
    return out


def _segment_distance(p, a, b):
    p, a, b = map(np.asarray, (p, a, b))
    d = b - a
    t = np.clip(np.dot(p - a, d) / np.dot(d, d), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * d)))


def _intersection(a, b, c, d):
    a, b, c, d = map(np.asarray, (a, b, c, d))
    r, s = b - a, d - c
    den = r[0] * s[1] - r[1] * s[0]
    if abs(den) < 1e-14:
        return None
    q = c - a
    t = (q[0] * s[1] - q[1] * s[0]) / den
    u = (q[0] * r[1] - q[1] * r[0]) / den
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return a + t * r, r, s
    return None


def realistic_synthetic(seed=64):
    """64 fractures on (0,700)x(0,600) with two dominant orientation families.

    Candidates are rejected when an endpoint comes closer than 12 m to another fracture, or
    when two fractures cross at less than 25 degrees or within 15 m of an endpoint, so the
    network can be meshed with shape-regular triangles at the target resolution.
    """
    rng = np.random.default_rng(seed)
    segs = []
    while len(segs) < 64:
        family = rng.random() < 0.55
        angle = rng.normal(math.radians(35.0 if family else 120.0), math.radians(10.0))
        length = rng.uniform(50.0, 220.0)
        c = np.array([rng.uniform(20.0, 680.0), rng.uniform(20.0, 580.0)])
        h = 0.5 * length * np.array([math.cos(angle), math.sin(angle)])
        a, b = c - h, c + h
        if min(a[0], b[0]) < 15.0 or max(a[0], b[0]) > 685.0:
            continue
        if min(a[1], b[1]) < 15.0 or max(a[1], b[1]) > 585.0:
            continue
        ok = True
        for p, q in segs:
            for e in (a, b):
                if _segment_distance(e, p, q) < 12.0:
                    ok = False
            for e in (p, q):
                if _segment_distance(e, a, b) < 12.0:
                    ok = False
            hit = _intersection(a, b, p, q)
            if hit is not None:
                x, r, s = hit
                cosang = abs(np.dot(r, s)) / (np.linalg.norm(r) * np.linalg.norm(s))
                if cosang > math.cos(math.radians(25.0)):
                    ok = False
                if min(np.linalg.norm(x - e) for e in (a, b, p, q)) < 15.0:
                    ok = False
            if not ok:
                break
        if ok:
            segs.append((a, b))
    out = []
    for a, b in segs:
        out.append(((round(a[0], 6), round(a[1], 6)), (round(b[0], 6), round(b[1], 6)),
                    "conductive", 1e-2, 1e-8))
    return out


CASES = {
    # name: (features, width, height, target cells)
    "single_vertical": (single_vertical, 1.0, 1.0, 450),
    "single_slanted": (single_slanted, 1.0, 1.0, 404),
    "regular": (regular, 1.0, 1.0, 366),
    "complex": (complex_network, 1.0, 1.0, 2680),
    "realistic": (realistic_synthetic, 700.0, 600.0, 3611),
}


def build(features, width, height, lc, odd=False):
    gmsh.model.add("m")
    occ = gmsh.model.occ
    rect = occ.addRectangle(0.0, 0.0, 0.0, width, height)
    lines = []
    for (a, b, *_rest) in features:
        p = occ.addPoint(a[0], a[1], 0.0)
        q = occ.addPoint(b[0], b[1], 0.0)
        lines.append(occ.addLine(p, q))
    _, mapping = occ.fragment([(2, rect)], [(1, l) for l in lines])
    occ.synchronize()
    # mapping[0] is the surface, mapping[1 + i] the pieces of line i.
    surfaces = [t for d, t in mapping[0] if d == 2]
    gmsh.model.addPhysicalGroup(2, surfaces, 1)
    nb = nc = 0
    for i, f in enumerate(features):
        pieces = [t for d, t in mapping[1 + i] if d == 1]
        if f[2] == "blocking":
            tag = 101 + nb
            nb += 1
        else:
            tag = 301 + nc
            nc += 1
        gmsh.model.addPhysicalGroup(1, pieces, tag)
    if odd:
        # Opposite sides get equal segment counts, which makes the triangle count even; one
        # extra segment on the bottom side flips the parity.
        for d, t in gmsh.model.getEntities(1):
            x0, y0, _, x1, y1, _ = gmsh.model.getBoundingBox(d, t)
            if abs(y0) < 1e-6 * height and abs(y1) < 1e-6 * height and abs(x1 - x0 - width) < 1e-6 * width:
                gmsh.model.mesh.setTransfiniteCurve(t, int(round(width / lc)) + 2)
    gmsh.option.setNumber("Mesh.CharacteristicLengthMin", lc)
    gmsh.option.setNumber("Mesh.CharacteristicLengthMax", lc)
    gmsh.option.setNumber("Mesh.CharacteristicLengthFromPoints", 0)
    gmsh.option.setNumber("Mesh.CharacteristicLengthExtendFromBoundary", 0)
    gmsh.model.mesh.generate(2)
    types, tags, _ = gmsh.model.mesh.getElements(2)
    n = sum(len(t) for t in tags)
    return n


def count(features, width, height, lc, odd=False):
    gmsh.clear()
    return build(features, width, height, lc, odd)


def search(features, width, height, target):
    """Finds a meshing algorithm and element size giving exactly `target` triangles."""
    area = width * height
    lc0 = math.sqrt(4.0 * area / (math.sqrt(3.0) * target))
    for algorithm in (6, 5, 1):
        gmsh.option.setNumber("Mesh.Algorithm", algorithm)
        lo, hi = 0.3 * lc0, 3.0 * lc0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            n = count(features, width, height, mid, target % 2 == 1)
            if n == target:
                return algorithm, mid
            if n > target:
                lo = mid
            else:
                hi = mid
        # Count is not monotone near the target; scan a window around the bisection point.
        for k in range(1, 600):
            for sign in (1.0, -1.0):
                trial = mid * (1.0 + sign * 0.4 * k / 600.0)
                if count(features, width, height, trial, target % 2 == 1) == target:
                    return algorithm, trial
    raise RuntimeError("no element size gives %d cells" % target)


def write_csv(path, features):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x1", "y1", "x2", "y2", "kind", "aperture", "permeability"])
        for a, b, kind, ap, perm in features:
            w.writerow([repr(float(a[0])), repr(float(a[1])), repr(float(b[0])), repr(float(b[1])),
                        kind, repr(ap), repr(perm)])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--only")
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "..", "data"))
    parser.add_argument("--refine", type=float, default=0.0,
                        help="skip the count search and divide the element size by this factor")
    args = parser.parse_args()
    gmsh.initialize()
    gmsh.option.setNumber("General.Terminal", 0)
    gmsh.option.setNumber("General.NumThreads", 1)
    gmsh.option.setNumber("Mesh.RandomSeed", 1)
    gmsh.option.setNumber("Mesh.MshFileVersion", 2.2)
    gmsh.option.setNumber("Mesh.Binary", 0)
    gmsh.option.setNumber("Mesh.SaveAll", 0)
    for name, (make, width, height, target) in CASES.items():
        if args.only and name != args.only:
            continue
        features = make()
        algorithm, lc = search(features, width, height, target)
        if args.refine > 0.0:
            lc /= args.refine
            target = None
        gmsh.option.setNumber("Mesh.Algorithm", algorithm)
        gmsh.clear()
        n = build(features, width, height, lc, target is not None and target % 2 == 1)
        assert target is None or n == target
        os.makedirs(os.path.join(args.out, "meshes"), exist_ok=True)
        os.makedirs(os.path.join(args.out, "fractures"), exist_ok=True)
        gmsh.write(os.path.join(args.out, "meshes", name + ".msh"))
        write_csv(os.path.join(args.out, "fractures", name + ".csv"), features)
        print("%s: %d cells, algorithm %d, element size %.6g" % (name, n, algorithm, lc), file=sys.stderr)
    gmsh.finalize()


if __name__ == "__main__":
    main()
