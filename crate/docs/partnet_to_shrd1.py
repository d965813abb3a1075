"""Convert PartNet shapes to SHRD1 with finest-grained part instance labels.

Reads a PartNet (v0) annotation directory, samples points area-uniformly on
the meshes of every leaf node of result_after_merging.json, and writes one
SHRD1 file per shape. Leaf nodes become instance ids in traversal order.

    python docs/partnet_to_shrd1.py data_v0/ shapes/ --points 10000 --ids 173 2231

Needs only numpy.
"""

import argparse
import json
from pathlib import Path

import numpy as np


def read_obj(path):
    verts, faces = [], []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def leaves(node):
    kids = node.get("children") or []
    if not kids:
        yield node
    for k in kids:
        yield from leaves(k)


def sample(tris, labels, n, rng):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    cross = np.cross(b - a, c - a)
    area = np.linalg.norm(cross, axis=1)
    keep = area > 1e-12
    a, b, c, cross, area, labels = a[keep], b[keep], c[keep], cross[keep], area[keep], labels[keep]
    pick = rng.choice(len(area), size=n, p=area / area.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    pts = a[pick] + u[:, None] * (b[pick] - a[pick]) + v[:, None] * (c[pick] - a[pick])
    normals = cross[pick] / area[pick][:, None]
    return pts, normals, labels[pick]


def convert(shape_dir, out, n, rng):
    tree = json.loads((shape_dir / "result_after_merging.json").read_text())
    roots = tree if isinstance(tree, list) else [tree]
    tris, labels = [], []
    part = 0
    for root in roots:
        for leaf in leaves(root):
            for name in leaf.get("objs", []):
                v, f = read_obj(shape_dir / "objs" / f"{name}.obj")
                if len(f):
                    tris.append(v[f])
                    labels.append(np.full(len(f), part))
            part += 1
    pts, normals, gt = sample(np.concatenate(tris), np.concatenate(labels), n, rng)
    with open(out, "w") as fh:
        fh.write(f"SHRD1 {n} 1\n")
        for p, q, g in zip(pts.tolist(), normals.tolist(), gt.tolist()):
            fh.write(" ".join(map(repr, p + q)) + f" {g}\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("partnet", type=Path, help="directory holding <anno_id>/ folders")
    ap.add_argument("out", type=Path)
    ap.add_argument("--points", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ids", nargs="*", help="annotation ids (default: all)")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    ids = args.ids or sorted(p.name for p in args.partnet.iterdir() if p.is_dir())
    for anno in ids:
        convert(args.partnet / anno, args.out / f"{anno}.shrd", args.points, rng)


if __name__ == "__main__":
    main()
