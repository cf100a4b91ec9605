"""Generate scripts/ffr.bbg: a tube of radius 4 along the main diagonal of
the cube 1..106, fibres along the tube axis."""
from pathlib import Path

import numpy as np

N, R = 106, 4.0
axis = np.ones(3) / np.sqrt(3.0)


def main(path=Path(__file__).resolve().parents[1] / "src/ringsim/scripts/ffr.bbg"):
    lines = ["# tube of radius 4 along the diagonal, fibres along the axis"]
    c = np.arange(1, N + 1)
    z, y, x = np.meshgrid(c, c, c, indexing="ij")
    p = np.stack([x, y, z], axis=-1).reshape(-1, 3).astype(float)
    d = p - 1.0
    along = d @ axis
    dist2 = np.einsum("ij,ij->i", d, d) - along ** 2
    keep = dist2 <= R * R + 1e-9
    f = ",".join(repr(float(v)) for v in axis)
    for x, y, z in p[keep].astype(int):
        lines.append(f"{x},{y},{z},1,{f}")
    path.write_text("\n".join(lines) + "\n")
    print(f"{path}: {int(keep.sum())} points")


if __name__ == "__main__":
    main()
