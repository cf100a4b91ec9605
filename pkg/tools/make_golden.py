"""Write the golden files in tests/golden from the independent oracles in
tests/oracles.py (the package itself is not used)."""
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402


def main():
    out = ROOT / "tests" / "golden"
    out.mkdir(exist_ok=True)
    rows = oracles.cross_field_frame(102)
    (out / "cross_field.ppm").write_bytes(oracles.ppm_p6(rows, 102, 102))
    (out / "window_dump.bin").write_bytes(oracles.dump_bytes(oracles.dump_window_values()))
    for p in sorted(out.iterdir()):
        print(p.name, p.stat().st_size)


if __name__ == "__main__":
    main()
