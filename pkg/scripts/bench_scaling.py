"""Operation-count table for sequential and scan evaluation, with the calibrated scan constant."""
from __future__ import annotations

import argparse
from pathlib import Path

from minmax_rnc.verify import bench, bench_table, calibrate_scan_constant


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=Path("runs/bench.tsv"))
    args = p.parse_args()
    rows = bench([8, 16, 32, 64, 128, 256, 512, 1024], [1, 2, 4, 8])
    table = bench_table(rows)
    c = calibrate_scan_constant()
    worst = max((r for r in rows if r.mode == "scan"), key=lambda r: r.oplus / (r.T * r.N ** 3))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(table)
    print(table, end="")
    print(f"calibrated c (N=2, T=8) = {c:.6f}; largest scan ratio {worst.oplus / (worst.T * worst.N ** 3):.6f} "
          f"at T={worst.T} N={worst.N}")


if __name__ == "__main__":
    main()
