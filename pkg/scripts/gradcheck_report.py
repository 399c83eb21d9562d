"""Finite-difference gradient check of every layer and the full toy model."""

import time

from recosa.gradsuite import CASES, run_case

if __name__ == "__main__":
    t0 = time.perf_counter()
    for name in CASES:
        report = run_case(name)
        worst = max(report, key=report.get)
        print(f"{name:24s} worst={report[worst]:.2e} ({worst}, {len(report)} tensors)")
    print(f"total {time.perf_counter() - t0:.1f}s")
