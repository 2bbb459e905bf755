#!/usr/bin/env python3
"""Regenerates ztest_oracle.csv.

Each row is a (hits_a, hits_b, n) triple together with the one-sided
pooled two-proportion z-test p-value, evaluated with mpmath at 60
decimal digits:

    mu_a = hits_a / n          (IEEE double division, as the library does)
    mu_b = hits_b / n
    pbar = (mu_a + mu_b) / 2
    se   = sqrt(2 * pbar * (1 - pbar) / n)
    z    = (mu_a - mu_b) / se
    p    = erfc(z / sqrt(2)) / 2

Degenerate rows (pbar in {0, 1}) are excluded; that branch is covered
by unit tests, not by this grid.
"""

import csv
import random

from mpmath import mp, mpf, erfc, sqrt, log

mp.dps = 60

OUT = "ztest_oracle.csv"
ROWS = 1000


def pvalue(hits_a: int, hits_b: int, n: int) -> mpf:
    # Match the library's f64 input rounding exactly, then go high precision.
    mu_a = mpf(hits_a / n)
    mu_b = mpf(hits_b / n)
    pbar = (mu_a + mu_b) / 2
    se = sqrt(2 * pbar * (1 - pbar) / n)
    z = (mu_a - mu_b) / se
    return erfc(z / sqrt(mpf(2))) / 2


def main() -> None:
    rng = random.Random(20240811)
    rows = []

    # Structured rows: zero gap, small gaps, large gaps, extreme tails.
    for n in (30, 100, 1000, 10000):
        h = n // 2
        rows.append((h, h, n))
    rows.append((600, 500, 1000))
    rows.append((520, 500, 1000))
    rows.append((900, 100, 1000))
    rows.append((9999, 1, 10000))
    rows.append((1, 9999, 10000))

    # Moderate-z rows: |z| mostly within [0, 9], where CDF accuracy matters.
    while len(rows) < 600:
        n = rng.randint(30, 20000)
        center = rng.randint(n // 10, 9 * n // 10)
        z_target = rng.uniform(-9.0, 9.0)
        pbar = center / n
        delta = round(z_target * (2 * pbar * (1 - pbar) * n) ** 0.5)
        hits_a = center + delta // 2
        hits_b = center - (delta - delta // 2)
        if not (0 <= hits_a <= n and 0 <= hits_b <= n):
            continue
        if hits_a + hits_b == 0 or hits_a + hits_b == 2 * n:
            continue
        rows.append((hits_a, hits_b, n))

    # Fully random rows: mostly extreme z, exercising the tails.
    while len(rows) < ROWS:
        n = rng.randint(30, 20000)
        hits_a = rng.randint(0, n)
        hits_b = rng.randint(0, n)
        if hits_a + hits_b == 0 or hits_a + hits_b == 2 * n:
            continue  # degenerate pooled variance
        rows.append((hits_a, hits_b, n))

    with open(OUT, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hits_a", "hits_b", "n", "p"])
        for hits_a, hits_b, n in rows:
            p = pvalue(hits_a, hits_b, n)
            w.writerow([hits_a, hits_b, n, mp.nstr(p, 20)])

    # Pinned constants used by unit tests.
    print("p(600/1000 vs 500/1000):", mp.nstr(pvalue(600, 500, 1000), 22))
    print("p(520/1000 vs 500/1000):", mp.nstr(pvalue(520, 500, 1000), 22))
    print("U(1, 0.05) :", mp.nstr(sqrt(log(4 / mpf("0.05")) / 2), 22))
    print("U(10, 0.05):", mp.nstr(sqrt(log(4 * mpf(100) / mpf("0.05")) / 20), 22))
    print("U(7, 0.2)  :", mp.nstr(sqrt(log(4 * mpf(49) / mpf("0.2")) / 14), 22))


if __name__ == "__main__":
    main()
