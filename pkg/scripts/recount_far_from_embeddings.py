#!/usr/bin/env python3
"""Recount a run's overall FAR/FRR from exported embeddings.

Independent cross-check of eval reports: reads an embedding CSV (produced by
`fairtriplet export`) and a report.json, recomputes the accepted/rejected
counts at the report's threshold, and compares them against the report's
integer counts. Distances follow the toolkit's documented kernel (see
README, "Conventions"); the masking, counting, and aggregation here are
written from scratch on purpose.

Exit code 0 iff all counts match exactly.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np


def load_embeddings(path):
    ids, domains, vecs = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        dim = len(header) - 4
        for row in reader:
            ids.append(int(row[0]))
            domains.append(row[3])
            vecs.append([float(x) for x in row[4:4 + dim]])
    ids = np.array(ids, dtype=np.int64)
    domains = np.array(domains)
    vecs = np.array(vecs, dtype=np.float64)
    return ids, domains, vecs


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--embeddings", required=True, help="CSV from `fairtriplet export`")
    ap.add_argument("--report", required=True, help="report.json from `fairtriplet eval`")
    args = ap.parse_args()

    ids, domains, vecs = load_embeddings(args.embeddings)
    with open(args.report) as f:
        report = json.load(f)
    theta = report["theta"]

    selfies = vecs[domains == "selfie"]
    docs = vecs[domains == "doc"]
    sids = ids[domains == "selfie"]
    dids = ids[domains == "doc"]

    # canonical distance kernel (same operation order as the toolkit)
    d = selfies @ docs.T
    d *= -2.0
    d += np.einsum("ij,ij->i", selfies, selfies)[:, None]
    d += np.einsum("ij,ij->i", docs, docs)[None, :]
    np.maximum(d, 0.0, out=d)

    impostor = sids[:, None] != dids[None, :]
    accepted = int(np.count_nonzero((d < theta) & impostor))
    comparisons = int(np.count_nonzero(impostor))

    # genuine pairs: same pair order in both blocks of the export
    gdiff = selfies - docs
    genuine = np.einsum("ij,ij->i", gdiff, gdiff)
    rejected = int(np.count_nonzero(genuine >= theta))

    checks = [
        ("far_accepted", accepted, report["overall"]["far_accepted"]),
        ("far_comparisons", comparisons, report["overall"]["far_comparisons"]),
        ("frr_rejected", rejected, report["overall"]["frr_rejected"]),
        ("genuine_pairs", len(genuine), report["overall"]["genuine_pairs"]),
    ]
    ok = True
    for name, got, want in checks:
        status = "ok" if got == want else "MISMATCH"
        if got != want:
            ok = False
        print(f"{name}: recount {got} vs report {want} [{status}]")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
