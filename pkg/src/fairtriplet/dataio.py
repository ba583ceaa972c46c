"""Dataset and embedding file formats.

Dataset files are NPZ archives with a self-describing header and one record
per pair; see README for the exact layout. Embedding exports are CSV with
one row per image (two per pair) and shortest round-trip float formatting,
so reading the file back recovers bit-identical float64 vectors.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import ConfigError, Dataset, DEFAULT_TAXONOMY, GroupTaxonomy, savez_deterministic
from .model import EmbeddingNetwork

DATASET_FORMAT_VERSION = 1


def save_dataset(path: str | Path, dataset: Dataset) -> None:
    savez_deterministic(path, {
        "format_version": np.int64(DATASET_FORMAT_VERSION),
        "input_dim": np.int64(dataset.input_dim),
        "n_pairs": np.int64(len(dataset)),
        "taxonomy_hash": np.str_(dataset.taxonomy.table_hash()),
        "identity_id": dataset.identity_ids,
        "country": dataset.countries,
        "gender": dataset.genders,
        "selfie": dataset.selfie_features,
        "doc": dataset.doc_features,
    })


def load_dataset(path: str | Path, taxonomy: GroupTaxonomy = DEFAULT_TAXONOMY) -> Dataset:
    with np.load(path) as z:
        if int(z["format_version"]) != DATASET_FORMAT_VERSION:
            raise ConfigError(f"unsupported dataset format version in {path}")
        if str(z["taxonomy_hash"]) != taxonomy.table_hash():
            raise ConfigError(
                f"dataset {path} was written with a different group taxonomy"
            )
        ds = Dataset(
            identity_ids=z["identity_id"],
            countries=z["country"],
            genders=z["gender"],
            selfie_features=z["selfie"],
            doc_features=z["doc"],
            taxonomy=taxonomy,
        )
        if len(ds) != int(z["n_pairs"]) or ds.input_dim != int(z["input_dim"]):
            raise ConfigError(f"dataset {path} header disagrees with its contents")
    return ds


def _fmt(x: float) -> str:
    return str(float(x))


def write_embeddings_csv(path: str | Path, net: EmbeddingNetwork, dataset: Dataset) -> int:
    """Write one row per image: identity_id, country, gender, domain, then the
    embedding components. Selfie rows come first, then doc rows, both in pair
    order. Returns the row count (2 x pairs)."""
    emb_s = net.forward(dataset.selfie_features)
    emb_d = net.forward(dataset.doc_features)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["identity_id", "country", "gender", "domain"] + [
        f"e{i}" for i in range(net.embed_dim)
    ]
    rows = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for domain, emb in (("selfie", emb_s), ("doc", emb_d)):
            for i in range(len(dataset)):
                writer.writerow(
                    [int(dataset.identity_ids[i]), dataset.countries[i],
                     dataset.genders[i], domain]
                    + [_fmt(x) for x in emb[i]]
                )
                rows += 1
    return rows


def read_embeddings_csv(path: str | Path):
    """Read an embedding export back; returns (identity_ids, countries,
    genders, domains, vectors)."""
    ids, countries, genders, domains, vecs = [], [], [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        dim = len(header) - 4
        for row in reader:
            ids.append(int(row[0]))
            countries.append(row[1])
            genders.append(row[2])
            domains.append(row[3])
            vecs.append([float(x) for x in row[4:4 + dim]])
    return (
        np.array(ids, dtype=np.int64),
        np.array(countries),
        np.array(genders),
        np.array(domains),
        np.array(vecs, dtype=np.float64),
    )


def write_far_matrix_csv(path: str | Path, matrix, config_hash: str = "") -> None:
    """CSV grid with group codes as row/column headers (selfie group in the
    row, doc group in the column). The first line is a comment carrying the
    run's config hash and the threshold."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# config_hash={config_hash} theta={_fmt(matrix.theta)}\n")
        writer = csv.writer(f)
        writer.writerow(["selfie_group\\doc_group", *matrix.groups])
        for i, g in enumerate(matrix.groups):
            writer.writerow([g] + [_fmt(x) for x in matrix.values[i]])


def write_roc_csv(path: str | Path, curve, config_hash: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with_std = curve.far_std is not None
    with open(path, "w", newline="") as f:
        f.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(f)
        header = ["theta", "far", "frr"]
        if with_std:
            header += ["far_std", "frr_std"]
        writer.writerow(header)
        for i in range(len(curve.thetas)):
            row = [_fmt(curve.thetas[i]), _fmt(curve.far[i]), _fmt(curve.frr[i])]
            if with_std:
                row += [_fmt(curve.far_std[i]), _fmt(curve.frr_std[i])]
            writer.writerow(row)
