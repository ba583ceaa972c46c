"""Core domain types: group taxonomy, demographic labels, datasets, and the
unit-sphere distance primitives shared by every other module.

Embeddings are plain float64 numpy arrays with unit L2 norm (unit rows for
batches); ``normalize`` / ``normalize_rows`` are the constructors that
guarantee the invariant and evaluation entry points re-check it. All
distances in the toolkit are squared Euclidean; for unit vectors they live
in [0, 4] and satisfy ``||a - b||^2 == 2 - 2 <a, b>``.

Everything here is immutable after construction and safe to share across
threads.
"""
from __future__ import annotations

import hashlib
import io
import zipfile
from dataclasses import dataclass
from functools import cached_property

import numpy as np

CONTINENTS = ("EU", "AM", "AF", "AS", "OC", "UN")
GENDERS = ("male", "female", "unknown")
GROUP_AXES = ("country", "continent", "gender")

# Canonical country-group table: 30 groups, each pinned to exactly one
# continent. The "*_rem" buckets are atomic remainder groups, not unions of
# the named countries.
_COUNTRY_ROWS = (
    ("france", "EU"),
    ("great_britain", "EU"),
    ("ireland", "EU"),
    ("italy", "EU"),
    ("latvia", "EU"),
    ("lithuania", "EU"),
    ("poland", "EU"),
    ("portugal", "EU"),
    ("romania", "EU"),
    ("spain", "EU"),
    ("europe_rem", "EU"),
    ("brazil", "AM"),
    ("canada", "AM"),
    ("colombia", "AM"),
    ("usa", "AM"),
    ("venezuela", "AM"),
    ("americas_rem", "AM"),
    ("nigeria", "AF"),
    ("north_africa", "AF"),
    ("south_africa", "AF"),
    ("africa_rem", "AF"),
    ("china", "AS"),
    ("india", "AS"),
    ("indonesia", "AS"),
    ("malaysia", "AS"),
    ("singapore", "AS"),
    ("thailand", "AS"),
    ("asia_rem", "AS"),
    ("oceania", "OC"),
    ("unknown", "UN"),
)


class ConfigError(Exception):
    """Invalid or inconsistent configuration."""


class ResolutionError(Exception):
    """A measurement was requested below its statistical resolution."""


@dataclass(frozen=True)
class GroupTaxonomy:
    """The fixed country-group -> continent mapping.

    ``rows`` is an ordered tuple of (country_code, continent_code) pairs; the
    order defines the canonical group order used everywhere (reports, CSV
    headers, sampling).
    """

    rows: tuple[tuple[str, str], ...] = _COUNTRY_ROWS

    def __post_init__(self) -> None:
        codes = [c for c, _ in self.rows]
        if len(set(codes)) != len(codes):
            raise ConfigError("duplicate country codes in taxonomy")
        bad = sorted({cont for _, cont in self.rows} - set(CONTINENTS))
        if bad:
            raise ConfigError(f"unknown continent codes in taxonomy: {bad}")

    @cached_property
    def countries(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.rows)

    @cached_property
    def _continent_map(self) -> dict[str, str]:
        return dict(self.rows)

    def continent_of(self, country: str) -> str:
        try:
            return self._continent_map[country]
        except KeyError:
            raise ValueError(f"unknown country code: {country!r}") from None

    def countries_in(self, continent: str) -> tuple[str, ...]:
        if continent not in CONTINENTS:
            raise ValueError(f"unknown continent code: {continent!r}")
        return tuple(c for c, k in self.rows if k == continent)

    def groups(self, axis: str) -> tuple[str, ...]:
        """Canonical group codes for a grouping axis."""
        if axis == "country":
            return self.countries
        if axis == "continent":
            return CONTINENTS
        if axis == "gender":
            return GENDERS
        raise ValueError(f"unknown grouping axis: {axis!r}")

    def table_hash(self) -> str:
        """Stable hash of the mapping, recorded in dataset file headers."""
        text = "\n".join(f"{c}:{k}" for c, k in self.rows)
        return hashlib.sha256(text.encode("ascii")).hexdigest()[:16]


DEFAULT_TAXONOMY = GroupTaxonomy()


def continent_of(country: str) -> str:
    """Continent code for a country group, per the canonical table."""
    return DEFAULT_TAXONOMY.continent_of(country)


@dataclass(frozen=True)
class DemographicLabel:
    country: str
    continent: str
    gender: str

    def __post_init__(self) -> None:
        expected = DEFAULT_TAXONOMY.continent_of(self.country)
        if self.continent != expected:
            raise ValueError(
                f"continent {self.continent!r} inconsistent with country "
                f"{self.country!r} (expected {expected!r})"
            )
        if self.gender not in GENDERS:
            raise ValueError(f"unknown gender: {self.gender!r}")

    @classmethod
    def for_country(cls, country: str, gender: str) -> "DemographicLabel":
        return cls(country, continent_of(country), gender)


@dataclass(frozen=True)
class SamplePair:
    """One identity's two cross-domain views: raw input features, not
    embeddings."""

    identity_id: int
    selfie_features: np.ndarray
    doc_features: np.ndarray
    label: DemographicLabel


def normalize(v: np.ndarray) -> np.ndarray:
    """Project a vector onto the unit sphere. Raises on zero (or NaN) norm."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    n = float(np.linalg.norm(v))
    if not n > 0.0:
        raise ValueError("cannot normalize a zero-norm vector")
    return v / n


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of a 2-D array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {x.shape}")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if not np.all(norms > 0.0):
        raise ValueError("cannot normalize rows with zero norm")
    return x / norms


def squared_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance, computed by direct subtraction."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.dot(d, d))


def cross_squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs squared Euclidean distances between rows of two matrices.

    Uses the expansion ||a||^2 + ||b||^2 - 2<a,b>, clipped at zero. This is
    the canonical distance kernel for every batch computation in the toolkit
    (mining, FAR/FRR counting, calibration), so thresholds taken from one
    computation are exactly comparable in another.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.einsum("ij,ij->i", a, a)
    nb = np.einsum("ij,ij->i", b, b)
    d = a @ b.T
    d *= -2.0
    d += na[:, None]
    d += nb[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def savez_deterministic(path, arrays: dict) -> None:
    """Write an .npz archive with fixed zip metadata.

    np.savez embeds wall-clock timestamps in the zip entries; this writer pins
    them so identical arrays give byte-identical files. np.load reads the
    result like any other .npz.
    """
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.save(buf, np.asarray(arr))
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def assert_unit_rows(x: np.ndarray, tol: float = 1e-6, what: str = "embeddings") -> None:
    norms = np.linalg.norm(np.asarray(x, dtype=np.float64), axis=-1)
    err = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if err > tol:
        raise ValueError(f"{what} are not unit-norm (max |norm-1| = {err:.3g})")


@dataclass
class Dataset:
    """Columnar store of sample pairs.

    Arrays are aligned by pair index and made read-only at construction;
    ``pair(i)`` materializes a single :class:`SamplePair` view and
    ``group_index`` gives the index partition for a grouping axis.
    """

    identity_ids: np.ndarray   # (n,) int64, opaque
    countries: np.ndarray      # (n,) unicode country codes
    genders: np.ndarray        # (n,) unicode
    selfie_features: np.ndarray  # (n, d) float64
    doc_features: np.ndarray     # (n, d) float64
    taxonomy: GroupTaxonomy = DEFAULT_TAXONOMY

    def __post_init__(self) -> None:
        n = len(self.identity_ids)
        for name in ("countries", "genders", "selfie_features", "doc_features"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length != {n}")
        if self.selfie_features.ndim != 2 or self.selfie_features.shape != self.doc_features.shape:
            raise ValueError("feature matrices must be 2-D and equally shaped")
        known = set(self.taxonomy.countries)
        bad = sorted(set(np.unique(self.countries).tolist()) - known)
        if bad:
            raise ValueError(f"unknown country codes in dataset: {bad}")
        bad_g = sorted(set(np.unique(self.genders).tolist()) - set(GENDERS))
        if bad_g:
            raise ValueError(f"unknown genders in dataset: {bad_g}")
        for name in ("identity_ids", "countries", "genders", "selfie_features", "doc_features"):
            arr = getattr(self, name)
            if arr.flags.owndata:
                arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.identity_ids)

    @property
    def input_dim(self) -> int:
        return self.selfie_features.shape[1]

    @cached_property
    def continents(self) -> np.ndarray:
        lut = {c: self.taxonomy.continent_of(c) for c in np.unique(self.countries)}
        out = np.array([lut[c] for c in self.countries.tolist()])
        out.setflags(write=False)
        return out

    def labels(self, axis: str) -> np.ndarray:
        if axis == "country":
            return self.countries
        if axis == "continent":
            return self.continents
        if axis == "gender":
            return self.genders
        raise ValueError(f"unknown grouping axis: {axis!r}")

    def group_index(self, axis: str) -> dict[str, np.ndarray]:
        """Partition of pair indices by group, in canonical group order.

        Every axis group is present as a key; groups absent from the data map
        to empty index arrays.
        """
        tags = self.labels(axis)
        return {
            g: np.flatnonzero(tags == g)
            for g in self.taxonomy.groups(axis)
        }

    def pair(self, i: int) -> SamplePair:
        return SamplePair(
            identity_id=int(self.identity_ids[i]),
            selfie_features=self.selfie_features[i],
            doc_features=self.doc_features[i],
            label=DemographicLabel.for_country(str(self.countries[i]), str(self.genders[i])),
        )

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            identity_ids=self.identity_ids[idx],
            countries=self.countries[idx],
            genders=self.genders[idx],
            selfie_features=self.selfie_features[idx],
            doc_features=self.doc_features[idx],
            taxonomy=self.taxonomy,
        )
