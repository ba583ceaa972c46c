"""Selection-batch assembly, semi-hard cross-domain triplet mining, and
minibatch scheduling.

A selection batch of N pairs is flattened to 2N images: index i in [0, N) is
the selfie of batch slot i and index N + i its document. Each slot yields up
to two triplets, one per anchor domain; the positive is the anchor's other
view and the negative is drawn uniformly from the slot's semi-hard candidate
set (same domain as the positive, different identity, closer to the anchor
than D_ap^2 + margin). Slots whose candidate set is empty for an orientation
yield no triplet for it, so a batch produces at most 2N triplets.

Negative draws consume randomness in a fixed order (all selfie-anchor slots
in batch order, then all doc-anchor slots), so mining is reproducible no
matter how the distance computations are parallelized.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Dataset, cross_squared_distances
from .model import EmbeddingNetwork
from .sampling import SamplerSpec, choose_homogeneous_group, probabilities


@dataclass(frozen=True)
class Triplet:
    """Indices into the batch's flattened image list (see module docstring)."""

    anchor_index: int
    positive_index: int
    negative_index: int
    anchor_domain: str  # "selfie" | "doc"


@dataclass(frozen=True)
class MiningBatch:
    pair_indices: np.ndarray    # (N,) indices into the source dataset
    identity_ids: np.ndarray    # (N,)
    groups: np.ndarray          # (N,) group tag on the sampler's axis
    selfie_features: np.ndarray  # (N, input_dim)
    doc_features: np.ndarray
    selfie_emb: np.ndarray | None = None  # (N, embed_dim), unit rows
    doc_emb: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.pair_indices)

    def flat_features(self) -> np.ndarray:
        """(2N, input_dim) image matrix in the flattened index convention."""
        return np.vstack([self.selfie_features, self.doc_features])

    def embed_with(self, net: EmbeddingNetwork) -> "MiningBatch":
        """Attach embeddings from a frozen network snapshot."""
        return replace(
            self,
            selfie_emb=net.forward(self.selfie_features),
            doc_emb=net.forward(self.doc_features),
        )


def assemble_batch(dataset: Dataset, sampler: SamplerSpec, n: int,
                   rng: np.random.Generator) -> MiningBatch:
    """Draw N pairs i.i.d.: group by the sampler's distribution, then uniform
    within the group, with replacement."""
    if n < 2:
        raise ValueError("batch size must be >= 2")
    probs = probabilities(sampler, dataset)
    index = dataset.group_index(sampler.axis)
    for g, p in probs.items():
        if p > 0 and len(index[g]) == 0:
            raise ValueError(f"group {g!r} has positive weight but no samples")

    groups = list(probs)
    if sampler.variant == "homogeneous":
        g = choose_homogeneous_group(sampler.weights, rng)
        if len(index[g]) == 0:
            raise ValueError(f"group {g!r} has positive weight but no samples")
        drawn = np.full(n, groups.index(g))
    else:
        drawn = rng.choice(len(groups), size=n, p=np.array([probs[g] for g in groups]))
    u = rng.random(n)
    pair_idx = np.empty(n, dtype=np.int64)
    for k, g in enumerate(groups):
        rows = drawn == k
        if rows.any():
            members = index[g]
            pair_idx[rows] = members[(u[rows] * len(members)).astype(np.int64)]

    tags = dataset.labels(sampler.axis)
    return MiningBatch(
        pair_indices=pair_idx,
        identity_ids=dataset.identity_ids[pair_idx],
        groups=tags[pair_idx],
        selfie_features=dataset.selfie_features[pair_idx],
        doc_features=dataset.doc_features[pair_idx],
    )


def _pick_per_row(mask: np.ndarray, rng: np.random.Generator):
    """For each row with any True, pick one True column uniformly.

    One vectorized uniform draw per nonempty row, consumed in row order.
    """
    counts = mask.sum(axis=1)
    rows = np.flatnonzero(counts)
    if rows.size == 0:
        return rows, rows
    u = rng.random(rows.size)
    ks = (u * counts[rows]).astype(np.int64)  # k-th True element, 0-based
    _, all_cols = np.nonzero(mask)            # row-major, so ascending per row
    offsets = np.concatenate([[0], np.cumsum(counts)])
    cols = all_cols[offsets[rows] + ks]
    return rows, cols


def mine_semi_hard(batch: MiningBatch, margin: float,
                   rng: np.random.Generator) -> list[Triplet]:
    """Semi-hard triplets for both anchor orientations of every batch slot."""
    if batch.selfie_emb is None or batch.doc_emb is None:
        raise ValueError("batch has no embeddings; call embed_with first")
    n = batch.n
    mask_selfie, mask_doc = _candidate_masks(batch, margin)

    triplets: list[Triplet] = []
    # Anchor = selfie_i, positive = doc_i, negatives among docs.
    rows, cols = _pick_per_row(mask_selfie, rng)
    triplets.extend(
        Triplet(int(i), n + int(i), n + int(j), "selfie") for i, j in zip(rows, cols)
    )
    # Anchor = doc_i, positive = selfie_i, negatives among selfies.
    rows, cols = _pick_per_row(mask_doc, rng)
    triplets.extend(
        Triplet(n + int(i), int(i), int(j), "doc") for i, j in zip(rows, cols)
    )
    return triplets


def _candidate_masks(batch: MiningBatch, margin: float):
    """Semi-hard candidate masks; row = anchor slot, column = negative slot.

    d[i, j] is the selfie_i / doc_j squared distance, so the doc-anchor mask
    is assembled from d with the margin limit applied along columns (the
    same-identity mask is symmetric).
    """
    d = cross_squared_distances(batch.selfie_emb, batch.doc_emb)
    genuine = np.diagonal(d).copy()
    not_same = batch.identity_ids[:, None] != batch.identity_ids[None, :]
    mask_selfie = (d < (genuine[:, None] + margin)) & not_same
    mask_doc = np.ascontiguousarray(((d < (genuine[None, :] + margin)) & not_same).T)
    return mask_selfie, mask_doc


def semi_hard_candidates(batch: MiningBatch, margin: float) -> dict[tuple[int, str], np.ndarray]:
    """Candidate negative slots per (anchor slot, anchor domain).

    Exposed for inspection and testing; mine_semi_hard draws uniformly from
    exactly these sets.
    """
    if batch.selfie_emb is None or batch.doc_emb is None:
        raise ValueError("batch has no embeddings; call embed_with first")
    mask_selfie, mask_doc = _candidate_masks(batch, margin)
    out: dict[tuple[int, str], np.ndarray] = {}
    for i in range(batch.n):
        out[(i, "selfie")] = np.flatnonzero(mask_selfie[i])
        out[(i, "doc")] = np.flatnonzero(mask_doc[i])
    return out


def schedule_minibatches(triplets: list[Triplet], minibatch_size: int,
                         rng: np.random.Generator) -> list[list[Triplet]]:
    """Shuffle once and chunk; every triplet appears exactly once and the last
    chunk may be short."""
    if minibatch_size < 1:
        raise ValueError("minibatch_size must be >= 1")
    order = rng.permutation(len(triplets))
    shuffled = [triplets[i] for i in order]
    return [
        shuffled[i:i + minibatch_size]
        for i in range(0, len(shuffled), minibatch_size)
    ]
