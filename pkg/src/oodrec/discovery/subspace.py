"""Confounder subspace: encode pool entries, reduce, and cluster."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..numerics import kmeans, pca
from ..representation import TEXT_DIM, TextEncoderPort, encode_documents
from ..rng import child_rng
from .types import ConfounderRecord


@dataclass
class ConfounderSubspace:
    c: np.ndarray  # (J', k) cluster centroids
    j: int
    k: int

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.c.shape != (self.j, self.k):
            raise ValueError(f"centroid shape {self.c.shape} != {(self.j, self.k)}")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("centroids contain non-finite entries")

    def save(self, path) -> None:
        payload = {"J": self.j, "k": self.k, "centroids": self.c.reshape(-1).tolist()}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ConfounderSubspace":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        j, k = int(payload["J"]), int(payload["k"])
        return cls(np.array(payload["centroids"]).reshape(j, k), j, k)


def build_subspace(pool: list[ConfounderRecord], encoder: TextEncoderPort,
                   k: int, j: int, rng_seed: int) -> ConfounderSubspace:
    """Encode name+description+reasoning, PCA to k dims, k-means to J' centroids.

    J' = min(J, |pool|); an empty pool is an error (run without the
    confounder branch instead).
    """
    if not pool:
        raise ValueError("confounder pool is empty; run with deconfounding disabled")
    texts = [f"{p.name}. {p.description} {p.reasoning}" for p in pool]
    embeddings = encode_documents(encoder, texts)
    n = len(pool)
    reduced = np.zeros((n, k))
    if n >= 2:
        k_req = min(k, n, TEXT_DIM)
        res = pca(embeddings, k_req)
        reduced[:, :k_req] = res.transform(embeddings)
    j_eff = min(j, n)
    km = kmeans(reduced, j_eff, child_rng(rng_seed, "subspace"))
    return ConfounderSubspace(km.centroids, j_eff, k)
