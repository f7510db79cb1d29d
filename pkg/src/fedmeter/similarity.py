"""Pairwise client similarity and update substitution for dropped clients.

The server scores every pair of clients that uploaded in the same round by
the normalized cosine of their updates, keeps a running mean of those scores
per pair, and fills in a missing client's update with the update of its most
similar available peer.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

NORM_EPS = 1e-12

UPLOADED = "uploaded"
SUBSTITUTED = "substituted"
EXCLUDED = "excluded"


def cosine_score(d_i: np.ndarray, d_j: np.ndarray) -> float:
    """(cos(d_i, d_j) + 1) / 2, or 0.5 when either vector is ~zero."""
    if d_i.shape != d_j.shape:
        raise ValueError(f"update vectors differ in shape: {d_i.shape} vs {d_j.shape}")
    ni = float(np.linalg.norm(d_i))
    nj = float(np.linalg.norm(d_j))
    if ni < NORM_EPS or nj < NORM_EPS:
        return 0.5
    cos = float(d_i @ d_j) / (ni * nj)
    return 0.5 * (min(1.0, max(-1.0, cos)) + 1.0)


class SimilarityMatrix:
    """Running-average similarity ``S`` and co-availability counts per pair."""

    def __init__(self, num_clients: int):
        self.num_clients = num_clients
        self.scores = np.zeros((num_clients, num_clients))
        self.counts = np.zeros((num_clients, num_clients), dtype=np.int64)

    def update_average(self, deltas: dict[int, np.ndarray]) -> None:
        """Fold this round's scores into ``S`` for every pair of uploaders.

        ``deltas`` must hold exactly the clients that uploaded this round;
        pairs involving anyone else are left untouched.
        """
        ids = sorted(deltas)
        for a, i in enumerate(ids):
            for j in ids[a + 1:]:
                s = cosine_score(deltas[i], deltas[j])
                n = self.counts[i, j]
                val = (n / (n + 1)) * self.scores[i, j] + s / (n + 1)
                self.scores[i, j] = self.scores[j, i] = val
                self.counts[i, j] = self.counts[j, i] = n + 1

    def most_similar(self, client: int, candidates) -> int | None:
        """Best available partner with shared history; ties go to the lowest id."""
        best, best_score = None, -1.0
        for j in sorted(candidates):
            if j == client or self.counts[client, j] < 1:
                continue
            if self.scores[client, j] > best_score:
                best, best_score = j, self.scores[client, j]
        return best

    def substitute(self, unavailable, deltas: dict[int, np.ndarray]):
        """Map every client to ``(delta or None, provenance)``.

        Uploaders keep their own update.  A missing client borrows the update
        of its most similar uploader; with no shared history it is excluded
        from this round's aggregation (delta ``None``).
        """
        out = {i: (d, UPLOADED) for i, d in deltas.items()}
        for i in sorted(unavailable):
            j = self.most_similar(i, deltas)
            out[i] = (None, EXCLUDED) if j is None else (deltas[j], SUBSTITUTED)
        return out

    def dump_csv(self, path, round_index: int) -> None:
        """Append the upper triangle of ``S`` for one round."""
        path = Path(path)
        new = not path.exists()
        with path.open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(["round", "client_i", "client_j", "score", "count"])
            for i in range(self.num_clients):
                for j in range(i + 1, self.num_clients):
                    w.writerow([round_index, i, j, repr(float(self.scores[i, j])), int(self.counts[i, j])])
