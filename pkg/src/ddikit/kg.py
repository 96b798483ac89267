"""Knowledge-graph triples and translation-based (TransE) embedding training.

Triples come in as TSV ``head<TAB>relation<TAB>tail``. Training follows the
original TransE recipe: margin ranking loss against uniformly corrupted
triples, plain SGD, and entity vectors projected back onto the unit ball
after every update. Per-drug vectors for the model are the concatenation of
the two entity embeddings (zero vector for drugs absent from the graph).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class TripleError(ValueError):
    pass


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str


@dataclass
class EntityIndex:
    entities: dict[str, int]
    relations: dict[str, int]


@dataclass
class TransEConfig:
    dim: int = 400
    margin: float = 1.0
    norm_p: int = 1  # 1 or 2
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.01
    negatives_per_positive: int = 1
    seed: int = 0


@dataclass
class EmbeddingTable:
    entities: np.ndarray  # [num_entities, dim]
    relations: np.ndarray  # [num_relations, dim]
    index: EntityIndex

    @property
    def dim(self) -> int:
        return self.entities.shape[1]


def load_triples(path) -> tuple[list[Triple], EntityIndex]:
    """Read and deduplicate a triples TSV; index entities/relations in sorted
    order so the mapping is deterministic."""
    triples: list[Triple] = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise TripleError(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail")
            t = Triple(*parts)
            if t not in seen:
                seen.add(t)
                triples.append(t)
    if not triples:
        raise TripleError(f"{path}: no triples")
    ents = sorted({t.head for t in triples} | {t.tail for t in triples})
    rels = sorted({t.relation for t in triples})
    index = EntityIndex({e: i for i, e in enumerate(ents)},
                        {r: i for i, r in enumerate(rels)})
    return triples, index


def init_table(index: EntityIndex, dim: int, rng: np.random.Generator) -> EmbeddingTable:
    bound = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(len(index.entities), dim))
    rel = rng.uniform(-bound, bound, size=(len(index.relations), dim))
    rel /= np.maximum(np.linalg.norm(rel, axis=1, keepdims=True), 1e-12)
    return EmbeddingTable(ent, rel, index)


def transe_score(h: np.ndarray, r: np.ndarray, t: np.ndarray, p: int = 1) -> np.ndarray:
    """Translation distance ||h + r - t||_p; zero iff h + r == t."""
    h, r, t = np.asarray(h), np.asarray(r), np.asarray(t)
    if not (h.shape[-1] == r.shape[-1] == t.shape[-1]):
        raise TripleError(f"dimension mismatch: {h.shape} {r.shape} {t.shape}")
    d = h + r - t
    if p == 1:
        return np.abs(d).sum(axis=-1)
    return np.sqrt((d * d).sum(axis=-1))


def _encode(triples: list[Triple], index: EntityIndex) -> np.ndarray:
    return np.array([[index.entities[t.head], index.relations[t.relation],
                      index.entities[t.tail]] for t in triples], dtype=np.int64)


def transe_train_step(batch: np.ndarray, table: EmbeddingTable, config: TransEConfig,
                      rng: np.random.Generator) -> float:
    """One SGD step on a batch of encoded triples; returns the batch loss.

    For each positive a corrupted triple is drawn by replacing the head or
    the tail (50/50) with a uniformly random entity. After the update every
    entity row with norm > 1 is projected back to the unit sphere.
    """
    n_ent = table.entities.shape[0]
    reps = config.negatives_per_positive
    pos = np.repeat(batch, reps, axis=0)
    neg = pos.copy()
    flip_head = rng.random(len(neg)) < 0.5
    repl = rng.integers(n_ent, size=len(neg))
    neg[flip_head, 0] = repl[flip_head]
    neg[~flip_head, 2] = repl[~flip_head]

    E, R = table.entities, table.relations
    dp = E[pos[:, 0]] + R[pos[:, 1]] - E[pos[:, 2]]
    dn = E[neg[:, 0]] + R[neg[:, 1]] - E[neg[:, 2]]
    if config.norm_p == 1:
        sp = np.abs(dp).sum(axis=1)
        sn = np.abs(dn).sum(axis=1)
        gp = np.sign(dp)
        gn = np.sign(dn)
    else:
        sp = np.sqrt((dp * dp).sum(axis=1))
        sn = np.sqrt((dn * dn).sum(axis=1))
        gp = dp / np.maximum(sp[:, None], 1e-12)
        gn = dn / np.maximum(sn[:, None], 1e-12)

    viol = config.margin + sp - sn
    active = viol > 0
    loss = float(viol[active].sum())
    if active.any():
        lr = config.learning_rate
        gp = gp[active] * lr
        gn = gn[active] * lr
        pa, na = pos[active], neg[active]
        np.add.at(E, pa[:, 0], -gp)
        np.add.at(E, pa[:, 2], gp)
        np.add.at(R, pa[:, 1], -gp)
        np.add.at(E, na[:, 0], gn)
        np.add.at(E, na[:, 2], -gn)
        np.add.at(R, na[:, 1], gn)
        touched = np.unique(np.concatenate([pa[:, 0], pa[:, 2], na[:, 0], na[:, 2]]))
        norms = np.linalg.norm(E[touched], axis=1)
        over = norms > 1.0
        E[touched[over]] /= norms[over][:, None]
    return loss


def train_transe(triples: list[Triple], index: EntityIndex,
                 config: TransEConfig) -> tuple[EmbeddingTable, list[float]]:
    """Full training loop; returns the table and per-epoch total losses."""
    rng = np.random.default_rng(config.seed)
    table = init_table(index, config.dim, rng)
    encoded = _encode(triples, index)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(encoded))
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            batch = encoded[order[i:i + config.batch_size]]
            total += transe_train_step(batch, table, config, rng)
        # safety net: renormalize all rows so the post-epoch invariant holds
        norms = np.linalg.norm(table.entities, axis=1)
        over = norms > 1.0
        table.entities[over] /= norms[over][:, None]
        history.append(total)
    return table, history


@dataclass
class PairEmbedder:
    """Maps dataset drug ids to concatenated KG vectors of length 2*dim."""

    table: EmbeddingTable
    id_template: str = "Compound::{id}"
    miss_count: int = field(default=0)
    hit_count: int = field(default=0)

    def entity_vector(self, drug_id: str) -> np.ndarray:
        key = self.id_template.format(id=drug_id)
        idx = self.table.index.entities.get(key)
        if idx is None:
            self.miss_count += 1
            return np.zeros(self.table.dim)
        self.hit_count += 1
        return self.table.entities[idx]

    def pair_embedding(self, drug_a: str, drug_b: str) -> np.ndarray:
        return np.concatenate([self.entity_vector(drug_a), self.entity_vector(drug_b)])

    @property
    def miss_rate(self) -> float:
        total = self.miss_count + self.hit_count
        return self.miss_count / total if total else 0.0


# ---------------------------------------------------------------------------
# export format: binary table + sidecar text index
# ---------------------------------------------------------------------------

_MAGIC = b"DDKE"
_VERSION = 1


def save_table(table: EmbeddingTable, bin_path, index_path):
    """Binary layout: magic "DDKE", u32 version, u64 num_entities, u64
    num_relations, u64 dim, then entity rows and relation rows as
    little-endian float64. The sidecar lists entity names then relation
    names, one per line, in row order."""
    ent = np.ascontiguousarray(table.entities, dtype="<f8")
    rel = np.ascontiguousarray(table.relations, dtype="<f8")
    with open(bin_path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQQ", _VERSION, ent.shape[0], rel.shape[0], ent.shape[1]))
        fh.write(ent.tobytes())
        fh.write(rel.tobytes())
    ents = sorted(table.index.entities, key=table.index.entities.get)
    rels = sorted(table.index.relations, key=table.index.relations.get)
    with open(index_path, "w", encoding="utf-8") as fh:
        fh.write(f"entities\t{len(ents)}\n")
        for e in ents:
            fh.write(e + "\n")
        fh.write(f"relations\t{len(rels)}\n")
        for r in rels:
            fh.write(r + "\n")


def load_table(bin_path, index_path) -> EmbeddingTable:
    with open(bin_path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise TripleError(f"{bin_path}: not an embedding table file")
        version, n_ent, n_rel, dim = struct.unpack("<IQQQ", fh.read(28))
        if version != _VERSION:
            raise TripleError(f"{bin_path}: unsupported version {version}")
        ent = np.frombuffer(fh.read(n_ent * dim * 8), dtype="<f8").reshape(n_ent, dim)
        rel = np.frombuffer(fh.read(n_rel * dim * 8), dtype="<f8").reshape(n_rel, dim)
    with open(index_path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    head, count = lines[0].split("\t")
    n = int(count)
    ents = lines[1:1 + n]
    rels = lines[2 + n:]
    index = EntityIndex({e: i for i, e in enumerate(ents)},
                        {r: i for i, r in enumerate(rels)})
    return EmbeddingTable(ent.copy(), rel.copy(), index)
