"""Synthetic fixture generation: random molecules, DDI event tables and a
small knowledge graph, so the full pipeline and CI need no licensed data."""

from __future__ import annotations

import os

import numpy as np

from .smiles import Atom, Bond, MolecularGraph, write_smiles

_ELEMENTS = ["C", "C", "C", "C", "N", "O", "O", "S", "F", "Cl", "Br"]
_ORDERS = ["single"] * 8 + ["double"] * 2 + ["triple"]


def random_molecule(rng: np.random.Generator, min_atoms: int = 3,
                    max_atoms: int = 14) -> MolecularGraph:
    """Random connected molecular graph: a tree plus an occasional ring edge,
    an occasional fused aromatic six-ring, and rare charged bracket atoms."""
    n = int(rng.integers(min_atoms, max_atoms + 1))
    atoms = []
    for _ in range(n):
        el = _ELEMENTS[rng.integers(len(_ELEMENTS))]
        if rng.random() < 0.05 and el in ("N", "O"):
            atoms.append(Atom(el, charge=int(rng.choice([-1, 1])), h_count=0, bracket=True))
        else:
            atoms.append(Atom(el))
    bonds = []
    for i in range(1, n):
        parent = int(rng.integers(i))
        order = _ORDERS[rng.integers(len(_ORDERS))]
        bonds.append(Bond(parent, i, order))
    # one extra ring edge between non-adjacent atoms, when possible
    if n >= 4 and rng.random() < 0.6:
        present = {(b.a, b.b) for b in bonds} | {(b.b, b.a) for b in bonds}
        for _ in range(8):
            a, b = rng.choice(n, size=2, replace=False)
            a, b = int(a), int(b)
            if (a, b) not in present:
                bonds.append(Bond(a, b, "single"))
                break
    g = MolecularGraph(atoms=atoms, bonds=bonds, components=[0] * n)
    if rng.random() < 0.35:
        base = len(g.atoms)
        for _ in range(6):
            g.atoms.append(Atom("C", aromatic=True))
            g.components.append(0)
        for k in range(6):
            g.bonds.append(Bond(base + k, base + (k + 1) % 6, "aromatic"))
        g.bonds.append(Bond(int(rng.integers(base)), base, "single"))
    return g


def random_smiles_corpus(n: int, rng: np.random.Generator, **kwargs) -> list[str]:
    return [write_smiles(random_molecule(rng, **kwargs), 0) for _ in range(n)]


def make_dataset_fixture(out_dir, n_drugs: int, n_events: int, n_classes: int,
                         seed: int = 0) -> dict[str, str]:
    """Write drugs.tsv / events.tsv / labels.txt / corpus.txt / kg.tsv under
    out_dir; event labels are a deterministic function of the pair so the
    task is learnable. Returns the path map."""
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    drug_ids = [f"D{i:04d}" for i in range(n_drugs)]
    smiles = random_smiles_corpus(n_drugs, rng)
    drugs_path = os.path.join(out_dir, "drugs.tsv")
    with open(drugs_path, "w", encoding="utf-8") as fh:
        for d, s in zip(drug_ids, smiles):
            fh.write(f"{d}\t{s}\n")

    labels_path = os.path.join(out_dir, "labels.txt")
    with open(labels_path, "w", encoding="utf-8") as fh:
        for c in range(n_classes):
            fh.write(f"event_class_{c:02d}\n")

    # latent per-drug class drives the label so the mapping is consistent
    drug_group = {d: int(rng.integers(n_classes)) for d in drug_ids}
    pairs = set()
    events_path = os.path.join(out_dir, "events.tsv")
    with open(events_path, "w", encoding="utf-8") as fh:
        written = 0
        while written < n_events:
            a, b = rng.choice(n_drugs, size=2, replace=False)
            a, b = drug_ids[int(a)], drug_ids[int(b)]
            key = (a, b) if a <= b else (b, a)
            if key in pairs:
                continue
            pairs.add(key)
            label = (drug_group[a] + drug_group[b]) % n_classes
            fh.write(f"{a}\t{b}\tevent_class_{label:02d}\n")
            written += 1

    corpus_path = os.path.join(out_dir, "corpus.txt")
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for s in smiles:
            fh.write(s + "\n")
        for s in random_smiles_corpus(max(n_drugs // 2, 2), rng):
            fh.write(s + "\n")

    kg_path = os.path.join(out_dir, "kg.tsv")
    genes = [f"Gene::G{i}" for i in range(max(n_drugs // 2, 4))]
    relations = ["targets", "binds", "upregulates"]
    triples = set()
    with open(kg_path, "w", encoding="utf-8") as fh:
        for d in drug_ids:
            for _ in range(3):
                gene = genes[int(rng.integers(len(genes)))]
                rel = relations[int(rng.integers(len(relations)))]
                trip = (f"Compound::{d}", rel, gene)
                if trip not in triples:
                    triples.add(trip)
                    fh.write("\t".join(trip) + "\n")

    return {"drugs": drugs_path, "events": events_path, "labels": labels_path,
            "corpus": corpus_path, "kg": kg_path}
