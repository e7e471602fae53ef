"""Regenerate the fingerprint oracle fixture and the synthetic SMILES pool.

Requires RDKit. Run from crates/core:

    python3 data/oracle/make_fixtures.py
"""
import itertools
import subprocess

from rdkit import Chem, RDLogger
from rdkit.Chem import rdFingerprintGenerator

RDLogger.DisableLog("rdApp.*")
GEN = rdFingerprintGenerator.GetMorganGenerator(radius=2, fpSize=2048)
SUBSTITUENTS = ["F", "Cl", "C", "OC", "N", "C(F)(F)F", "O"]


def canonical(smi, isomeric):
    mol = Chem.MolFromSmiles(smi)
    return None if mol is None else Chem.MolToSmiles(mol, isomericSmiles=isomeric)


def unfolded(smi):
    return set(GEN.GetSparseCountFingerprint(Chem.MolFromSmiles(smi)).GetNonzeroElements())


def parses(smiles):
    out = subprocess.run(
        ["cargo", "run", "-q", "--example", "ecfp_ids"],
        input="\n".join(smiles), capture_output=True, text=True, check=True,
    ).stdout
    return {l.split("\t")[0]: "ERROR" not in l for l in out.splitlines()}


def analogs(smi):
    mol = Chem.MolFromSmiles(smi)
    for atom in mol.GetAtoms():
        if not (atom.GetIsAromatic() and atom.GetTotalNumHs() == 1):
            continue
        for sub in SUBSTITUENTS:
            rw = Chem.RWMol(mol)
            frag = Chem.MolFromSmiles(sub)
            offset = rw.GetNumAtoms()
            combined = Chem.RWMol(Chem.CombineMols(rw, frag))
            combined.AddBond(atom.GetIdx(), offset, Chem.BondType.SINGLE)
            try:
                Chem.SanitizeMol(combined)
            except Exception:
                continue
            yield Chem.MolToSmiles(combined, isomericSmiles=False)


def main():
    drugs = [l.strip() for l in open("data/oracle/drugs.txt") if l.strip()]

    fixture = []
    for s in drugs:
        c = canonical(s, isomeric=True)
        if c and c not in fixture:
            fixture.append(c)
    fixture = fixture[:40]
    ok = parses(fixture)
    fixture = [s for s in fixture if ok[s]]
    ids = {s: unfolded(s) for s in fixture}
    with open("data/oracle/ecfp_rdkit_counts.tsv", "w") as f:
        f.write("smiles\tdistinct_ids\n")
        for s in fixture:
            f.write(f"{s}\t{len(ids[s])}\n")
    with open("data/oracle/ecfp_rdkit_tanimoto.tsv", "w") as f:
        f.write("i\tj\ttanimoto\n")
        for (i, a), (j, b) in itertools.combinations(enumerate(fixture), 2):
            t = len(ids[a] & ids[b]) / len(ids[a] | ids[b])
            f.write(f"{i}\t{j}\t{t:.15f}\n")

    pool = []
    for s in drugs:
        c = canonical(s, isomeric=False)
        if c and c not in pool:
            pool.append(c)
    for s in list(pool):
        for a in analogs(s):
            if a not in pool:
                pool.append(a)
    ok = parses(pool)
    base = [s for s in pool[: len(drugs)] if ok.get(s)]
    extra = [s for s in pool[len(drugs):] if ok.get(s)]
    # interleave so every parent drug contributes a few analogs
    chosen = list(base)
    per_parent = {}
    for s in extra:
        parent = next(p for p in base if Chem.MolFromSmiles(s).HasSubstructMatch(Chem.MolFromSmiles(p)))
        per_parent.setdefault(parent, []).append(s)
    for round_ in itertools.count():
        added = False
        for p in base:
            group = per_parent.get(p, [])
            if round_ < len(group) and len(chosen) < 256:
                chosen.append(group[round_])
                added = True
        if not added or len(chosen) >= 256:
            break
    assert len(chosen) == 256, len(chosen)
    with open("data/smiles_pool.txt", "w") as f:
        f.write("\n".join(chosen) + "\n")


if __name__ == "__main__":
    main()
