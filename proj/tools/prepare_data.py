#!/usr/bin/env python3
"""Builds the bundled UMLS and Kinship dataset directories.

The triples come from the PyKEEN wheel, which ships both benchmarks as
train/valid/test TSV files. They are re-split into the fact/train/valid/test
layout with the split sizes of the usual fact/train protocol, and a candidate
rule file is mined on facts+train with plain path-rule confidence:

    conf(H(x,z) <- B1 ... Bn) = #(x,z) with body and head / #(x,z) with body

Usage:
    python3 tools/prepare_data.py --out data            # downloads the wheel
    python3 tools/prepare_data.py --wheel pykeen.whl --out data
"""

import argparse
import itertools
import pathlib
import random
import subprocess
import tempfile
import zipfile

import numpy as np

PYKEEN_VERSION = "1.11.1"

# name -> (pykeen dir, facts, train, valid, test, number of rules to keep)
DATASETS = {
    "umls": ("umls", 4006, 1321, 569, 633, 1055),
    "kinship": ("kinships", 6375, 2112, 1099, 1100, 71),
}


def fetch_wheel(tmp):
    subprocess.run(
        ["pip", "download", f"pykeen=={PYKEEN_VERSION}", "--no-deps", "-q", "-d", tmp],
        check=True,
    )
    return next(pathlib.Path(tmp).glob("pykeen-*.whl"))


def read_split(zf, name, split):
    text = zf.read(f"pykeen/datasets/{name}/{split}.txt").decode("utf-8")
    return [tuple(line.split("\t")) for line in text.splitlines() if line.strip()]


def resplit(zf, name, n_facts, n_train, n_valid, n_test, seed):
    rng = random.Random(seed)
    train = read_split(zf, name, "train")
    valid = read_split(zf, name, "valid")
    test = read_split(zf, name, "test")
    for part in (train, valid, test):
        rng.shuffle(part)
    assert len(train) + len(valid) + len(test) == n_facts + n_train + n_valid + n_test

    # Held-out splits are drawn from the original held-out pools first and
    # topped up from the training pool only when the pool is too small.
    pool = list(train)

    def take(src, n):
        out = src[:n]
        rest = src[n:]
        while len(out) < n:
            out.append(pool.pop())
        return out, rest

    test_out, test_rest = take(test, n_test)
    valid_out, valid_rest = take(valid, n_valid)
    pool.extend(test_rest)
    pool.extend(valid_rest)
    rng.shuffle(pool)
    train_out = pool[:n_train]
    facts_out = pool[n_train:]
    assert len(facts_out) == n_facts
    return facts_out, train_out, valid_out, test_out


def mine_rules(observed, n_keep, min_support):
    ents = sorted({h for h, _, _ in observed} | {t for _, _, t in observed})
    rels = sorted({r for _, r, _ in observed})
    eidx = {e: i for i, e in enumerate(ents)}
    n = len(ents)
    adj = {r: np.zeros((n, n), dtype=np.int64) for r in rels}
    for h, r, t in observed:
        adj[r][eidx[h], eidx[t]] = 1

    # Body atoms in both orientations: (relation, inverted).
    atoms = [(r, inv) for r in rels for inv in (False, True)]

    def mat(atom):
        r, inv = atom
        return adj[r].T if inv else adj[r]

    def fmt(atom, a, b):
        r, inv = atom
        return f"{r}({b},{a})" if inv else f"{r}({a},{b})"

    candidates = []
    heads = np.stack([adj[r] for r in rels])

    def score(body_mat, body_txt, exclude):
        body = body_mat > 0
        n_body = int(body.sum())
        if n_body == 0:
            return
        support = (heads * body).reshape(len(rels), -1).sum(axis=1)
        for hi, r in enumerate(rels):
            s = int(support[hi])
            if s < min_support or (r, False) == exclude:
                continue
            candidates.append((s / n_body, s, r, f"{r}(x,z) <- {body_txt}"))

    for a in atoms:
        score(mat(a), fmt(a, "x", "z"), exclude=a)
    for a, b in itertools.product(atoms, atoms):
        score(mat(a) @ mat(b), f"{fmt(a, 'x', 'y')} & {fmt(b, 'y', 'z')}", exclude=None)

    # Round-robin over target relations, best candidates first within each.
    per_head = {}
    for c in sorted(candidates, key=lambda c: (-c[0], -c[1], c[3])):
        per_head.setdefault(c[2], []).append(c)
    kept = []
    for rank in itertools.count():
        layer = [lst[rank] for lst in per_head.values() if rank < len(lst)]
        if not layer:
            break
        kept.extend(sorted(layer, key=lambda c: (-c[0], -c[1], c[3])))
    kept = kept[:n_keep]
    kept.sort(key=lambda c: (-c[0], -c[1], c[3]))
    return [(c[0], c[1], c[3]) for c in kept]


def write_triples(path, triples):
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in triples:
            f.write(f"{h}\t{r}\t{t}\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wheel", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data"))
    ap.add_argument("--seed", type=int, default=20240611)
    ap.add_argument("--min-support", type=int, default=3)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        with zipfile.ZipFile(wheel) as zf:
            for name, (src, nf, ntr, nv, nte, nrules) in DATASETS.items():
                facts, train, valid, test = resplit(zf, src, nf, ntr, nv, nte, args.seed)
                out = args.out / name
                out.mkdir(parents=True, exist_ok=True)
                write_triples(out / "facts.txt", facts)
                write_triples(out / "train.txt", train)
                write_triples(out / "valid.txt", valid)
                write_triples(out / "test.txt", test)
                rules = mine_rules(facts + train, nrules, args.min_support)
                with open(out / "rules.txt", "w", encoding="utf-8") as f:
                    f.write(f"# {name}: path rules mined on facts+train, min support {args.min_support}\n")
                    for conf, _, text in rules:
                        f.write(f"{conf:.6f}\t{text}\n")
                print(f"{name}: facts={len(facts)} train={len(train)} valid={len(valid)} "
                      f"test={len(test)} rules={len(rules)} "
                      f"conf>0.99={sum(c > 0.99 for c, _, _ in rules)}")


if __name__ == "__main__":
    main()
