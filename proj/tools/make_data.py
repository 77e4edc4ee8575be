#!/usr/bin/env python3
"""Regenerate data/toy and data/cats.

The toy corpus is synthetic: English sentences from a small lexicon, a correct
German "post-edit", and an MT output with substituted, dropped and inserted
words. Tags, gold alignments and source-gap links follow from the edits.
"""

import json
import random
import sys
from pathlib import Path

LEXICON = {
    "the": "die", "cat": "katze", "dog": "hund", "sees": "sieht", "a": "eine",
    "small": "kleine", "big": "grosse", "house": "haus", "red": "rote",
    "green": "gruene", "bird": "vogel", "eats": "frisst", "fish": "fisch",
    "old": "alte", "man": "mann", "reads": "liest", "book": "buch",
    "good": "gute", "new": "neue", "car": "auto", "drives": "faehrt",
    "quickly": "schnell", "today": "heute", "we": "wir", "like": "moegen",
}
WRONG = ["schwarz", "tisch", "laeuft", "baum", "fenster", "blau", "klein"]
EXTRA = ["ja", "doch", "mal", "eben"]

SPLITS = [("train", 14), ("dev", 3), ("test", 3)]


def fmt_pairs(pairs, prefix=""):
    return " ".join(f"{a}-{prefix}{b}" for a, b in sorted(pairs))


def make_sentence(rng):
    words = list(LEXICON)
    src = [rng.choice(words) for _ in range(rng.randint(4, 8))]
    pe = [LEXICON[w] for w in src]
    mt, src_tags, mt_word_tags, links, gap_links = [], [], [], [], []
    bad_gaps = set()
    for i, w in enumerate(src):
        r = rng.random()
        if r < 0.12:
            # dropped: the gap where it belongs is BAD
            src_tags.append("BAD")
            gap_links.append((i, len(mt)))
            bad_gaps.add(len(mt))
        elif r < 0.26:
            links.append((i, len(mt)))
            mt.append(rng.choice(WRONG))
            src_tags.append("BAD")
            mt_word_tags.append("BAD")
        else:
            links.append((i, len(mt)))
            mt.append(LEXICON[w])
            src_tags.append("OK")
            mt_word_tags.append("OK")
        if rng.random() < 0.08:
            mt.append(rng.choice(EXTRA))
            mt_word_tags.append("BAD")
    mt_tags = []
    for k in range(len(mt) + 1):
        mt_tags.append("BAD" if k in bad_gaps else "OK")
        if k < len(mt):
            mt_tags.append(mt_word_tags[k])
    src_pe = [(i, i) for i in range(len(src))]
    return {
        "src": " ".join(src), "mt": " ".join(mt), "pe": " ".join(pe),
        "src_tags": " ".join(src_tags), "mt_tags": " ".join(mt_tags),
        "src-pe.align": fmt_pairs(src_pe), "align": fmt_pairs(links),
        "src-gap": fmt_pairs(gap_links, "g"),
    }


def write_toy(root, seed=7):
    rng = random.Random(seed)
    root.mkdir(parents=True, exist_ok=True)
    for split, count in SPLITS:
        rows = [make_sentence(rng) for _ in range(count)]
        for ext in rows[0]:
            (root / f"{split}.{ext}").write_text("".join(r[ext] + "\n" for r in rows))
    config = ["# Toy corpus, native scorers everywhere.", "seed = 7", "threads = 1", 'output = "out"', ""]
    for split, _ in SPLITS:
        config += [f"[{split}]", f'source = "{split}.src"', f'mt = "{split}.mt"', f'pe = "{split}.pe"',
                   f'source_tags = "{split}.src_tags"', f'mt_tags = "{split}.mt_tags"',
                   f'source_pe_alignment = "{split}.src-pe.align"']
        if split == "test":
            config += ['gold_alignment = "test.align"', 'gold_source_gap = "test.src-gap"']
        config.append("")
    config += ["[align]", 'scorer = "native"', "threshold = 0.4", "iterations = 10", "",
               "[tagger]", 'scorer = "native"', 'threshold = "optimize"', "epochs = 50", "learning_rate = 0.1", "",
               "[gaps]", 'scorer = "native"', "threshold = 0.4", "iterations = 10", "drop_rate = 0.15", ""]
    (root / "config.toml").write_text("\n".join(config))


def point(size, hit):
    """Span distribution with all mass on answer position `hit` (None = NULL)."""
    v = [0.0] * (size + 1)
    v[0 if hit is None else hit + 1] = 1.0
    return v


def write_cats(root):
    root.mkdir(parents=True, exist_ok=True)
    src = "Do you have white cats and dogs ?".split()
    mt = "你 有 黑 猫 吗 ?".split()
    links = [(1, 0), (2, 1), (3, 2), (4, 3), (7, 5)]
    gap_links = [(5, 4), (6, 4)]
    src_tags = "OK OK OK BAD OK BAD BAD OK".split()
    mt_word_tags = "OK OK BAD OK BAD OK".split()
    mt_tags = "OK OK OK OK OK BAD OK OK BAD BAD OK OK OK".split()
    sid = "0"

    def rec(direction, index, dist):
        return json.dumps({"id": sid, "direction": direction, "index": index, "p_start": dist, "p_end": dist})

    align = []
    for i in range(len(src)):
        hit = next((t for s, t in links if s == i), None)
        align.append(rec("src2mt", i, point(len(mt), hit)))
    for j in range(len(mt)):
        hit = next((s for s, t in links if t == j), None)
        align.append(rec("mt2src", j, point(len(src), hit)))
    gaps = []
    for i in range(len(src)):
        hit = next((g for s, g in gap_links if s == i), None)
        gaps.append(rec("src2gap", i, point(len(mt) + 1, hit)))
    prob = {"OK": 0.1, "BAD": 0.9}
    tags = json.dumps({"id": sid, "source_probs": [prob[t] for t in src_tags],
                       "mt_word_probs": [prob[t] for t in mt_word_tags]})

    (root / "test.src").write_text(" ".join(src) + "\n")
    (root / "test.mt").write_text(" ".join(mt) + "\n")
    (root / "test.src_tags").write_text(" ".join(src_tags) + "\n")
    (root / "test.mt_tags").write_text(" ".join(mt_tags) + "\n")
    (root / "test.align").write_text(fmt_pairs(links) + "\n")
    (root / "test.src-gap").write_text(fmt_pairs(gap_links, "g") + "\n")
    (root / "align.jsonl").write_text("\n".join(align) + "\n")
    (root / "gaps.jsonl").write_text("\n".join(gaps) + "\n")
    (root / "tags.jsonl").write_text(tags + "\n")
    (root / "meta.json").write_text(json.dumps({"threshold": 0.5, "align_threshold": 0.4, "gap_threshold": 0.4}) + "\n")
    (root / "config.toml").write_text("\n".join([
        "# White-cats example with precomputed scorer outputs.",
        'output = "out"', "",
        "[test]", 'source = "test.src"', 'mt = "test.mt"', 'source_tags = "test.src_tags"',
        'mt_tags = "test.mt_tags"', 'gold_alignment = "test.align"', 'gold_source_gap = "test.src-gap"', "",
        "[align]", 'scorer = "adapter:align.jsonl"', "", "[tagger]", 'scorer = "adapter:tags.jsonl"',
        "threshold = 0.5", "", "[gaps]", 'scorer = "adapter:gaps.jsonl"', ""]))


if __name__ == "__main__":
    data = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data"
    write_toy(data / "toy")
    write_cats(data / "cats")
