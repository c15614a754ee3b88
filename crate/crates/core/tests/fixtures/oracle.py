"""Independent reference computation for the fixture corpus.

Re-derives the numbers the golden report must contain, without touching the
Rust code: its own tokenizer and wildcard matcher, scipy for the tests.
Writes oracle_expected.json next to this file.

    python3 tests/fixtures/oracle.py
"""

import json
import math
import re
from pathlib import Path

from scipy import stats

HERE = Path(__file__).parent
CORPUS = HERE / "corpus"
LEXICON = HERE.parent.parent / "data" / "demo_lexicon.dic"

SCHEMA_PAIRS = [
    ("Make Eye Contact", "Avert Gaze"),
    ("Smile Broadly", "Coy Smile"),
    ("Intense Sadness", "Subtle Sadness"),
    ("Strong Anger", "Mild Anger"),
    ("Extreme Surprise", "Soft Surprise"),
    ("Gesture Widely", "Gesture Narrowly"),
    ("Gesture Fastly", "Gesture Slowly"),
    ("Lean Forward", "Lean Backward"),
    ("Loud Volume", "Small Volume"),
    ("Fast Pace", "Slow Pace"),
]


def load_lexicon():
    lines = [l for l in LEXICON.read_text().splitlines() if l.strip() and not l.startswith("#")]
    first = lines.index("%")
    second = lines.index("%", first + 1)
    cats = [l.split("\t")[0] for l in lines[first + 1 : second]]
    patterns = []
    for l in lines[second + 1 :]:
        pat, ids = l.split("\t")
        patterns.append((pat, ids.split(",")))
    return cats, patterns


def tokens(text):
    text = text.replace("’", "'")
    out = []
    for raw in re.findall(r"[A-Za-z']+", text):
        t = raw.strip("'").lower()
        if t:
            out.append(t)
    return out


def sentences(text):
    if not text.strip():
        return 0
    return max(1, len(re.findall(r"[.?!]+", text)))


def categories_of(tok, patterns):
    hit = set()
    for pat, ids in patterns:
        if pat.endswith("*"):
            ok = tok.startswith(pat[:-1])
        else:
            ok = tok == pat
        if ok:
            hit.update(ids)
    return hit


def score(text, cats, patterns):
    toks = tokens(text)
    counts = {c: 0 for c in cats}
    for t in toks:
        for c in categories_of(t, patterns):
            counts[c] += 1
    return {
        "word_count": len(toks),
        "sentence_count": sentences(text),
        "pct": {c: 100.0 * counts[c] / len(toks) for c in cats},
    }


def welch(a, b):
    if len(set(a)) == 1 and len(set(b)) == 1:
        return None
    r = stats.ttest_ind(a, b, equal_var=False)
    na, nb = len(a), len(b)
    va = sum((x - sum(a) / na) ** 2 for x in a) / (na - 1)
    vb = sum((x - sum(b) / nb) ** 2 for x in b) / (nb - 1)
    pooled = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    d = (sum(a) / na - sum(b) / nb) / math.sqrt(pooled)
    return {"t": float(r.statistic), "p": float(r.pvalue), "d": d}


def main():
    cats, patterns = load_lexicon()
    trials = {}
    for f in sorted((CORPUS / "trials").glob("*.jsonl")):
        recs = [json.loads(l) for l in f.read_text().splitlines() if l.strip()]
        scen, pers, _ = f.stem.split("-")
        trials.setdefault(scen, {})[pers] = [r for r in recs if r["speaker"] == "personality"]

    out = {}
    for scen, groups in sorted(trials.items()):
        scored = {p: [score(r["text"], cats, patterns) for r in rs] for p, rs in groups.items()}
        sec = {"features": {}, "filtered": [], "frequencies": {}, "contrasts": {}, "labels": {}}
        for key in ["word_count", "sentence_count"]:
            a = [s[key] for s in scored["extrovert"]]
            b = [s[key] for s in scored["introvert"]]
            sec[key] = {"ext": sum(a) / len(a), "int": sum(b) / len(b), "test": welch(a, b)}
        for c in cats:
            a = [s["pct"][c] for s in scored["extrovert"]]
            b = [s["pct"][c] for s in scored["introvert"]]
            sec["features"][c] = {"ext": sum(a) / len(a), "int": sum(b) / len(b), "test": welch(a, b)}
            t = sec["features"][c]["test"]
            if t and t["p"] < 0.05 and abs(t["d"]) > 0.5:
                sec["filtered"].append((c, abs(t["d"])))
        sec["filtered"] = [c for c, _ in sorted(sec["filtered"], key=lambda x: -x[1])]

        for p, rs in groups.items():
            n = len(rs)
            freq = {}
            for r in rs:
                for m in ("face", "body", "voice"):
                    for a in r["actions"][m]:
                        freq[a] = freq.get(a, 0) + 1
            sec["frequencies"][p] = {a: c / n for a, c in sorted(freq.items())}
            # lexicon baseline: posemo + social >= 8
            sec["labels"][p] = [
                int(s["pct"]["posemo"] + s["pct"]["social"] >= 8.0) for s in scored[p]
            ]
        fe, fi = sec["frequencies"]["extrovert"], sec["frequencies"]["introvert"]
        for e, i in SCHEMA_PAIRS:
            sec["contrasts"][e] = (fe.get(e, 0) - fi.get(e, 0)) - (fe.get(i, 0) - fi.get(i, 0))
        out[scen] = sec

    (HERE / "oracle_expected.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
