"""Writes the small two-language demo corpus used by demo/run_demo.sh."""
import json
import random

rng = random.Random(7)
topics = ["river", "castle", "violin", "comet", "harvest", "glacier", "market", "orbit",
          "forest", "engine", "bakery", "tide", "lantern", "desert", "museum", "volcano"]
filler = ["the", "a", "of", "near", "with", "and", "old", "new", "small", "large"]

def pseudo(word):  # second "language": reversed words with a suffix
    return word[::-1] + "ka"

records, queries, triples, qrels = [], [], [], []
for lang, tr in (("en", lambda w: w), ("xx", pseudo)):
    for i, t in enumerate(topics):
        other = topics[(i + 5) % len(topics)]
        for j in range(3):
            words = [tr(t)] * 3 + [tr(other)] + [tr(rng.choice(filler)) for _ in range(6)]
            rng.shuffle(words)
            records.append({"id": f"{lang}-p{i}-{j}", "lang": lang, "text": " ".join(words)})
        q = " ".join([tr("what"), tr("about"), tr(t)])
        queries.append({"id": f"{lang}-q{i}", "lang": lang, "text": q})
        neg = f"{lang}-p{(i + 1) % len(topics)}-0"
        for j in range(3):
            triples.append(f"{lang}-q{i} {lang}-p{i}-{j} {neg}")
            qrels.append(f"{lang}-q{i} 0 {lang}-p{i}-{j} 1")

with open("passages.jsonl", "w") as f:
    for r in records:
        f.write(json.dumps(r) + "\n")
with open("queries.jsonl", "w") as f:
    for q in queries:
        f.write(json.dumps(q) + "\n")
with open("triples.txt", "w") as f:
    f.write("\n".join(triples) + "\n")
with open("qrels.txt", "w") as f:
    f.write("\n".join(qrels) + "\n")
