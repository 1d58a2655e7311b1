"""Writes filter_news.tsv / filter_behaviors.tsv and prints the counts an
independent reimplementation of the filters expects."""
import json, random, string

fillers = [f"F{i:02d}" for i in range(1, 51)]
news = []
for f in fillers:
    news.append((f, f"filler item {f.lower()}", "", [], []))
news.append(("N1", " ".join(f"w{i:02d}" for i in range(1, 26)), "", ["Q1", "Q2"], []))
news.append(("N2", "Market rally!", " ".join(["stocks", "rise"] * 30), [], ["Q3"]))
news.append(("N3", "Market, stocks & rally", "", ["Q1"], []))
news.append(("N4", "Dropped story", "never counted", ["Q9"], []))
news.append(("N5", "Lonely read", "", [], []))
news.append(("N6", "Seen never clicked", "", [], []))

users = [f"U{i:02d}" for i in range(1, 14)]
behaviors = []
for i, u in enumerate(users, start=1):
    if i <= 10:
        hist = fillers
    elif i <= 12:
        hist = fillers[:49]
    else:
        hist = fillers[:1]
    labels = {"N1": int(i <= 12), "N2": int(i <= 11), "N3": int(i <= 10),
              "N4": int(i <= 9), "N5": int(i == 1), "N6": 0}
    cands = " ".join(f"{n}-{l}" for n, l in labels.items())
    behaviors.append((f"I{i}", u, "11/15/2019 10:00:00 AM", " ".join(hist), cands))

def ents(ids):
    return json.dumps([{"WikidataId": q} for q in ids]) if ids else "[]"

with open("filter_news.tsv", "w") as f:
    for nid, title, abstract, te, ae in news:
        f.write("\t".join([nid, "cat", "sub", title, abstract, "", ents(te), ents(ae)]) + "\n")
with open("filter_behaviors.tsv", "w") as f:
    for row in behaviors:
        f.write("\t".join(row) + "\n")

# Independent oracle for the expected dataset.
def tok(s):
    s = "".join(c for c in s.lower() if c not in string.punctuation)
    return s.split()

readers = {}
for _, u, _, hist, cands in behaviors:
    for n in hist.split():
        readers.setdefault(n, set()).add(u)
    for c in cands.split():
        n, l = c.rsplit("-", 1)
        if l == "1":
            readers.setdefault(n, set()).add(u)
keep_news = {n for n, r in readers.items() if len(r) >= 10}
kept = []
for iid, u, t, hist, cands in behaviors:
    h = [n for n in hist.split() if n in keep_news]
    c = [x for x in cands.split() if x.rsplit("-", 1)[0] in keep_news]
    kept.append((iid, u, h, c))
hist_by_user = {}
for iid, u, h, c in kept:
    hist_by_user.setdefault(u, set()).update(h)
kept = [k for k in kept if len(hist_by_user[k[1]]) >= 50]
referenced = {n for k in kept for n in k[2] + [x.rsplit("-", 1)[0] for x in k[3]]}
words, entities = [], []
for nid, title, abstract, te, ae in news:
    if nid not in referenced:
        continue
    for w in tok(title)[:20] + tok(abstract)[:50]:
        if w not in words:
            words.append(w)
    for e in te + ae:
        if e not in entities:
            entities.append(e)
print("impressions", len(kept), "candidates", sorted({len(k[3]) for k in kept}))
print("users", len({k[1] for k in kept}), "news", len(referenced), "words", len(words), "entities", len(entities))
print("train", int(0.8 * len(kept)), "test", len(kept) - int(0.8 * len(kept)))
