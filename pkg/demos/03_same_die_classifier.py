"""
Learning what "same die" looks like
===================================

After alignment, the distances from one coin to its partner form a
histogram.  Same-die pairs pile up at the scanner noise level; coins from
sibling dies of one coin type sit a little farther out.  A logistic model
on the histogram separates the two.
"""

import numpy as np

from coindie.icp import icp
from coindie.metric import ComparisonRecord, accuracy, predict, self_match_histogram, train
from coindie.pipeline import pair_histogram, prepare
from coindie.synth import StrikeSpec, make_corpus

# 8 dies x 3 coins, scanned in their die frames so ground truth is the identity
corpus = make_corpus(8, 3, seed=5, poses="aligned", strike_spec=StrikeSpec(sample_count=12000))
clouds = [prepare(c, 0.15) for c in corpus.clouds]
pairs = corpus.pairs()
print(f"{len(pairs)} pairs, {sum(l for *_, l in pairs)} same-die")

records = []
for i, j, label in pairs:
    T = icp(clouds[i], clouds[j], corpus.relative_pose(i, j)).transform
    h = pair_histogram(clouds[i], clouds[j], T)
    records.append(ComparisonRecord((clouds[i].id, clouds[j].id), h, label))

# where does half the mass sit, in mm?
edges = np.linspace(0, 1, 65)
for label in (1, 0):
    med = [edges[np.searchsorted(np.cumsum(r.histogram.bins), 0.5) + 1] for r in records if r.label == label]
    print(f"label {label}: median distance bin ends at {np.median(med):.3f} mm")

#########################################################################
# Half the pairs train, half test.

perm = np.random.default_rng(0).permutation(len(records))
tr, te = perm[: len(perm) // 2], perm[len(perm) // 2 :]
train_recs = [records[k] for k in tr]
coins = {c for r in train_recs for c in r.pair}
model = train(train_recs, self_matches=len(coins))
print(f"train accuracy {accuracy(model, train_recs):.3f}")
print(f"test accuracy  {accuracy(model, [records[k] for k in te]):.3f}")

# a coin compared with itself
print(f"p(self) = {predict(model, self_match_histogram()):.3f}")
