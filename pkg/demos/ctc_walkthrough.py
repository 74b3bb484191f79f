# CTC by hand
#
# Two frames, one real symbol "a" (class 0) and the blank (class 1), every
# probability 0.5. Three of the four frame paths collapse to "a": aa, a-, -a.

import math

import numpy as np

from wordocr import ctc

probs = np.full((2, 2), 0.5)
print("loss", ctc.ctc_loss(probs, [0]), "expected", -math.log(0.75))

# Paths and what they collapse to

for path in [(0, 0), (0, 1), (1, 0), (1, 1)]:
    print(path, "->", ctc.collapse_path(path, blank=1))

# A repeated label needs a blank between the copies, so "aa" wants three frames

print("min frames for [0, 0]:", ctc.min_frames([0, 0]))

# Gradient w.r.t. the logits is softmax minus the path posterior; rows sum to zero

logits = np.random.default_rng(0).normal(size=(6, 4))
res = ctc.ctc_grad(logits, [2, 0, 2])
print("loss", round(res.loss, 4), "row sums", np.abs(res.grad_logits.sum(axis=1)).max())

# Greedy vs prefix beam search. Greedy picks the best path, beam looks for the
# best labeling, which can differ when several paths share one string.

probs = np.array([[0.4, 0.0, 0.6], [0.4, 0.0, 0.6]])
print("greedy", ctc.greedy_decode(probs), "beam", ctc.beam_decode(probs, 10))
print("p(blank path)", math.exp(ctc.labeling_log_prob(probs, [])),
      "p('a')", math.exp(ctc.labeling_log_prob(probs, [0])))
