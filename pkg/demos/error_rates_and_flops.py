# Error rates and operation counts

from wordocr import metrics as M
from wordocr.network import NetworkConfig

# Edit distance split into substitutions, insertions and deletions.
# Insertions are extra hypothesis symbols, deletions are missed reference symbols.

for ref, hyp in [("kitten", "sitting"), ("abc", ""), ("word", "wodr")]:
    b = M.edit_distance(ref, hyp)
    print(f"{ref!r:10} {hyp!r:10} S={b.substitutions} I={b.insertions} D={b.deletions}")

# CER pools edits over all reference characters; WER counts wrong words

pairs = [("abcde", "abcde"), ("fghij", "fghi"), ("kl", "kl"), ("mn", "nm")]
print("CER", M.cer(pairs), "WER", M.wer(pairs))

# Static forward cost of one 50x200 image. Multiply-add counts as 2.

for cell in ("lstm", "gru"):
    est = M.estimate_flops(NetworkConfig(num_classes=21, cell=cell))
    convs = sum(v for k, v in est.layers.items() if k.startswith("conv"))
    rnn = sum(v for k, v in est.layers.items() if k.startswith("rnn"))
    print(f"{cell}: total {est.millions:.2f} M, conv {convs / 1e6:.2f} M, recurrent {rnn / 1e6:.2f} M")
