# Training a small recognizer end to end
#
# 200 synthetic words over 8 symbols, the default network, no augmentation,
# 40 epochs; about two minutes on one core. The loss sits on the all-blank
# plateau for roughly 20 epochs, then the error rates start to fall. The full
# 500-word run is one of the acceptance tests.

import time

from wordocr import dataset, network, trainer

samples, charset = dataset.synth_corpus(
    dataset.SynthConfig(alphabet_size=8, word_count=200, max_len=5, seed=1))
split = dataset.split_dataset(samples, seed=1)
train = [samples[i] for i in split.train]
val = [samples[i] for i in split.val]
test = [samples[i] for i in split.test]
print("train/val/test", len(train), len(val), len(test), "symbols", charset.symbols)

net = network.NetworkConfig(num_classes=charset.num_classes)
cfg = trainer.TrainConfig(max_epochs=40, seed=1, augment=False)

t0 = time.time()


def show(epoch, elog, rep):
    print(f"epoch {epoch:2d}  train {elog.mean_loss:7.3f}  val {rep.loss:7.3f}  "
          f"cer {rep.cer:.3f}  {time.time() - t0:5.1f}s")


result = trainer.fit(train, val, charset, net, cfg, callback=show)

# The kept checkpoint is the one with the lowest validation loss

best = result.best
print("best epoch", best.epoch, "val loss", best.best_val_loss)
for decoder in ("greedy", "beam"):
    rep = trainer.evaluate_split(best, test, "test", decoder)
    print(decoder, "test loss", round(rep.loss, 3), "CER", round(rep.cer, 3), "WER", round(rep.wer, 3))

rep = trainer.evaluate_split(best, test[:5], "test")
for row in rep.samples:
    print(repr(row.ref), "->", repr(row.hyp))
