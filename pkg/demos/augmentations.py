# The seven augmentation policies on one synthetic word
#
# Writes augment_sheet.png next to this script: the original, then one draw
# of each policy with probability forced to 1.

from pathlib import Path

import numpy as np
from PIL import Image

from wordocr import cli, dataset, imageproc

samples, charset = dataset.synth_corpus(dataset.SynthConfig(word_count=1, seed=3))
word = samples[0]
print("transcript", word.transcript, "crop", word.image.shape)

policies = imageproc.default_policies(probability=1.0)
for p in policies:
    print(p.kind, p.params)

sheet = cli.augment_sheet(word.image, policies, seed=0)
out = Path(__file__).with_name("augment_sheet.png")
Image.fromarray(sheet).save(out)
print("wrote", out, sheet.shape)

# The geometric warps fill with white, so a blank page stays blank under them.
# Cutout and noise do darken it.

white = np.full((50, 200), 255.0)
warps = [p for p in policies if p.kind not in ("cutout_h", "cutout_v", "gaussian_noise")]
print("white after warps:", imageproc.compose_augmentations(warps, white, seed=1).min())
print("white after all seven:", imageproc.compose_augmentations(policies, white, seed=1).min())

# Resize and normalize: the network sees 50x200 values in [-1, 1]

x = imageproc.preprocess(word.image)
print("normalized", x.shape, x.min(), x.max())
