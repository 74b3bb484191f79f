"""Handwritten word recognition: CNN features, two bidirectional RNN layers, CTC.

Submodules:

``dataset``    manifests, word crops, charset, splits, synthetic corpus
``imageproc``  resize, normalization and augmentation policies
``network``    forward and backward passes of the recognizer
``ctc``        CTC loss, gradient and decoders
``metrics``    edit distance, CER, WER and FLOP counts
``trainer``    Adam, epochs, checkpoints and evaluation
``cli``        the ``wordocr`` command
"""

__version__ = "0.1.0"
