"""Training runs shared by the acceptance criteria and the CLI tests."""
import time
from dataclasses import dataclass, field

from wordocr import dataset as D, network as N, trainer as T


@dataclass
class OverfitRun:
    state: T.Checkpoint
    samples: list
    epochs: int
    seconds: float
    cer: float
    history: list = field(default_factory=list)


def overfit_small_corpus(words: int = 5, max_epochs: int = 300, seed: int = 0) -> OverfitRun:
    """Train the reference network on ``words`` synthetic samples until train CER is 0."""
    samples, _ = D.synth_corpus(D.SynthConfig(word_count=words, seed=seed))
    charset = D.build_charset(samples)
    state = T.new_checkpoint(N.NetworkConfig(num_classes=charset.num_classes), charset, seed)
    config = T.TrainConfig(augment=False, seed=seed)
    cache: dict = {}
    history = []
    start = time.perf_counter()
    cer, epoch = 1.0, 0
    for epoch in range(1, max_epochs + 1):
        T.train_epoch(state, samples, epoch, config, cache=cache)
        cer = T.evaluate_split(state, samples, "train", cache=cache).cer
        history.append(cer)
        if cer == 0.0:
            break
    return OverfitRun(state, samples, epoch, time.perf_counter() - start, cer, history)


@dataclass
class ReferenceRun:
    result: T.FitResult
    charset: D.Charset
    test: list
    report: object
    seconds: float


def reference_synthetic_run(max_epochs: int = 200, seed: int = 0, **train_overrides) -> ReferenceRun:
    """Synthesize, split, train and score the default recognizer on 500 words over 20 symbols.

    The clock covers the whole pipeline, including test-split decoding.
    """
    start = time.perf_counter()
    samples, charset = D.synth_corpus(D.SynthConfig(alphabet_size=20, word_count=500, seed=seed))
    split = D.split_dataset(samples, seed)
    train, val, test = ([samples[i] for i in part] for part in (split.train, split.val, split.test))
    config = T.TrainConfig(max_epochs=max_epochs, seed=seed, **train_overrides)
    result = T.fit(train, val, charset, N.NetworkConfig(num_classes=charset.num_classes), config)
    report = T.evaluate_split(result.best, test, "test", "beam")
    return ReferenceRun(result, charset, test, report, time.perf_counter() - start)
