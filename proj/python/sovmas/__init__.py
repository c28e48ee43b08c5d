"""Vision-guided multilingual abstractive summarization toolkit.

The heavy lifting lives in the compiled extension; this package re-exports
its surface.
"""

from sovmas._core import (  # noqa: F401
    Corpus,
    CorpusSplit,
    MaskMode,
    Model,
    ModelConfig,
    ResourceTier,
    SynthSpec,
    TrainConfig,
    TrainMode,
    detokenize,
    evaluate,
    generate_summary,
    load_corpus,
    load_vocab,
    lr_at,
    paired_significance,
    reference_grad_check,
    rouge_l,
    rouge_l_ids,
    rouge_n,
    rouge_n_ids,
    split_corpus,
    synth_corpus,
    synth_vocab,
    teacher_forced_accuracy,
    tokenize_for_rouge,
    train,
    write_corpus,
    write_vocab,
)

__all__ = [name for name in dir() if not name.startswith("_")]
