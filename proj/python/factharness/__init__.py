"""Factual-consistency rewards and weakly supervised NLI for report generation.

The heavy lifting lives in the compiled extension; this package re-exports
its surface. Training and decoding run through the ``factharness_cli``
binary rather than these bindings.
"""

from factharness._core import (
    FactharnessError,
    Harness,
    StudySet,
    bertscore,
    micro_metrics,
    observation_names,
    spearman,
    split_sentences,
    synth,
    tokenize,
)

__all__ = [
    "FactharnessError",
    "Harness",
    "StudySet",
    "bertscore",
    "micro_metrics",
    "observation_names",
    "spearman",
    "split_sentences",
    "synth",
    "tokenize",
]
