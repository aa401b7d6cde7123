"""Corpus curation and benchmark evaluation toolkit.

Submodules:

- records: line-delimited record schemas, parsing, atomic file I/O
- manifest: dataset manifest loading and consistency validation
- cleaning: rule filters, PII scrubbing, metadata checks, classifier hook
- dedup: MinHash/LSH near-duplicate detection with an exact-hash pre-pass
- curriculum: proportion balancing and two-stage schedule construction
- metrics: strict NER F1, triple micro-F1, ROUGE-L, BLEU, accuracy,
  set F1, topic-term scoring
- judge: position-swapped pairwise comparison protocol
- dpo: preference-optimization loss/gradient numerics and LR schedule
- pipeline: stage orchestration, evaluation dispatch, report emission
- cli: the ``scibench`` command
"""

from .errors import ScibenchError, StageFailure

__version__ = "0.1.0"

__all__ = ["ScibenchError", "StageFailure", "__version__"]
