"""Morphology-aware self-supervised learning for PPG signals.

Pipeline: ``waveform_io`` (records, stores) -> ``preprocess`` (filter, segment,
normalise) -> ``morphology`` (sVRI, IPA, SQI labels) -> ``augment`` ->
``model`` / ``ssl`` (ResNet encoder, NT-Xent + mixture-of-experts heads on a
small numpy autodiff engine in ``autodiff``) -> ``eval`` (linear probes,
bootstrap CIs, Wilcoxon) -> ``reporting``.  ``cli`` wires the stages together.
"""

__version__ = "0.1.0"
