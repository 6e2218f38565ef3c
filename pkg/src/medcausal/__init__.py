"""Causal-effect-aware medication recommendation.

Subpackages and modules:

* :mod:`medcausal.ehr` - records, vocabularies, loaders, splits, bootstrap
* :mod:`medcausal.synthetic` - synthetic corpus with planted ground truth
* :mod:`medcausal.causal` - structure search, GLM effects, relevance strata
* :mod:`medcausal.model` - dual-granularity encoder
* :mod:`medcausal.correction` - effect-driven post-hoc correction
* :mod:`medcausal.losses`, :mod:`medcausal.metrics`, :mod:`medcausal.training`
* :mod:`medcausal.pipeline`, :mod:`medcausal.cli` - staged runs and the command line
"""
__version__ = "0.1.0"
