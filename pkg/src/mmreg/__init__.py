"""Multimodal multi-label regression engine.

Pipeline: temporal pooling per modality -> shared-basis fusion -> ensemble of
FFN regression heads -> two-level mean aggregation over heads and responses.
Training uses MSE with AdamW and supports K-fold cross-validation; all math
is float64 numpy with hand-composed analytic gradients.
"""

__version__ = "0.1.0"
