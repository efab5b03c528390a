"""Uncertainty-aware digital-twin toolkit.

Small neural backbones (dense, vanilla RNN, LSTM, GRU, physics-informed
battery core) carry a mean-field Gaussian posterior on their final linear
map; training maximises an evidence-lower-bound style objective and
inference returns calibrated 95% bands from repeated stochastic passes.
On top sit the updating procedures: session-based retraining for streamed
series, uncertainty-driven active learning, sensor concatenation, and a
rolling battery fine-tune.
"""

__version__ = "0.1.0"
