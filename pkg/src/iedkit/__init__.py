"""Patient-independent IED detection on scalp EEG, built on numpy and scipy.

Submodules: ``edf_io``, ``preprocess``, ``neuralcore``, ``models``,
``datapipe``, ``trainer``, ``metrics`` and ``cli``.
"""

__version__ = "0.1.0"
