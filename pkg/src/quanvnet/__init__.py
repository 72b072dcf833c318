"""Quanvolutional preprocessing + compact CNN classification pipeline.

Subpackages:
    qsim    -- dense statevector simulator (gates, circuits, sampling)
    quanv   -- the fixed quanvolutional feature extractor and cache writer
    nn      -- from-scratch CNN (forward/backward, Adam, checkpoints)
    metrics -- confusion-matrix metrics, ROC/AUC, report emission
    data    -- image ingestion, manifests, dataset assembly
    cli     -- command-line pipeline (preprocess / train / eval / ablate)
"""

__version__ = "0.1.0"
