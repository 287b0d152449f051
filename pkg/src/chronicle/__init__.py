"""Chronicle: causal sequence modelling over clinical concept timelines.

Builds enriched token timelines from timestamped concept events, trains a
decoder-only transformer on them, forecasts and simulates future
concepts, explains forecasts with gradient saliency, and evaluates with
time-windowed, type-filtered, novelty-filtered top-k precision/recall.
"""

import os

# The model is small; oversubscribed BLAS threads cost more than they
# pay. Set before numpy loads; explicit user settings win.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
