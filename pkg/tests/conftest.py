"""Pin single-threaded BLAS before numpy loads so training runs and their
determinism checks see identical arithmetic."""

import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")
