import os

# Cap BLAS threading before numpy is imported anywhere: keeps the timed
# acceptance runs single-threaded and reproducible.
os.environ.setdefault("DCDH_THREADS", "1")
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")
