"""Process-level tuning for the compiled kernels.

OpenBLAS worker threads spin-wait after every GEMM; on small CPUs they starve
the OpenMP loops in the compiled kernel core. When that core is active we pin
BLAS pools to one thread (the matmuls in this model are small, the
convolutions are not). Idempotent; a no-op for the numpy backend.
"""

from . import kernels

_limit_handle = None


def tune_threads():
    global _limit_handle
    if _limit_handle is not None or kernels.backend_name() != "cython":
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    _limit_handle = threadpool_limits(limits=1, user_api="blas")
