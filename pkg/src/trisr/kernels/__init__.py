"""Hot numeric kernels: jitted numba loops and a BLAS-shaped numpy twin.

The backend is picked once at import time from the TRISR_KERNELS env var:
  auto   (default) the numpy path
  numba  require the jitted kernels
  numpy  force the numpy path explicitly

Both implementations are maintained and equivalence-tested;
benchmarks/bench_kernels.py compares them. On the reference box the numpy
path wins the dense convolutions outright (BLAS shift-add beats the loop
kernels 10-50x at model channel counts, and numba's thread pool contends
with BLAS spin-waiting mid-model), so `auto` resolves to numpy; numba
remains one env var away for machines where the balance differs.

`load_backend()` returns a specific implementation module regardless of
the active default, which is what the equivalence tests and the benchmark
use.
"""

import os

from . import _numpy

_CHOICE = os.environ.get("TRISR_KERNELS", "auto").lower()

if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(f"TRISR_KERNELS must be auto|numba|numpy, got {_CHOICE!r}")

if _CHOICE == "numba":
    from . import _numba as _impl

    BACKEND = "numba"
else:
    _impl = _numpy
    BACKEND = "numpy"


def load_backend(name):
    """Return the named implementation module ('numba' or 'numpy')."""
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba

        return _numba
    raise ValueError(f"unknown kernel backend {name!r}")


conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
dwconv_forward = _impl.dwconv_forward
dwconv_backward = _impl.dwconv_backward
scatter_add_rows = _impl.scatter_add_rows
