"""Kernel backend selection.

Two interchangeable implementations of the dense-layer primitives:
``py`` (numpy) rides BLAS and SIMD ufuncs, which dominate at the batch
shapes training uses, so it is the default; ``cy`` (compiled extension)
has the lower per-call overhead and wins row-at-a-time inference — see
`benchmarks/bench_kernels.py` for measurements. Select explicitly with
MICRODSM_KERNELS=py|cy (``cy`` raises if the extension is not built).
Both produce equal results up to float64 summation order.
"""

import os

from . import _kernels_py

_requested = os.environ.get("MICRODSM_KERNELS", "auto").lower()

if _requested not in ("auto", "py", "cy"):
    raise ValueError(f"MICRODSM_KERNELS must be auto|py|cy, got {_requested!r}")

if _requested == "cy":
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        raise ImportError(
            "MICRODSM_KERNELS=cy but the compiled extension is not built; "
            "run `pip install -e . --no-build-isolation`"
        )
else:
    _impl = _kernels_py

affine = _impl.affine
affine_backward = _impl.affine_backward
tanh = _impl.tanh
tanh_backward = _impl.tanh_backward
adam_step = _impl.adam_step


def backend_name() -> str:
    """Active backend: 'cy' (compiled) or 'py' (numpy)."""
    return _impl.BACKEND


def backends():
    """All importable backends, for parity tests and benchmarks."""
    out = {"py": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        out["cy"] = _kernels
    except ImportError:
        pass
    return out
