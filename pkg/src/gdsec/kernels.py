"""Hot-kernel dispatch: compiled extension when built, pure numpy otherwise.

The two backends are interchangeable (bit-for-bit identical outputs); see
benchmarks/bench_kernels.py for a speed comparison.
"""

from __future__ import annotations

try:
    from gdsec import _speedups as _impl

    COMPILED = True
except ImportError:  # extension not built
    from gdsec import _kernels_py as _impl

    COMPILED = False

select_above_threshold = _impl.select_above_threshold
gdsec_worker_update = _impl.gdsec_worker_update
varint_gap_bits = _impl.varint_gap_bits


def backend_name() -> str:
    return "compiled" if COMPILED else "pure-python"
