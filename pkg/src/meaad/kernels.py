"""Kernel backend selection.

The compiled extension is used when it imports; setting ``MEAAD_PURE_PYTHON=1``
forces the numpy fallback.
"""

import os

BACKEND = "python"

if os.environ.get("MEAAD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._kernels import common_counts, membership_counts, topk_rows  # noqa: F401

        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    from ._kernels_py import common_counts, membership_counts, topk_rows  # noqa: F401
