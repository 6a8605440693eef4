"""Backend selection for the episode kernel.

The compiled extension is used when it imports; otherwise, or when
``LOTAD_PURE_PYTHON=1`` is set, the pure-Python twin is used. Both expose
``Runner``, ``env_step`` and ``env_label`` with identical results.
"""
from __future__ import annotations

import logging
import os

from . import _kernel_py

log = logging.getLogger(__name__)

python_backend = _kernel_py
compiled_backend = None
try:
    from . import _kernel as compiled_backend  # type: ignore[attr-defined,no-redef]
except ImportError:  # extension not built
    log.debug("compiled kernel unavailable; using the pure-Python kernel")

if os.environ.get("LOTAD_PURE_PYTHON", "") not in ("", "0") or compiled_backend is None:
    backend = python_backend
else:
    backend = compiled_backend

BACKEND_NAME = "compiled" if backend is compiled_backend else "python"


def get_backend(name: str | None = None):
    """Return a backend by name ('compiled', 'python'); None means the active one."""
    if name is None:
        return backend
    if name == "python":
        return python_backend
    if name == "compiled":
        if compiled_backend is None:
            raise ImportError("the compiled kernel is not built (run: pip install -e .)")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")
