"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``SEER_KERNELS=python``
to force the numpy fallback (``SEER_KERNELS=cython`` makes a missing
extension an error instead of a silent fallback).
"""

import os

from . import _pykernels

_choice = os.environ.get("SEER_KERNELS", "auto").lower()
if _choice == "python":
    backend = _pykernels
else:
    try:
        from . import _ckernels as backend
    except ImportError:
        if _choice == "cython":
            raise
        backend = _pykernels

BACKEND = backend.NAME
track = backend.track
sigmoid = backend.sigmoid
lstm_forward = backend.lstm_forward
lstm_backward = backend.lstm_backward
gru_forward = backend.gru_forward
gru_backward = backend.gru_backward


def available_backends():
    """Every importable backend module, fallback first."""
    found = [_pykernels]
    try:
        from . import _ckernels
        found.append(_ckernels)
    except ImportError:
        pass
    return found
