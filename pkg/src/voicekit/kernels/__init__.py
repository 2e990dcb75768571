"""Kernel backend selection.

Two interchangeable implementations of the DSP inner loops exist:

* ``voicekit.kernels._native`` - Cython, built at install time when a
  compiler is available;
* ``voicekit.kernels.fallback`` - numpy/scipy, always available.

The native module is preferred when importable. Set ``VOICEKIT_BACKEND`` to
``native`` (or ``c``) to require it, or ``python`` (or ``py``) to force the
fallback; requiring a backend that cannot be loaded raises ImportError.
"""

import logging
import os

log = logging.getLogger(__name__)

_requested = os.environ.get("VOICEKIT_BACKEND", "").strip().lower()

if _requested in ("python", "py"):
    from voicekit.kernels import fallback as _impl
elif _requested in ("native", "c"):
    from voicekit.kernels import _native as _impl  # type: ignore[attr-defined]
elif _requested == "":
    try:
        from voicekit.kernels import _native as _impl  # type: ignore[attr-defined]
    except ImportError:
        from voicekit.kernels import fallback as _impl
        log.info("compiled kernels unavailable; using numpy fallback")
else:
    raise ImportError(
        f"VOICEKIT_BACKEND={_requested!r} not recognized; "
        "use 'native' or 'python'")

BACKEND_NAME = _impl.BACKEND_NAME

polyphase_resample = _impl.polyphase_resample
sos_filter = _impl.sos_filter
fft_power = _impl.fft_power
autocorr_frames = _impl.autocorr_frames
best_xcorr_lag = _impl.best_xcorr_lag

__all__ = [
    "BACKEND_NAME",
    "polyphase_resample",
    "sos_filter",
    "fft_power",
    "autocorr_frames",
    "best_xcorr_lag",
]
