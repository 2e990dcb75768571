"""Benchmark the compiled DSP kernels against the numpy fallback.

Runs each kernel on inputs shaped like what the pipeline actually feeds it
(16 kHz audio, 32 ms frames) and reports per-call wall time for both
backends plus the speedup ratio. Correctness is asserted along the way:
the two backends must agree to float tolerance on every kernel before
timings are printed.

Usage:
    python3 benchmarks/bench_kernels.py [--seconds 2.0] [--repeat 5]
"""

import argparse
import importlib
import time

import numpy as np


def _load_backends():
    fallback = importlib.import_module("voicekit.kernels.fallback")
    try:
        native = importlib.import_module("voicekit.kernels._native")
    except ImportError:
        native = None
    return fallback, native


def make_cases(seconds, rng):
    fs = 16000
    n = int(fs * seconds)
    x = rng.standard_normal(n)

    # polyphase_resample: 16 kHz -> 22.05 kHz style ratio, 441/320
    up, down = 441, 320
    n_taps = 64
    taps = rng.standard_normal((up, n_taps))
    x_padded = np.concatenate([np.zeros(n_taps), x, np.zeros(n_taps)])
    n_out = (n * up) // down

    # sos_filter: 4th order cascade (2 sections)
    sos = np.array([[0.1, 0.2, 0.1, 1.0, -0.5, 0.06],
                    [0.1, 0.1, 0.0, 1.0, -0.4, 0.05]])

    # fft_power: batch of 512-point frames, 10 ms hop over the signal
    frame, hop = 512, 160
    n_frames = (n - frame) // hop + 1
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(frame)

    # autocorr_frames: pitch-tracking shapes (win + max_lag wide rows)
    win, min_lag, max_lag = 480, 40, 400
    width = win + max_lag
    n_ac = (n - width) // hop + 1
    aidx = np.arange(width)[None, :] + hop * np.arange(n_ac)[:, None]
    ac_frames = x[aidx]

    # best_xcorr_lag: WSOLA-style template search
    template = x[1000:1000 + 480]
    center, radius = 5000, 220

    return {
        "polyphase_resample": (x_padded, taps, up, down, n_out),
        "sos_filter": (x, sos),
        "fft_power": (frames,),
        "autocorr_frames": (ac_frames, win, min_lag, max_lag),
        "best_xcorr_lag": (template, x, center, radius),
    }


def check_agreement(fallback, native, cases):
    for name, args in cases.items():
        ref = getattr(fallback, name)(*args)
        got = getattr(native, name)(*args)
        if name == "best_xcorr_lag":
            assert got == ref, f"{name}: {got} != {ref}"
        else:
            err = np.max(np.abs(np.asarray(got) - np.asarray(ref)))
            scale = max(1.0, float(np.max(np.abs(ref))))
            assert err / scale < 1e-9, f"{name}: max err {err:.3e}"


def bench(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=2.0,
                    help="length of synthetic audio in seconds")
    ap.add_argument("--repeat", type=int, default=5,
                    help="timing repetitions, best of N")
    args = ap.parse_args()

    fallback, native = _load_backends()
    rng = np.random.default_rng(0)
    cases = make_cases(args.seconds, rng)

    if native is None:
        print("compiled backend not built; timing fallback only")
    else:
        check_agreement(fallback, native, cases)
        print("backends agree on all kernels (rtol 1e-9)")

    header = f"{'kernel':<20} {'python':>10} {'native':>10} {'ratio':>7}"
    print()
    print(header)
    print("-" * len(header))
    for name, case in cases.items():
        t_py = bench(getattr(fallback, name), case, args.repeat)
        if native is not None:
            t_c = bench(getattr(native, name), case, args.repeat)
            ratio = t_py / t_c if t_c > 0 else float("inf")
            print(f"{name:<20} {t_py * 1e3:>8.2f}ms {t_c * 1e3:>8.2f}ms "
                  f"{ratio:>6.1f}x")
        else:
            print(f"{name:<20} {t_py * 1e3:>8.2f}ms {'-':>10} {'-':>7}")


if __name__ == "__main__":
    main()
