"""Designing the 0.5-49 Hz band-pass and watching what it does to a recording.

Run with ``python3 demos/01_filter_design.py``.
"""

import numpy as np

from iedkit.preprocess import apply_filter, design_bandpass, frequency_response

fs = 250.0
coeffs = design_bandpass(fs, 0.5, 49.0, order=2)
print(f"order-2 prototype -> {coeffs.num_poles} poles, stable: {coeffs.is_stable()}")
print("poles |z|:", np.round(np.abs(coeffs.poles), 6))

# Magnitude at a handful of frequencies. The cutoffs sit at half power.
for f in (0.0, 0.1, 0.5, 1.0, 10.0, 30.0, 49.0, 60.0, 100.0):
    h = abs(frequency_response(coeffs, [f])[0])
    db = 20 * np.log10(h) if h > 0 else -np.inf
    print(f"{f:6.1f} Hz  |H| = {h:.5f}  ({db:7.2f} dB)")

# A DC offset, a 10 Hz rhythm and 60 Hz mains hum. The filter keeps the rhythm,
# removes the offset over time and dents the hum.
t = np.arange(int(10 * fs)) / fs
x = 40.0 + np.sin(2 * np.pi * 10 * t) + 0.5 * np.sin(2 * np.pi * 60 * t)
y = apply_filter(coeffs, x)
tail = slice(int(5 * fs), None)
spectrum = np.abs(np.fft.rfft(y[tail])) / (len(t[tail]) / 2)
freqs = np.fft.rfftfreq(len(t[tail]), 1 / fs)
for f in (0.0, 10.0, 60.0):
    k = int(np.argmin(np.abs(freqs - f)))
    print(f"after filtering, amplitude near {f:4.1f} Hz: {spectrum[k]:.3f}")
