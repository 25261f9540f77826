"""Finding the slip threshold from one recorded grip.

After a quiet start and a firm grasp, the synthetic trace relaxes and
tightens the grip until the object starts to slide.
Calibration filters the summed force, finds the oscillating stretch and
takes the typical trough as the minimum force that still holds.
"""

from dataclasses import replace

from finray.tactile import ThresholdDetector, TraceSpec, aggregate_trace, calibrate_threshold, generate_trace

spec = TraceSpec()
frames = generate_trace(spec)
agg = aggregate_trace(frames)
print(f"{len(frames)} frames at {spec.sample_rate:g} Hz, peak summed force {agg.max():.2f} N")

m = calibrate_threshold(frames)
print(f"noise floor {m.noise_floor:.3f} N, grasp starts at {m.grasp_start:.2f} s")
print(f"oscillation window {m.oscillation_window[0]:.2f}-{m.oscillation_window[1]:.2f} s")
print(f"f_min = {m.f_min:.3f} N  (injected minimum {spec.oscillation_min} N)")

print("\nother injected minima:")
for om in (0.8, 1.6, 2.4):
    s = replace(spec, oscillation_min=om, seed=3)
    print(f"  {om:.1f} N  ->  recovered {calibrate_threshold(generate_trace(s)).f_min:.3f} N")

det = ThresholdDetector(m)
alarms = [f.timestamp for f in frames if det.update(f)]
print(f"\nonline detector on the same trace: first alarm at {alarms[0]:.2f} s, {len(alarms)} alarm frames")
