"""Counting statistics on ten field images.

Each row is (annotated, estimated) flowers for one image.
"""
from vineseg.metrics import correct_count, eoa, eoa_stats, fit_linear

counts = [
    (1157, 1274), (839, 1056), (1074, 1242), (1312, 1527), (1876, 1774),
    (935, 1113), (1138, 1358), (1110, 1367), (971, 1183), (1320, 1432),
]

for a, e in counts:
    print(f"annotated {a:>5}  estimated {e:>5}  EOA {eoa(e, a):7.1%}")

mean, sigma = eoa_stats([(e, a) for a, e in counts])
print(f"\nmean EOA {mean:.1%}, sigma {sigma:.2%}")  # population sigma

# the detector overcounts; a line through (annotated, estimated) undoes that
fit = fit_linear(counts)
print(f"estimated = {fit.slope:.3f} * annotated + {fit.intercept:.1f}   R^2 = {fit.r_squared:.3f}")
for a, e in counts[:3]:
    print(f"  raw {e} -> corrected {correct_count(fit, e):.0f} (annotated {a})")
