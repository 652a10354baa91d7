"""Hausdorff dimension of the real Julia set of 0.5 tan z, three ways.

The pressure root, the Ulam root and the box-counting slope should agree to
a few hundredths; the last one converges slowest.
"""
import math

from merodyn import MapSpec
from merodyn.bowen import pressure_root, ulam_root
from merodyn.raster import box_count, refine_real_julia
from merodyn.transfer import pressure_curve

f = MapSpec.tangent(0.5)

curve = pressure_curve(f, [0.6, 0.7, 0.8, 0.9, 1.0], depth=8)
for t, (p, err) in zip(curve.t_grid, curve.extrapolated):
    print(f"P({t:.1f}) = {p:+.4f} +- {err:.4f}")

root = pressure_root(f, 0.005, depth=8)
print("pressure root", round(root.h, 4), root.bracket)

print("ulam root    ", round(ulam_root(f).h, 4))

levels = refine_real_julia(f, 12, 1e-7)
bc = box_count(levels[12], [2 * math.pi / 2 ** j for j in range(6, 17)])
print("box slope    ", round(bc.slope, 4), "r2", round(bc.r2, 5))
