"""The map i pi tan z: both asymptotic values land on the fixed point 0.

The Julia set is the whole sphere, so the pressure only reaches zero at
t = 2, the conformal measure is 2-conformal, and the induced map on a
neighbourhood of the postsingular set has a positive Lyapunov exponent.
"""
import math

from merodyn import MapSpec, classify_regime
from merodyn.bowen import bounds_check
from merodyn.errors import NoSignChange
from merodyn.invariant import lyapunov_control, lyapunov_induced
from merodyn.poincare import build_ps_measure, conformality_cells, conformality_check
from merodyn.transfer import TreeConfig, pressure_estimate

f = MapSpec.tangent(1j * math.pi)
regime = classify_regime(f)
print(regime.regime, "postsingular", regime.postsingular)

for t in (1.6, 1.9, 2.0, 2.2):
    p = pressure_estimate(f, t, 1 + 0.5j, depth=10)
    print(f"P({t}) = {p.value:+.4f} +- {p.error:.4f}")

try:
    from merodyn.bowen import pressure_root
    h = pressure_root(f, 0.01, depth=8).h
except NoSignChange as e:
    h = e.estimate
print("h =", h, "chain passes:", bounds_check(h, regime, rho=1).passed)

m = build_ps_measure(f, 2.05, 8, TreeConfig(res=0.02))
avoid = list(f.asymptotic_values) + list(regime.postsingular)
cells = conformality_cells(f, m, 20, 0.05, avoid, regime.safety_radius)
for h_test in (1.2, 2.0):
    c = conformality_check(f, m, cells, h_test)
    print(f"conformality at {h_test}: C = {c.C:.3f}", "(rejected)" if c.nonconformal else "")

L = lyapunov_induced(f, m, 50, 40, seed=0)
print(f"chi = {L.chi:.4f} +- {L.std_err:.4f}, fixed point control {lyapunov_control(f, 0j, 50).chi:.6f}"
      f" vs log pi {math.log(math.pi):.6f}")
