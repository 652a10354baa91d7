"""When is the invariant measure finite? A table over (order, dimension).

Each verdict from the closed-form criterion is set beside the lattice sum
whose convergence decides it.
"""
from fractions import Fraction

from merodyn.invariant import (criterion_exponent, finiteness_criterion, lattice_sum_triple,
                               schwarzian_degree_criterion)

print(" rho     h   verdict   lattice exponent   lattice")
for rho in (Fraction(1, 2), Fraction(1), Fraction(2)):
    for h in (Fraction(3, 4), Fraction(1), Fraction(3, 2), Fraction(2)):
        if h <= rho / (rho + 1):
            continue
        s = criterion_exponent(rho, h)
        lat = lattice_sum_triple(s, n_cap=64)
        print(f"{str(rho):>4} {str(h):>5}   {finiteness_criterion(rho, h):<9} {float(s):>10.4f}"
              f"         {lat.classification}")

print()
for d in range(5):
    print("deg P =", d, "->", schwarzian_degree_criterion(d))
