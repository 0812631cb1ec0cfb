"""
Finite-difference checks of the reader
======================================

Compares tape gradients with central differences, first for each primitive
and then for -log Pr(answer) of every reader variant on toy instances.
"""

from mhqa.checks import TOLERANCE, gradient_suite

# each line is the worst relative error over every parameter coordinate
for name, err in gradient_suite(seed=0, instances=2):
    print(f"{'ok  ' if err < TOLERANCE else 'FAIL'} {name:<28} {err:.2e}")
