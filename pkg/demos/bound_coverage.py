"""Put numbers on the validation bound and check how often the bounds actually fail.

First the worked example: a model picked from a billion candidates and
checked on 10000 held-out points.  Then Monte Carlo: redraw the data many
times and count violations of each high-probability bound at delta = 0.1.

    python3 demos/bound_coverage.py
"""

from genlab.audit import matrix_bernstein_coverage, margin_coverage, two_phase_coverage, validation_coverage
from genlab.bounds import validation_bound

for gamma_sq, label in ((1.0, "worst-case variance"), (0.05**2, "loss std 0.05")):
    extra = validation_bound(m_val=10000, delta=0.1, C=1.0, gamma_sq=gamma_sq, card_F_val=1e9, R_val=0.0).value
    print(f"validation error + {100 * extra:.2f}%  ({label})")

print()
for check in (validation_coverage, two_phase_coverage, margin_coverage, matrix_bernstein_coverage):
    c = check()
    print(c.line())
    print(f"    mean bound {c.mean_value:.4f} vs mean bounded quantity {c.mean_target:.4f}")
