"""How much does each score tell us about a classroom, given the student's
other scores?

With the variance components held fixed, a student's scores (after removing
the annual means and classroom contributions) have covariance
R = nu^2 * ones + diag(sigma_t^2) over the observed years.  The diagonal of
R^{-1} is the leverage weight of each score: students observed in more years
pin down their own latent effect better, so each of their scores carries
more independent information about the classrooms involved.

Run as:  python3 demos/leverage_weights.py
"""

import numpy as np

from seqvam import (ALL_PATTERNS, VarianceProfile, average_weights_by_count,
                    leverage_weights)

# variance components roughly in the range seen on real low-stakes test
# panels (scores standardized to mean 0 / SD 1 in year 1)
NU = 0.71
SIGMA = (0.58, 0.47, 0.45, 0.37, 0.37)

profile = VarianceProfile(nu2=NU ** 2, sigma2=tuple(s ** 2 for s in SIGMA))

print("Per-pattern leverage weights (year: weight)")
print("-" * 60)
for pattern in ALL_PATTERNS:
    if pattern.n_observed not in (1, 3, 5):
        continue
    w = leverage_weights(pattern, profile.nu2, profile.sigma2)
    desc = ", ".join(f"y{t}={v:.2f}" for t, v in sorted(w.items()))
    print(f"  {pattern.flags}  n={pattern.n_observed}  {desc}")

print()
print("Average weight by number of observed scores")
print("-" * 60)
avg = average_weights_by_count(profile.nu2, profile.sigma2)
for n, w in enumerate(avg, start=1):
    bar = "#" * int(round(10 * w))
    print(f"  n={n}  {w:5.2f}  {bar}")

print()
print("A score from a 5-year student carries about "
      f"{avg[4] / avg[0]:.1f}x the weight of a single isolated score.")
print("Classrooms serving transient populations therefore have noisier")
print("effect estimates, and any systematic difference between complete and")
print("incomplete students lands hardest on those classrooms.")

# sanity: the n=1 weight is just 1 / (nu^2 + sigma_t^2), averaged over years
check = np.mean([1.0 / (NU ** 2 + s ** 2) for s in SIGMA])
assert abs(avg[0] - check) < 1e-12
