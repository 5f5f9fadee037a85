"""Ground energies of the planar corner and cross, then the 3-D trial certificates.

Run: python demos/spectra.py   (about 10 s)
"""

import math

from fichera.eigensolver import ladder
from fichera.geometry import DomainSpec
from fichera.variational import corner_certificate_scan, cross_certificate

PI2_4 = math.pi**2 / 4

corner, ext_corner = ladder(DomainSpec.corner(2, 8), [8, 16, 32])
cross, ext_cross = ladder(DomainSpec.cross(2, 8), [8, 16, 32])

for name, results, ext in (("corner", corner, ext_corner), ("cross", cross, ext_cross)):
    print(f"{name} n=2")
    for r in results:
        print(f"  m={r.grid.m:3d}  lambda_h={r.lam:.6f}")
    print(
        f"  extrapolated {ext.value:.5f} +- {ext.error_estimate:.1e} (order {ext.observed_order:.2f}),"
        f" {ext.value / PI2_4:.4f} * pi^2/4"
    )

scan = corner_certificate_scan(corner[-1], ext_corner.value, coarse=corner[-2])
print("\ncorner n=3 trial form I(beta)")
for c in scan.certificates:
    print(f"  beta={c.beta:<5} I={c.form_value:+.4f}  budget={c.error_budget:.4f}  pass={c.passed}")

cert = cross_certificate(cross[-1], R=4, beta=0.05, coarse=cross[-2])
print(
    f"\ncross n=3: J_R={cert.details['J_R']:.5f} < lambda_Q={cert.details['lambda_Q']:.5f}"
    f"  form={cert.form_value:+.4f}  pass={cert.passed}"
)
