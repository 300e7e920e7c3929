"""
Numerical verification of the analytical envelopes
==================================================

Every inequality the package relies on is checked over a fixed manifest of
small specs: exact-constant bounds with 1e-10 slack, asymptotic bounds via
fitted constants that must stay under their thresholds.  Reports are
deterministic, so this table is reproducible byte for byte.
"""

from absdiff import run_all_checks
from absdiff.bound_verifier import default_manifest, render_table

manifest = default_manifest()
print(f"manifest: {len(manifest)} specs")
for name, spec in manifest[:6]:
    print(f"  {name:18s} S={spec.S} d={spec.d} mask={spec.mask}")
print("  ...")

reports = run_all_checks(manifest)
print()
print(render_table(reports))
