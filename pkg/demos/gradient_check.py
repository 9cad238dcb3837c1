"""Finite-difference check of every parameter matrix in both model modes."""

from adaptive_nmt.cli import run_gradcheck

for mode, errors in run_gradcheck(step=1e-3, seed=0).items():
    worst = max(errors, key=errors.get)
    print(f"{mode}: {len(errors)} parameter matrices, worst relative error {errors[worst]:.2e} ({worst})")
    for name, err in sorted(errors.items()):
        print(f"    {name:<18} {err:.2e}")
