"""Confidence regularization on a finite world, solved two ways.

Brute-force descent over probability tables is compared with the closed-form
minimizer for a range of regularization weights. At lambda* the minimizer
coincides with the clean label law.

Run: python demos/03_closed_form_limit.py
"""
import numpy as np

from flywheel.nonparam import closed_form_check, default_world, lambda_star

world = default_world(seed=0)
lam_star = lambda_star(world)
print(f"{world.num_x} inputs, {world.K} classes, clean share {world.gamma_prime}, "
      f"lambda* = {lam_star:.3f}")
lams = np.linspace(0, lam_star, 7)
print(f"{'lambda':>7} {'brute force':>12} {'closed form':>12} {'TV(bf,cf)':>10} {'TV(cf,clean)':>12}")
for row in closed_form_check(world, lams):
    print(f"{row['lambda']:7.3f} {row['bf_loss']:12.6f} {row['cf_loss']:12.6f} "
          f"{row['tv_bf_cf']:10.1e} {row['tv_cf_pi']:12.1e}")

# With no regularization the optimum is the noisy label law itself; the
# distance to the clean law shrinks steadily and vanishes at lambda*.
