"""
Controlled skeleton equation and its Yosida approximation
=========================================================

The skeleton equation replaces the noise by a deterministic control u.
Here we solve it on the default stochastic heat model, compare it with
the Yosida-regularized equation and watch it respond to weakly
converging oscillatory controls.
"""

import numpy as np

from monoldp import (ControlPath, TimeGrid, apriori_bound, default_initial_state, heat_model,
                     oscillating_controls, solve_skeleton, solve_skeleton_yosida)

# heat model on 32 sine modes with a saturated double-well drift
model = heat_model()
x0 = default_initial_state(model.basis)
grid = TimeGrid(1.0, 1000)
u = ControlPath.constant(grid, 1.0)

z = solve_skeleton(model, x0, u)
print("endpoint coefficients:", np.round(z.final[:4], 4))
print("sup ||z||^2 = %.4f, a priori ceiling = %.4f" % (z.sup_norm() ** 2, apriori_bound(model, u, x0)))

# the field itself on a few points of the unit interval
x = np.linspace(0, 1, 6)
print("z(T, x) =", np.round(model.basis.evaluate(z.final, x), 4))

# Yosida approximations A_k = k A (k - A)^{-1} converge as k grows
for k in (10, 1e2, 1e3, 1e4):
    zk = solve_skeleton_yosida(model, k, x0, u)
    print("k = %-7g  sup distance = %.3g" % (k, zk.sup_distance(z)))

# oscillating controls u0 + sin(n pi t) converge weakly, not strongly, to u0;
# the solution map still sends them to z(u0)
ns = [1, 4, 16, 64]
for n, un in zip(ns, oscillating_controls(u, 1.0, ns)):
    print("n = %-3d  ||u_n - u0|| = %.3f  sup distance = %.4f"
          % (n, un.l2_distance(u), solve_skeleton(model, x0, un).sup_distance(z)))
