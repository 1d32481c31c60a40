"""
Laplace principle and the variational formula
=============================================

The Laplace principle states that eps^2 log E exp(-h(X_T)/eps^2) tends to
-inf_u {h(z_T(u)) + 1/2 int ||u||^2}.  The variational formula
-log E exp(-h(W)) = inf_v E[h(W + int v) + 1/2 int ||v||^2] runs over
adapted controls; restricting to deterministic controls gives an upper
bound that is strict even for a quadratic h.
"""

import math

from monoldp import (CappedQuadratic, TimeGrid, WIENER_CATALOG, default_initial_state,
                     feedback_control_estimate, laplace_check, linear_model, riccati_feedback_value,
                     solve_skeleton, variational_representation_check)

model = linear_model()
x0 = default_initial_state(model.basis)
grid = TimeGrid(1.0, 500)
center = solve_skeleton(model, x0, None, grid).final.copy()
center[0] += 0.4
h = CappedQuadratic(1.0, center, 1.0)
out = laplace_check(model, h, [0.3, 0.1], 4000, seed=1, x0=x0, grid=grid)
for e, lhs in zip(out["eps"], out["lhs"]):
    print("eps = %.2f  eps^2 log E exp(-h/eps^2) = %.4f" % (e, lhs))
print("variational value -inf{h + I} = %.4f" % out["rhs"])

# h = 1/2 W(1)^2: exact value 1/2 log 2, deterministic controls only reach 1/2
g = TimeGrid(1.0, 100)
rep = variational_representation_check(1, WIENER_CATALOG["half_square"](g, 1), 50000, g, seed=2)
print("-log E exp(-W(1)^2/2) = %.4f (1/2 log 2 = %.4f)" % (rep["lhs"], 0.5 * math.log(2)))
print("best deterministic control: %.4f" % rep["rhs"])
fb = feedback_control_estimate(1, 20000, TimeGrid(1.0, 200), seed=3)
print("Riccati feedback u = -X/(1 + T - t): %.4f +- %.4f (exact %.4f)"
      % (fb["mean"], fb["se"], riccati_feedback_value()))
