"""
Rate functional and small-noise probabilities
=============================================

The probability that the endpoint of the stochastic equation lands in a
ball decays like exp(-I / eps^2), with I the least action of a control
steering the skeleton into the ball.  We compute I by penalty
continuation with an adjoint gradient, compare with the exact Gramian
value on a linear model and estimate the probabilities by importance
sampling along the optimal control.
"""

import numpy as np

from monoldp import (EndpointBall, RateProblem, TimeGrid, default_initial_state, ldp_scaling_experiment,
                     linear_model, minimize_rate, rate_closed_form_linear, solve_skeleton)

model = linear_model()
x0 = default_initial_state(model.basis)
grid = TimeGrid(1.0, 500)

# target: a ball 0.4 beyond the free endpoint along the first mode
free = solve_skeleton(model, x0, None, grid).final
center = free.copy()
center[0] += 0.4
event = EndpointBall(center, 0.1)

sol = minimize_rate(RateProblem(model, x0, event, grid))
nearest = center.copy()
nearest[0] -= 0.1
exact = rate_closed_form_linear(model, x0, nearest, grid)
print("I from optimizer %.4f, exact minimum energy %.4f" % (sol.I_value, exact))
print("continuation history:", [(h["weight"], h["iterations"]) for h in sol.history])

# eps^2 log P should approach -I as eps -> 0
est = ldp_scaling_experiment(model, event, [0.5, 0.3, 0.2, 0.1], 4000, seed=0, x0=x0, grid=grid,
                             rate=sol)
for row in est.rows():
    print("eps = %.2f  log P = %8.3f  eps^2 log P = %.4f  ess = %.0f"
          % (row["eps"], row["log_p_hat"], row["eps2_logp"], row["ess"]))
print("affine intercept %.4f against -I = %.4f" % (est.intercept, -exact))
