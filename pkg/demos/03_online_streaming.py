"""
Online estimator: one pass, sliding window, growing neighbor count
==================================================================

The streaming update touches each transition once. At step t it only trusts
steps inside [ceil(beta*t), t): earlier steps are evicted because their Q
values were computed from too little information. The window fraction beta
and the neighbor schedule k(t) come from the discount and dimension.
"""

import numpy as np

from knnq import (
    OnlineLearner,
    OnlineParams,
    box_env,
    load_checkpoint,
    sample_trajectory,
    save_checkpoint,
    schedule_beta,
    schedule_k_online,
    uniform_policy,
    warmup_threshold,
)

env = box_env(dim=1, sigma=0.25)
gamma = 0.8
T = 30_000
beta = schedule_beta(gamma, env.dim)
print(f"gamma={gamma} d={env.dim}: beta={beta:.4f}, k(t) at t=1e3/1e4/3e4: "
      f"{schedule_k_online(1000, beta, 1)}, {schedule_k_online(10_000, beta, 1)}, "
      f"{schedule_k_online(30_000, beta, 1)}")
print(f"warm-up horizon t_c = {warmup_threshold(T, beta, m=env.mixing_m, d=env.dim):.0f} "
      f"(no accuracy expected before it)")

traj = sample_trajectory(env, uniform_policy(2), T, env.initial_state,
                         np.random.default_rng(1))
params = OnlineParams.from_gamma(gamma, env.dim)
learner = OnlineLearner(params, num_actions=env.num_actions)

# stream and probe the estimate at a fixed query point as data accumulates
probe = np.array([0.5])
print("\n      t   watermark   q(0.5, 0)   q(0.5, 1)")
for i in range(T):
    learner.step(traj.states[i], int(traj.actions[i]), float(traj.rewards[i]),
                 traj.states[i + 1])
    if learner.t_now in (10, 100, 1000, 10_000, 30_000):
        q0, q1 = learner.query(probe, 0), learner.query(probe, 1)
        print(f"{learner.t_now:7d}   {learner.watermark:9d}   {q0:9.4f}   {q1:9.4f}")

print(f"\ndiagnostics: {learner.diagnostics}")

# checkpoints make streams resumable: same state, same answers
save_checkpoint(learner, "/tmp/demo_ck")
resumed = load_checkpoint("/tmp/demo_ck")
print(f"checkpoint round-trip: t_now={resumed.t_now}, "
      f"q match={resumed.query(probe, 0) == learner.query(probe, 0)}")
