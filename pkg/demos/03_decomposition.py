"""
A low-complexity policy from a randomized base policy
=====================================================

A state-independent randomized policy makes the queues evolve independently,
so its value function is a sum of one-dimensional pieces, one per queue. One
step of policy improvement against that sum gives a deterministic policy
without solving the full MDP; its cost is bounded by the base policy's.
"""

# %%
from hetcast import (
    GreedyPolicy,
    NetworkConfig,
    PerUserIRM,
    RandomizedBasePolicy,
    build_kernel,
    pia,
    policy_evaluation,
    ssa,
    zipf_popularity,
)

popularity = zipf_popularity(3, 0.75)
config = NetworkConfig.uniform((2, 2), 3, [{1}], mbs_power=4, sbs_power=2, cap=4, weight=1.0)
model = PerUserIRM(tuple(popularity))
kernel = build_kernel(config, model)

# %%
# The base policy: MBS or SBS tier with probability 1/2 each, an operating
# station idles with probability 0.3 and otherwise picks a cached content in
# proportion to its popularity.
base = RandomizedBasePolicy.from_popularity(config, popularity, p_mbs=0.5, p_idle=0.3)
result = ssa(config, model, base, space=kernel.space)
for q, v in sorted(result.values.items()):
    print(f"queue {q}: theta = {v.theta:.4f}")
print(f"base policy cost (sum): {result.theta_base:.4f}")

# %%
# Exact average costs of the four policies on this instance.
greedy = GreedyPolicy(config).table(kernel.space)
costs = {
    "optimal": pia(config, model, kernel=kernel).theta,
    "suboptimal": policy_evaluation(config, model, result.policy, kernel=kernel)[0],
    "greedy": policy_evaluation(config, model, greedy, kernel=kernel)[0],
    "base": result.theta_base,
}
for name, theta in costs.items():
    print(f"{name:10s} {theta:8.4f}")
print(f"suboptimal minimizations skipped: {result.skips}/{result.decisions}")
