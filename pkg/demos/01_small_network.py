"""
A small cache-enabled network, solved exactly
=============================================

One macro base station (MBS), one small base station (SBS) that caches
content 1, two contents and two users in each region. Every (base station,
content) pair has a request queue; a slot's action picks at most one
content per station, and the MBS and SBSs never transmit in the same slot.
"""

# %%
# Build the network. Queue (n, m) holds the requests for content m waiting
# at base station n; each is capped at 3 pending requests.

from hetcast import NetworkConfig, PerUserIRM, pia, verify_structure

config = NetworkConfig.uniform((2, 2), 2, [{1}], mbs_power=4, sbs_power=2, cap=3, weight=1.0)
model = PerUserIRM((0.6, 0.4))
print("queues:", config.queues)
print("actions (content per station, 0 = idle):", config.actions)

# %%
# Policy iteration from the all-idle policy. theta is the optimal
# long-run average of (delay + weight * power) per slot.
result = pia(config, model)
print(f"theta = {result.theta:.4f} after {result.iterations} iterations")

# %%
# The policy table. With light queues it stays idle; as requests pile up
# the SBS serves its cached content and the MBS takes over the rest.
for state, action in result.policy.rows():
    if sum(state) <= 3:
        print(state, "->", action)

# %%
# The optimal value is non-decreasing in every queue, and the policy has a
# threshold structure: once an action serves a queue, it keeps being chosen
# as that queue grows.
report = verify_structure(config, model, result.value, result.policy)
for name in ("monotone_value", "delta_monotone", "persistence", "idle_region", "mbs_threshold"):
    print(f"{name:15s} ok={getattr(report, name).ok}")
print(f"idle in {len(report.idle_states)} of {result.policy.space.size} states")
