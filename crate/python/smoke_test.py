"""Smoke test for the swarm_mesh_py extension.

Build the module first (see README), then run:

    python3 python/smoke_test.py
"""

import json
import math
import sys
import tempfile

import swarm_mesh_py as sm


def check(cond, what):
    if not cond:
        sys.exit(f"FAIL: {what}")
    print(f"ok  {what}")


def main():
    pol = sm.Policy.random(7)
    check(pol.latent_dim == 16, "random policy has 16-d latents")

    pos = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.5], [4.0, 4.0]]
    vel = [[0.1, 0.0], [0.0, 0.2], [-0.1, 0.0], [0.0, 0.0]]
    goals = [[1.0, 1.0], [-1.0, 0.5], [0.5, -1.0], [3.0, 3.0]]
    obs = [sm.build_observation(p, v, g) for p, v, g in zip(pos, vel, goals)]
    check(obs[0] == [0.0, 0.0, 1.0, 1.0, 0.1, 0.0], "observation layout [p, goal - p, p + v]")

    nbrs = sm.neighborhood(pos)
    check(nbrs == [[1, 2], [0, 2], [0, 1], []], "2 m fixed-radius neighbourhood")

    central = pol.evaluate_centralized(obs, pos)
    latents = [pol.encode(z) for z in obs]
    worst = 0.0
    for i, heard in enumerate(nbrs):
        msgs = [(j, 0.0, latents[j]) for j in heard]
        action, own = pol.evaluate_local(i, obs[i], msgs)
        check(own == latents[i], f"agent {i} publishes its own latent")
        worst = max(worst, max(abs(a - b) for a, b in zip(action, central[i])))
    check(worst <= 1e-9, f"local decisions equal the centralized ones (max diff {worst:.1e})")

    p, v, a = sm.step_dynamics([0.0, 0.0], [0.0, 0.0], [5.0, 0.0])
    check(abs(math.hypot(*v) - 0.1) < 1e-12, "acceleration limit caps the first step at 0.1 m/s")
    check(sm.hits_geometry([0.0, 2.0]) and not sm.hits_geometry([0.0, 0.0]), "wall blocks outside the passage")

    check(abs(sm.delivery_prob(0.3, 1) - 0.91) < 1e-12, "delivery probability 1 - p^(L+1)")
    check(sm.fanout_count(False, 4) == 4 and sm.fanout_count(True, 4) == 1, "unicast fans out, multicast does not")

    bench = json.loads(sm.netbench("adhoc-multicast-r1", 60.0, messages=5000, seed=1))
    check(bench["messages"] == 5000 and 0.7 < bench["delivered_fraction"] <= 1.0, "emulated netbench runs")

    ref = sm.Policy.reference()
    scen = sm.shuffle_scenario(4, 2.0, 2, 5)
    trace = sm.run_episode("offboard", scen, ref, seed=3)
    check(trace.status in ("all_at_goal", "timed_out", "collision_flagged"), f"episode ran: {trace!r}")
    check(len(trace.positions()) == trace.num_ticks, "positions per tick")
    check(len(trace.dmin_dorigin()) == trace.num_ticks, "d_min per tick")

    plan = {"k": 1, "e": 2, "seed": 3, "scenario": {"shuffle": {"n": 4, "extent": 2.0, "seed": 5}}, "mode": "offboard"}
    with tempfile.TemporaryDirectory() as out:
        traces = sm.run_experiment(json.dumps(plan), out)
        check(len(traces) == 2 and traces[1].starts == traces[0].goals, "experiment chains starts onto goals")
        again = sm.load_traces(out)
        check([t.to_ndjson() for t in again] == [t.to_ndjson() for t in traces], "trace files round-trip")
    summary = json.loads(sm.summarize("smoke", traces))
    check(summary["episodes"] == 2, f"summary: success {summary['success_rate']:.2f}")

    try:
        sm.run_episode("centralized:adhoc-multicast-r1", scen, ref)
    except ValueError:
        check(True, "invalid mode/preset pairing raises ValueError")
    else:
        check(False, "invalid mode/preset pairing raises ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
