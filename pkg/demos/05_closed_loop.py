"""Closed-loop execution: render, predict the future hand location, move the
arm there, repeat. Compares the oracle pipeline (ground-truth future + IK)
with an untrained negative control.

The fully trained run needs the complete training recipe; use the CLI for
that (`handcast train --stage all` then `handcast demo`). This demo keeps to
the two ends of the spectrum so it finishes quickly.

Run:  python demos/05_closed_loop.py
"""

from handcast import detector as det
from handcast import evaluation as ev
from handcast import manip as mp
from handcast import synthworld as sw
from handcast.regressor import build_regressor, desk_regressor_config

arm, cam = sw.default_arm(), sw.default_camera()
net = det.build_hand_net(det.desk_config(), seed=0)
reg = build_regressor(desk_regressor_config(k=10), net.config.bottleneck_shape, seed=0)
manip_net = mp.build_manip_net(mp.ManipConfig(), arm, seed=0)

print("== Scenario: constant-speed goal trajectory inside the reachable region ==")
scenario = ev.make_demo_scenario(arm, cam, seed=123, k=10)
print(f"  duration {scenario.duration} frames, start {tuple(round(v, 2) for v in scenario.start_uv)}")

print("\n== Oracle pipeline (truth future + IK oracle): harness validity ==")
report = ev.ClosedLoopReport()
for i in range(5):
    scen = ev.make_demo_scenario(arm, cam, seed=sw.splitmix64(123, i), k=10)
    report.entries.append(ev.closed_loop_episode(net, reg, None, scen, arm, cam, oracle=True))
print(f"  success rate {report.success_rate:.2f}, "
      f"errors {[round(e.mean_error_px, 1) for e in report.entries]} px")

print("\n== Untrained pipeline: negative control ==")
report = ev.ClosedLoopReport()
for i in range(5):
    scen = ev.make_demo_scenario(arm, cam, seed=sw.splitmix64(123, i), k=10)
    report.entries.append(ev.closed_loop_episode(net, reg, manip_net, scen, arm, cam))
print(f"  success rate {report.success_rate:.2f}, "
      f"errors {[round(e.mean_error_px, 1) for e in report.entries]} px")
print("\nA trained pipeline tracks the goal: see `handcast demo` after training.")
