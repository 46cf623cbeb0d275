"""The simulated arm: kinematics, projection, logs, and the learned
hand-to-joint mapping compared against the brute-force IK oracle.

Run:  python demos/04_arm_and_manipulation.py
"""

import numpy as np

from handcast import manip as mp
from handcast import synthworld as sw
from handcast import training as tr
from handcast.types import HandPoint, JointState

arm, cam = sw.default_arm(), sw.default_camera()

print("== Forward kinematics and projection ==")
home = sw.arm_fk(arm, JointState(np.zeros(7)))
print(f"  home position (all-zero joints): {np.round(home, 3)} m")
print(f"  projects to {sw.project_to_image(home, cam)}")

print("\n== Robot logs: hand position paired with joints at every tick ==")
logs = sw.generate_robot_logs(arm, cam, n_sequences=50, seed=7)
rec = logs[0][100]
print(f"  log 0, t=100: hand=({rec.hand.u:.1f},{rec.hand.v:.1f}) "
      f"joints={np.round(rec.joints.angles, 2)}")

print("\n== Train the manipulation network on 40 logs ==")
config = tr.TrainConfig(stage="manip", seed=0, epochs=200, batch_size=64,
                        learning_rate=2e-3, delta=30)
net, report = tr.train_manipulation(config, logs[:40], arm)
print(f"  final loss {report.final_loss:.6f} rad^2")

print("\n== Held-out fidelity: does the predicted pose reach the target? ==")
tuples = tr.log_tuples(logs[40:], 30)
errors = []
for z_t, y_t, y_fut, _ in tuples[::10]:
    predicted = mp.predict_joints(net, JointState(z_t), HandPoint(*y_t), HandPoint(*y_fut))
    landed = sw.project_to_image(sw.arm_fk(arm, predicted), cam)
    errors.append(landed.distance(HandPoint(*y_fut)))
print(f"  median pixel error {np.median(errors):.1f} px over {len(errors)} tuples "
      f"(frame diagonal is {np.hypot(1280, 720):.0f} px)")

print("\n== The IK oracle on the same job ==")
z_t, y_t, y_fut, _ = tuples[5]
solution = sw.ik_oracle(arm, cam, HandPoint(*y_fut), JointState(z_t))
print(f"  oracle error {solution.pixel_error:.2e} px, reachable={solution.reachable}")
net_pred = mp.predict_joints(net, JointState(z_t), HandPoint(*y_t), HandPoint(*y_fut))
net_err = sw.project_to_image(sw.arm_fk(arm, net_pred), cam).distance(HandPoint(*y_fut))
print(f"  network error {net_err:.1f} px on the same tuple")
