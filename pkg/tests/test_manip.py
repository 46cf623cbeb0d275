import numpy as np
import pytest

from handcast import core
from handcast import manip as mp
from handcast import synthworld as sw
from handcast.types import DetectionSet, HandBox, HandClass, HandPoint, JointState


@pytest.fixture(scope="module")
def arm():
    return sw.default_arm()


class TestBuild:
    def test_paper_parameter_count(self, arm):
        net = mp.build_manip_net(mp.ManipConfig(), arm, seed=0)
        counts = (11 * 32 + 32) + (32 * 32 + 32) + (32 * 32 + 32) + \
                 (32 * 16 + 16) + (16 * 16 + 16) + (16 * 16 + 16) + (16 * 7 + 7)
        assert sum(p.data.size for p in net.parameters()) == counts

    def test_same_seed_identical(self, arm):
        a = mp.build_manip_net(mp.ManipConfig(), arm, seed=4)
        b = mp.build_manip_net(mp.ManipConfig(), arm, seed=4)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.data, pb.data)

    def test_output_dimension_is_seven(self, arm):
        net = mp.build_manip_net(mp.ManipConfig(), arm, seed=0)
        out = mp.predict_joints(net, JointState(np.zeros(7)), HandPoint(100, 100),
                                HandPoint(200, 200))
        assert out.angles.shape == (7,)

    def test_base_control_input_width(self, arm):
        cfg = mp.ManipConfig(base_control=True)
        assert cfg.input_width == 4
        net = mp.build_manip_net(cfg, arm, seed=0)
        assert net.layers[0].weights.data.shape == (32, 4)

    def test_last_layer_must_be_seven(self):
        with pytest.raises(ValueError, match="7"):
            mp.ManipConfig(hidden_units=(32, 32, 32, 16, 16, 16, 8))


class TestHandPointExtraction:
    def test_center_scaling_to_reference_resolution(self):
        det = DetectionSet(boxes=[HandBox(HandClass.MY_RIGHT, 0.5, 0.5, 0.2, 0.2, score=0.9)])
        p = mp.detections_to_hand_point(det, HandClass.MY_RIGHT, HandPoint(0, 0))
        assert (p.u, p.v) == (640.0, 360.0)

    def test_empty_returns_fallback(self):
        fallback = HandPoint(11.0, 22.0)
        p = mp.detections_to_hand_point(DetectionSet(), HandClass.MY_RIGHT, fallback)
        assert p is fallback

    def test_highest_score_wins(self):
        det = DetectionSet(boxes=[
            HandBox(HandClass.MY_RIGHT, 0.25, 0.25, 0.1, 0.1, score=0.9),
            HandBox(HandClass.MY_RIGHT, 0.75, 0.75, 0.1, 0.1, score=0.6),
        ])
        p = mp.detections_to_hand_point(det, HandClass.MY_RIGHT, HandPoint(0, 0))
        assert (p.u, p.v) == (0.25 * 1280, 0.25 * 720)

    def test_other_classes_ignored(self):
        det = DetectionSet(boxes=[HandBox(HandClass.YOUR_LEFT, 0.5, 0.5, 0.2, 0.2, score=1.0)])
        fallback = HandPoint(5.0, 6.0)
        assert mp.detections_to_hand_point(det, HandClass.MY_RIGHT, fallback) is fallback


class TestPredictJoints:
    def test_output_clamped_to_limits(self, arm):
        net = mp.build_manip_net(mp.ManipConfig(), arm, seed=0)
        # blow up the last layer so raw outputs exceed the limits
        net.layers[-1].bias.data[:] = 100.0
        out = mp.predict_joints(net, JointState(np.zeros(7)), HandPoint(0, 0),
                                HandPoint(5000.0, 5000.0))
        lim = arm.limits_array()
        assert np.all(out.angles >= lim[:, 0]) and np.all(out.angles <= lim[:, 1])

    def test_nonfinite_input_rejected(self, arm):
        net = mp.build_manip_net(mp.ManipConfig(), arm, seed=0)
        with pytest.raises(ValueError):
            HandPoint(float("nan"), 0.0)

    def test_normalization_layout(self, arm):
        net = mp.build_manip_net(mp.ManipConfig(), arm, seed=0)
        lim = arm.limits_array()
        row = net.normalize_inputs(lim[:, 1], np.array([1280.0, 720.0]), np.array([0.0, 0.0]))
        assert row.shape == (11,)
        assert np.allclose(row[:7], 1.0)          # joints at upper limits
        assert np.allclose(row[7:9], 1.0)         # full-frame pixel coords
        assert np.allclose(row[9:], 0.0)


class TestManipLoss:
    def _tuple(self, rng):
        return (rng.uniform(-1, 1, 7), rng.uniform(0, 1280, 2), rng.uniform(0, 720, 2),
                rng.uniform(-1, 1, 7))

    def test_perfect_prediction_zero(self, arm):
        net = mp.build_manip_net(mp.ManipConfig(), arm, seed=0)
        rng = np.random.default_rng(0)
        z_t, y_t, y_f, _ = self._tuple(rng)
        pred = mp.predict_joints(net, JointState(z_t), HandPoint(*y_t), HandPoint(*y_f))
        loss = mp.manip_loss(net, [(z_t, y_t, y_f, pred.angles)])
        assert float(loss.data) == pytest.approx(0.0, abs=1e-9)

    def test_matches_scalar_loop_oracle(self, arm):
        with core.use_float64():
            net = mp.build_manip_net(mp.ManipConfig(), arm, seed=1)
            rng = np.random.default_rng(2)
            batch = [self._tuple(rng) for _ in range(5)]
            loss = float(mp.manip_loss(net, batch).data)
            total = 0.0
            count = 0
            for z_t, y_t, y_f, z_f in batch:
                pred = net.forward(core.Tensor(net.normalize_inputs(z_t, y_t, y_f))).data
                for j in range(7):
                    total += (float(pred[j]) - z_f[j]) ** 2
                    count += 1
            assert loss == pytest.approx(total / count, rel=1e-9)

    def test_overfit_100_tuples(self, arm):
        from handcast import training as tr

        cam = sw.default_camera()
        logs = sw.generate_robot_logs(arm, cam, n_sequences=2, seed=5, n_frames=80)
        tuples = tr.log_tuples(logs, 30)[:100]
        net = mp.build_manip_net(mp.ManipConfig(), arm, seed=0)
        opt = core.Adam(lr=2e-3)
        loss_value = None
        for step in range(500):
            with core.Tape() as tape:
                loss = mp.manip_loss(net, tuples)
            loss_value = float(loss.data)
            tape.backward(loss)
            opt.step(net.parameters())
        assert loss_value < 1e-3

    def test_base_control_variant_trains(self, arm):
        net = mp.build_manip_net(mp.ManipConfig(base_control=True), arm, seed=0)
        rng = np.random.default_rng(3)
        batch = [self._tuple(rng) for _ in range(8)]
        opt = core.Adam(lr=1e-3)
        with core.Tape() as tape:
            loss = mp.manip_loss(net, batch)
        tape.backward(loss)
        opt.step(net.parameters())
        assert np.isfinite(float(loss.data))
