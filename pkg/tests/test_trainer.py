import json

import numpy as np
import pytest

from tcmp.errors import DivergedTrainingError, InvalidInputError
from tcmp.geometry import BoundingBox, ImageGeometry
from tcmp.net import NetConfig, TcmpModel, predict_batch, save_model
from tcmp.trainer import (
    TrainConfig,
    WindowDataset,
    evaluate_loss,
    evaluate_prediction,
    SCALE_FLOOR,
    extract_windows,
    fit_scaler,
    train,
)

G = ImageGeometry(640, 480)
SMALL = NetConfig(channels=8, num_blocks=1, layers_per_block=2)


def line(n, step=(2.0, 0.0), start=(50.0, 60.0)):
    return np.array([[start[0] + step[0] * t, start[1] + step[1] * t, 30.0, 60.0] for t in range(n)])


def test_extract_windows_counts():
    ds = extract_windows([(line(2), G)])
    assert len(ds) == 1
    s = ds[0]
    assert len(s.window) == 1
    np.testing.assert_allclose(s.target, (line(2)[1] - line(2)[0]) / G.scale)
    ds = extract_windows([(line(20), G)], max_context=16)
    assert len(ds) == 19
    assert [len(s.window) for s in ds.samples] == [min(t, 16) for t in range(1, 20)]
    assert len(extract_windows([(line(1), G)])) == 0


def test_extract_windows_enumeration_oracle():
    boxes = np.cumsum(np.random.default_rng(0).normal(size=(12, 4)), axis=0) + [100, 100, 40, 80]
    ds = extract_windows([(boxes, G)], max_context=4)
    nb = boxes / G.scale
    for t, s in enumerate(ds.samples):
        lo = max(0, t + 1 - 4)
        np.testing.assert_allclose(s.window.boxes, nb[lo : t + 1])
        np.testing.assert_allclose(s.target, nb[t + 1] - nb[t])
        assert s.window.is_consistent()
        # the oldest entry keeps the motion into it when a predecessor exists
        if lo > 0:
            np.testing.assert_allclose(s.window.motions[0], nb[lo] - nb[lo - 1])


def test_constant_trajectory_targets_zero_and_box_input():
    still = [BoundingBox(5, 5, 10, 10)] * 6
    ds = extract_windows([(still, G)])
    assert all(not s.target.any() for s in ds.samples)


def test_split_holds_out_whole_trajectories():
    ds = extract_windows([(line(10, start=(10.0 * i, 50.0)), G) for i in range(10)])
    tr, va = ds.split(0.2, seed=1)
    assert len(tr) + len(va) == len(ds)
    assert not ({s.seq_id for s in tr.samples} & {s.seq_id for s in va.samples})
    assert len({s.seq_id for s in va.samples}) == 2


def test_zero_epochs_leave_parameters(tmp_path):
    model = TcmpModel(SMALL, seed=2)
    before = model.state_dict()
    rep = train(model, extract_windows([(line(30), G)]), TrainConfig(epochs=0), tmp_path / "m.ckpt")
    assert rep.train_loss == [] and rep.checkpoint
    assert all(np.array_equal(before[n], p.data) for n, p in model.params.items())
    save_model(TcmpModel(SMALL, seed=2), tmp_path / "init.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "init.ckpt").read_bytes()


def test_training_is_deterministic(tmp_path):
    ds = extract_windows([(line(40, step=(1.0, 0.5)), G), (line(40, step=(-2.0, 1.0), start=(400.0, 50.0)), G)])
    cfg = TrainConfig(epochs=2, batch_size=16, val_fraction=0.5)
    reports = []
    for name in ("a", "b"):
        reports.append(train(TcmpModel(SMALL, seed=0), ds, cfg, tmp_path / f"{name}.ckpt"))
    assert reports[0].train_loss == reports[1].train_loss
    assert reports[0].val_loss == reports[1].val_loss
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert all(np.isfinite(reports[0].alpha))


def test_fit_scaler_statistics():
    ds = extract_windows([(line(40, step=(3.0, 0.0)), G), (line(40, step=(-1.0, 0.0), start=(400.0, 50.0)), G)])
    model = TcmpModel(SMALL)
    fit_scaler(model, ds, TrainConfig(noise_std=0.0))
    rows = np.concatenate([s.window.data for s in ds.samples])
    np.testing.assert_allclose(model.params["scaler.in_shift"].data, rows.mean(axis=0), rtol=1e-6)
    out = model.params["scaler.out_scale"].data
    # x moves by 3 or 1 px per frame in equal shares; y, w and h never move
    assert out[0] == pytest.approx(np.sqrt((9 + 1) / 2) / 640, rel=1e-6)
    assert np.allclose(out[1:], SCALE_FLOOR)
    assert np.all(model.params["scaler.in_scale"].data >= SCALE_FLOOR * (1 - 1e-6))


def test_training_fits_scaler_unless_disabled():
    ds = extract_windows([(line(30), G)])
    fitted, plain = TcmpModel(SMALL), TcmpModel(SMALL)
    train(fitted, ds, TrainConfig(epochs=1, val_fraction=0.0))
    train(plain, ds, TrainConfig(epochs=1, val_fraction=0.0, standardize=False))
    assert not np.all(fitted.params["scaler.in_shift"].data == 0)
    assert np.all(plain.params["scaler.in_shift"].data == 0)


def test_validation_loss_is_repeatable():
    ds = extract_windows([(line(25), G)])
    model = TcmpModel(SMALL)
    assert evaluate_loss(model, ds) == evaluate_loss(model, ds)
    with pytest.raises(InvalidInputError):
        evaluate_loss(model, WindowDataset())


def test_nan_loss_raises_diverged(monkeypatch):
    import tcmp.trainer as T

    model = TcmpModel(SMALL)
    ds = extract_windows([(line(30), G)])

    def bad_loss(*a, **k):
        from tcmp import ndcompute as nd

        return nd.Tensor(np.array(np.nan))

    monkeypatch.setattr(T, "model_loss", bad_loss)
    with pytest.raises(DivergedTrainingError) as err:
        train(model, ds, TrainConfig(epochs=1, batch_size=8, val_fraction=0))
    assert err.value.batch_index == 0


def test_evaluate_prediction_oracles():
    ds = extract_windows([(line(15, step=(2.0, 0.0)), G)])
    truth = lambda ws: np.array([s.target for s in ds.samples])
    perfect = evaluate_prediction(truth, ds)
    assert perfect["ade_center"] == pytest.approx(0.0, abs=1e-9) and perfect["box_iou_mean"] == pytest.approx(1.0)
    zero = lambda ws: np.zeros((len(ws), 4))
    assert evaluate_prediction(zero, ds)["ade_center"] == pytest.approx(2.0)
    assert evaluate_prediction(zero, ds)["rmse"]["x"] == pytest.approx(2.0)
    still = extract_windows([(line(15, step=(0.0, 0.0)), G)])
    assert evaluate_prediction(zero, still)["ade_center"] == 0.0
    # a model is accepted directly
    assert np.isfinite(evaluate_prediction(TcmpModel(SMALL), ds)["ade_center"])


def test_config_json_round_trip(tmp_path):
    cfg = TrainConfig(epochs=3, batch_size=64, noise_std=0.0)
    cfg.to_json(tmp_path / "c.json")
    assert TrainConfig.from_json(tmp_path / "c.json") == cfg
    (tmp_path / "bad.json").write_text(json.dumps({"epochz": 1}))
    with pytest.raises(InvalidInputError):
        TrainConfig.from_json(tmp_path / "bad.json")
    with pytest.raises(InvalidInputError):
        TrainConfig(batch_size=0)


@pytest.mark.slow
def test_constant_velocity_delta_within_ten_percent():
    step = np.array([8.0, 4.0, 0.0, 0.0])
    ds = extract_windows([(line(61, step=(8.0, 4.0), start=(50.0, 100.0)), G)])
    model = TcmpModel(NetConfig(dropout_p=0.0), seed=0)
    train(model, ds, TrainConfig(epochs=100, batch_size=8, noise_std=0.0, val_fraction=0.0))
    pred = predict_batch(model, [s.window for s in ds.samples]) * G.scale
    rel = np.linalg.norm(pred - step, axis=1) / np.linalg.norm(step)
    assert rel.max() <= 0.1
