import json

import numpy as np
import pytest

from graspformer.checkpoint import load_checkpoint
from graspformer.config import TrainRunConfig
from graspformer.model import as_parameters, forward, init_params
from graspformer.objective import batch_loss
from graspformer.scenes import write_dataset
from graspformer.tensor import grad
from graspformer.training import (STEP_KEY, DatasetError, Record, batch_order, item_loss_and_grad, load_dataset,
                                  restore, train, train_step)
from graspformer.optim import AdamState


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    write_dataset(out, 3, 0, "packed")
    return out


@pytest.fixture(scope="module")
def records(toy_data):
    return load_dataset(toy_data)[0]


class TestDataset:
    def test_loads_all(self, records):
        assert len(records) == 3 and records[0].values.shape == (16, 16, 16)

    def test_corrupt_records_skipped(self, toy_data, tmp_path):
        for f in toy_data.iterdir():
            (tmp_path / f.name).write_bytes(f.read_bytes())
        (tmp_path / "scene_00001.tsdf").write_bytes(b"garbage")
        (tmp_path / "scene_00002.labels").write_text("1 2\n")
        records, skipped = load_dataset(tmp_path)
        assert [r.name for r in records] == ["scene_00000"] and skipped == 2

    def test_all_corrupt_aborts(self, tmp_path):
        (tmp_path / "a.tsdf").write_bytes(b"junk")
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

    def test_resolution_mismatch_skipped(self, toy_data):
        with pytest.raises(DatasetError):
            load_dataset(toy_data, n=8)


class TestBatchOrder:
    def test_epoch_is_permutation(self):
        seen = np.concatenate([batch_order(10, 4, 0, s) for s in range(3)])
        assert sorted(seen.tolist()) == list(range(10))

    def test_deterministic_and_seeded(self):
        assert batch_order(10, 4, 1, 5).tolist() == batch_order(10, 4, 1, 5).tolist()
        assert any(batch_order(10, 4, 1, s).tolist() != batch_order(10, 4, 2, s).tolist() for s in range(3))


class TestTrainStep:
    def test_threaded_equals_serial(self, records, toy):
        from concurrent.futures import ThreadPoolExecutor
        params = init_params(toy, 0)
        state = AdamState.for_params(params, lr=1e-3)
        serial = train_step(records, toy, params, state)
        with ThreadPoolExecutor(2) as pool:
            threaded = train_step(records, toy, params, state, pool)
        assert serial[0] == threaded[0]
        assert all(serial[1][k].tobytes() == threaded[1][k].tobytes() for k in params)

    def test_item_gradient_matches_direct(self, records, toy):
        params = init_params(toy, 0)
        loss, grads = item_loss_and_grad(records[0].values, records[0].labels, toy, params)
        tensors = as_parameters(params)
        direct = batch_loss(forward(records[0].values, toy, tensors), records[0].labels)
        assert loss == float(direct.data)
        np.testing.assert_array_equal(grads["head.q.b"], grad(direct, [tensors["head.q.b"]])[0])


class TestTrain:
    def test_zero_lr_keeps_params(self, records, toy):
        result = train(None, toy, TrainRunConfig(steps=1, lr=0.0), records=records)
        init = init_params(toy, 0)
        assert len(result.losses) == 1 and np.isfinite(result.losses[0])
        assert all(result.params[k].tobytes() == init[k].tobytes() for k in init)

    def test_outputs(self, toy_data, toy, tmp_path):
        run = TrainRunConfig(steps=3, lr=1e-3, ckpt_every=2)
        train(toy_data, toy, run, out_dir=tmp_path)
        lines = [json.loads(l) for l in (tmp_path / "loss.jsonl").read_text().splitlines()]
        assert [l["step"] for l in lines] == [1, 2, 3]
        assert (tmp_path / "step_000002.gfck").exists()
        ckpt = load_checkpoint(tmp_path / "last.gfck")
        assert ckpt[STEP_KEY][0] == 3
        cfg, params, state = restore(tmp_path / "last.gfck", lr=1e-3)
        assert cfg == toy and state.step == 3 and set(state.m) == set(params)

    def test_resume_matches_unbroken(self, toy_data, toy, tmp_path):
        run = TrainRunConfig(steps=4, lr=1e-3, ckpt_every=2, batch_size=2)
        full = train(toy_data, toy, run, out_dir=tmp_path / "full")
        resumed = train(toy_data, toy, run, out_dir=tmp_path / "resumed",
                        resume=tmp_path / "full" / "step_000002.gfck")
        assert resumed.losses == full.losses[2:]
        assert (tmp_path / "full" / "last.gfck").read_bytes() == (tmp_path / "resumed" / "last.gfck").read_bytes()

    def test_resume_config_mismatch(self, toy_data, toy, tiny, tmp_path):
        train(toy_data, toy, TrainRunConfig(steps=1), out_dir=tmp_path)
        with pytest.raises(ValueError):
            train(toy_data, tiny, TrainRunConfig(steps=2), resume=tmp_path / "last.gfck",
                  records=[Record("x", np.ones((8, 8, 8), np.float32), [])])
