import numpy as np
import pytest
from pydantic import ValidationError

from structalign.config import AblationArm
from structalign.diffmath import Tensor
from structalign.exceptions import DataLeakError, FrozenParameterError, MissingSnapshotError
from structalign.harness import (
    Adam,
    ContinualLearner,
    PairSet,
    generate_task_stream,
    merge_stream,
    run_ablation,
    run_continual,
    run_sweep,
    snapshot,
    task_maps,
)


class TestTaskStream:
    def test_disjoint_categories(self, make_config):
        stream = generate_task_stream(make_config(k_tasks=5, cats_per_task=4, dims=(24, 24), shots=2, test_per_category=2))
        sets = [set(task.categories) for task in stream.tasks]
        assert sum(len(s) for s in sets) == 20
        assert set().union(*sets) == set(range(20))
        assert stream.seen_categories(2) == tuple(sorted(sets[0] | sets[1]))

    def test_single_task_holds_every_category(self, make_config):
        stream = generate_task_stream(make_config(k_tasks=1, cats_per_task=3))
        assert stream.k_tasks == 1
        assert stream.tasks[0].categories == (0, 1, 2)

    def test_split_sizes(self, small_stream):
        task = small_stream.tasks[0]
        assert len(task.train) == 2 * 4
        assert len(task.test) == 2 * 3
        assert task.train.texts.shape == (8, 3, 8)
        assert task.train.videos.shape == (8, 2, 8)

    def test_zero_noise_collapses_categories(self, make_config):
        stream = generate_task_stream(make_config(instance_noise=0.0, token_noise=0.0, frame_noise=0.0))
        train = stream.tasks[0].train
        for c in stream.tasks[0].categories:
            texts = train.texts[train.categories == c]
            np.testing.assert_array_equal(texts, np.broadcast_to(texts[0], texts.shape))

    def test_pair_ids_unique(self, small_stream):
        ids = np.concatenate([np.concatenate([t.train.pair_ids, t.test.pair_ids]) for t in small_stream.tasks])
        assert len(set(ids.tolist())) == len(ids)

    def test_seeded(self, small_config):
        first, second = generate_task_stream(small_config), generate_task_stream(small_config)
        np.testing.assert_array_equal(first.tasks[1].test.videos, second.tasks[1].test.videos)
        other = generate_task_stream(small_config, seed=5)
        assert not np.array_equal(first.tasks[0].train.texts, other.tasks[0].train.texts)

    def test_latent_wider_than_tokens(self, make_config):
        with pytest.raises(ValidationError):
            make_config(latent_dim=9)

    def test_instance_offsets_stay_in_their_subspace(self, make_config):
        stream = generate_task_stream(make_config(token_noise=0.0, frame_noise=0.0, instance_dim=2))
        train = stream.tasks[0].train
        for c in stream.tasks[0].categories:
            texts = train.texts[train.categories == c][:, 0, :]
            assert np.linalg.matrix_rank(texts[1:] - texts[0], tol=1e-9) == 2

    def test_shared_latent_spreads_offsets(self, make_config):
        stream = generate_task_stream(make_config(token_noise=0.0, frame_noise=0.0, instance_dim=0))
        train = stream.tasks[0].train
        c = stream.tasks[0].categories[0]
        texts = train.texts[train.categories == c][:, 0, :]
        assert np.linalg.matrix_rank(texts[1:] - texts[0], tol=1e-9) == 3

    def test_task_shift_moves_each_task_and_modality(self, make_config):
        base = {"text": np.eye(8, 4), "video": np.eye(8, 4)}
        maps = task_maps(make_config(k_tasks=3), base, seed=0)
        assert len(maps) == 3
        assert not np.allclose(maps[0]["text"], maps[1]["text"])
        assert not np.allclose(maps[0]["text"] - base["text"], maps[0]["video"] - base["video"])

    def test_zero_task_shift_keeps_base_maps(self, make_config):
        base = {"text": np.eye(8, 4), "video": 2 * np.eye(8, 4)}
        for maps in task_maps(make_config(k_tasks=3, task_shift=0.0), base, seed=0):
            np.testing.assert_array_equal(maps["text"], base["text"])
            np.testing.assert_array_equal(maps["video"], base["video"])

    def test_pairs_are_read_only(self, small_stream):
        with pytest.raises(ValueError):
            small_stream.tasks[0].train.texts[0, 0, 0] = 1.0

    def test_isolation_check(self, small_stream):
        first, second = small_stream.tasks
        first.assert_isolated(first.train)
        with pytest.raises(DataLeakError) as excinfo:
            first.assert_isolated(PairSet.concat([first.train, second.train.subset(np.arange(1))]))
        assert excinfo.value.categories == [int(second.train.categories[0])]

    def test_merge(self, small_stream):
        merged = merge_stream(small_stream)
        assert merged.k_tasks == 1
        assert len(merged.tasks[0].train) == sum(len(t.train) for t in small_stream.tasks)
        assert merged.metadata == {"merged_from": 2}


def test_adam_moves_against_gradient():
    param = Tensor(np.array([1.0, -2.0]))
    Adam(lr=0.1).step({"x": param}, {"x": np.array([0.5, -0.5])})
    np.testing.assert_allclose(param.value, [0.9, -1.9])


def test_adam_zero_learning_rate_keeps_values():
    original = np.array([1.0, -2.0])
    param = Tensor(original)
    Adam(lr=0.0).step({"x": param}, {"x": np.array([3.0, 3.0])})
    assert param.value is original


class TestTraining:
    def test_zero_epochs_only_stores_means(self, make_config):
        learner = ContinualLearner(make_config(epochs=0))
        before = {name: t.value.copy() for name, t in learner.state.trainable().items()}

        logs = learner.train_task(learner.stream.tasks[0], None)

        assert logs == []
        for name, tensor in learner.state.trainable().items():
            np.testing.assert_array_equal(tensor.value, before[name])
        assert set(learner.state.text_means) == set(learner.stream.tasks[0].categories)
        for mean in learner.state.video_means.values():
            assert np.linalg.norm(mean) == pytest.approx(1.0)

    def test_step_count_includes_partial_batch(self, make_config):
        learner = ContinualLearner(make_config(batch=3, epochs=2))
        logs = learner.train_task(learner.stream.tasks[0], None)
        # 8 pairs in batches of 3
        assert len(logs) == 2 * 3
        assert [log.step for log in logs] == list(range(6))

    def test_weights_off_total_equals_scl(self, make_config):
        learner = ContinualLearner(make_config(lambda1=0.0, lambda2=0.0))
        learner.train_task(learner.stream.tasks[0], None)
        logs = learner.train_task(learner.stream.tasks[1], snapshot(learner.state))
        for log in logs:
            assert log.total == pytest.approx(log.scl, abs=1e-12)

    def test_incremental_task_without_snapshot(self, make_config):
        learner = ContinualLearner(make_config())
        with pytest.raises(MissingSnapshotError):
            learner.train_task(learner.stream.tasks[1], None)

    def test_frozen_weights_untouched(self, make_config):
        learner = ContinualLearner(make_config())
        before = learner.state.frozen_checksum()
        learner.train_task(learner.stream.tasks[0], None)
        assert learner.state.frozen_checksum() == before
        assert learner.state.checksum() != ContinualLearner(make_config()).state.checksum()

    def test_frozen_weight_change_is_detected(self, monkeypatch, make_config):
        learner = ContinualLearner(make_config())
        original = learner.state.trainable

        def leaking_trainable():
            params = original()
            params.update(learner.state.frozen())
            return params

        monkeypatch.setattr(learner.state, "trainable", leaking_trainable)
        with pytest.raises(FrozenParameterError):
            learner.train_task(learner.stream.tasks[0], None)


class TestSnapshot:
    def test_snapshot_survives_training(self, make_config):
        learner = ContinualLearner(make_config())
        learner.train_task(learner.stream.tasks[0], None)
        frozen = snapshot(learner.state)
        checksum = frozen.checksum()

        learner.train_task(learner.stream.tasks[1], frozen)

        assert frozen.checksum() == checksum
        assert frozen.checksum() != learner.state.checksum()

    def test_snapshot_is_read_only(self, small_state):
        frozen = snapshot(small_state)
        assert frozen.read_only
        tensor = next(iter(frozen.trainable().values()))
        assert not tensor.requires_grad
        with pytest.raises(ValueError):
            tensor.value[...] = 0.0


class TestRunContinual:
    def test_same_seed_same_result(self, small_config):
        first, second = run_continual(small_config), run_continual(small_config)
        assert first.final_state.keys() == second.final_state.keys()
        for name in first.final_state:
            np.testing.assert_array_equal(first.final_state[name], second.final_state[name])
        np.testing.assert_array_equal(first.recall_matrix, second.recall_matrix)

    def test_recall_matrix_is_lower_triangular(self, small_config):
        result = run_continual(small_config)
        assert result.recall_matrix.shape == (2, 2)
        assert np.isnan(result.recall_matrix[0, 1])
        assert not np.isnan(result.recall_matrix[1]).any()
        assert len(result.steps) == 2
        assert len(result.steps[1].per_task) == 2
        assert result.frozen_intact

    def test_zero_learning_rate_means_no_forgetting(self, make_config):
        result = run_continual(make_config(lr_base=0.0, lr_incr=0.0))
        assert result.recall_matrix[1, 0] == result.recall_matrix[0, 0]
        assert result.final_bwf == 0.0
        assert result.bwf_by_step == [0.0, 0.0]

    def test_seed_argument_overrides_config(self, small_config):
        result = run_continual(small_config, seed=3)
        assert result.config["seed"] == 3

    def test_single_task_reports_zero_forgetting(self, make_config):
        result = run_continual(make_config(k_tasks=1, cats_per_task=3))
        assert result.recall_matrix.shape == (1, 1)
        assert not result.bwf_defined
        assert result.final_bwf == 0.0

    def test_joint_arm_merges_the_stream(self, make_config):
        result = run_continual(make_config(ablation=AblationArm.JOINT))
        assert result.recall_matrix.shape == (1, 1)
        assert result.steps[0].overall.queries == 2 * 2 * 3

    def test_geometry_and_prototype_similarity(self, small_config):
        record = run_continual(small_config).steps[-1]
        assert record.geometry is not None
        assert 0.0 <= record.geometry.micd <= 2.0
        categories, matrix = record.prototype_similarity["etf"]
        assert categories == (0, 1, 2, 3)
        np.testing.assert_allclose(np.diag(matrix), 1.0)
        assert record.similarity.shape == (12, 12)


def test_ablation_arms_share_streams(small_config):
    results = run_ablation(small_config, arms=[AblationArm.FRAMEWORK, AblationArm.FULL])
    assert set(results) == {AblationArm.FRAMEWORK, AblationArm.FULL}
    framework = results[AblationArm.FRAMEWORK].config
    assert (framework["lambda1"], framework["lambda2"]) == (0.0, 0.0)
    assert results[AblationArm.FULL].config["lambda2"] == small_config.lambda2


def test_sweep_grid(small_config):
    cells = run_sweep(small_config.model_copy(update={"k_tasks": 1, "cats_per_task": 2}), [0.0, 1.0], [0.5])
    assert [(c.lambda1, c.lambda2) for c in cells] == [(0.0, 0.5), (1.0, 0.5)]
