import dataclasses

import numpy as np
import pytest

from helpers import tiny_config
from memr.checkpoint import CheckpointError
from memr.trainer import (METRIC_COLUMNS, ConfigError, MetricsRow, Trainer, TrainerConfig,
                          TrainingError, read_metrics)


def strip_wall(rows):
    # repr so that nan compares equal to nan
    return [{k: repr(v) for k, v in dataclasses.asdict(r).items() if k != "wall_seconds"}
            for r in rows]


def params_bytes(tr):
    nets = list(tr._nets().values()) + [tr.model.net]
    return b"".join(p.tobytes() for n in nets for p in n.params())


def test_defaults_and_paper_scale():
    cfg = TrainerConfig()
    assert (cfg.rollouts_per_step, cfg.policy_updates, cfg.psi_epochs, cfg.alpha) == (40, 5, 2, 0.6)
    assert (cfg.beta_start, cfg.beta_end, cfg.model_update_freq) == (0.4, 1.0, 250)
    big = TrainerConfig.paper_scale()
    assert (big.rollouts_per_step, big.policy_updates, big.psi_epochs, big.alpha,
            big.model_update_freq, big.batch_size) == (400, 5, 2, 0.6, 250, 256)


@pytest.mark.parametrize("kw", [
    dict(model_dataset_size=801), dict(rollouts_per_step=0), dict(alpha=1.5),
    dict(batch_size=9), dict(beta_start=0.9, beta_end=0.5), dict(initial_random_steps=10),
    dict(gamma=1.0), dict(real_data_fraction=1.0),
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        tiny_config(**kw)
    with pytest.raises(ConfigError):
        TrainerConfig.from_dict({"bogus": 1})


def test_config_dict_roundtrip():
    cfg = tiny_config()
    assert TrainerConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_steps(tmp_path):
    tr = Trainer(tiny_config(total_num_steps=0), metrics_path=tmp_path / "m.csv")
    assert tr.run() == []
    assert tr.policy_updates == 0 and tr.rollouts == 0
    assert read_metrics(tmp_path / "m.csv") == []


def test_bookkeeping_identities():
    cfg = tiny_config(total_num_steps=330, eval_interval=10)
    rows = Trainer(cfg).run()
    for r in rows:
        k = max(0, r.step - cfg.initial_random_steps)
        assert r.model_rollouts == k * cfg.rollouts_per_step
        assert r.policy_updates == k * cfg.policy_updates
    steps = [r.step for r in rows]
    assert steps == sorted(steps) and steps[-1] == 330


def test_uniform_baseline_weights(monkeypatch):
    seen = []
    tr = Trainer(tiny_config(alpha=0.0, beta_start=0.0, beta_end=0.0, total_num_steps=300))
    orig = tr.env_buf.sample_states

    def spy(m, beta, rng):
        out = orig(m, beta, rng)
        seen.append(out.weights)
        return out

    monkeypatch.setattr(tr.env_buf, "sample_states", spy)
    tr.run()
    assert seen and all(np.all(w == 1.0) for w in seen)
    assert np.all(tr.model_buf.weights[: tr.model_buf.occupied] == 1.0)


def test_rollouts_start_from_real_states(monkeypatch):
    tr = Trainer(tiny_config(total_num_steps=300, debug=True))
    orig = tr.model.rollout_one_step
    produced = []

    def spy(obs, actions, rng):
        stored = tr.env_buf.states[: tr.env_buf.size]
        for row in obs:
            assert np.any(np.all(stored == row, axis=1)), "rollout from a non-environment state"
            assert not any(np.array_equal(row, p) for p in produced[-64:])
        nxt, r = orig(obs, actions, rng)
        produced.extend(nxt)
        return nxt, r

    monkeypatch.setattr(tr.model, "rollout_one_step", spy)
    tr.run()
    assert produced


def test_policy_batches_single_segment(monkeypatch):
    tr = Trainer(tiny_config(total_num_steps=300))
    orig = tr.model_buf.sample_policy_batch
    rounds = []

    def spy(b, rng):
        batch = orig(b, rng)
        seg = batch.segment
        assert tr.model_buf.rounds[seg] == batch.round
        for s in batch.states:
            assert np.any(np.all(tr.model_buf.states[seg] == s, axis=1))
        rounds.append(batch.round)
        return batch

    monkeypatch.setattr(tr.model_buf, "sample_policy_batch", spy)
    tr.run()
    assert len(rounds) == 50 * tr.cfg.policy_updates


def test_debug_mode_asserts_hold():
    Trainer(tiny_config(total_num_steps=300, debug=True)).run()


def test_priorities_default_then_psi(monkeypatch):
    tr = Trainer(tiny_config(total_num_steps=260))
    tr.run()
    assert np.all(tr.env_buf.priorities[:250] > 0)
    # warmup transitions were stored before any psi fit
    assert tr.psi.updates == 10
    assert tr.env_buf.priorities[250] != 1.0 or tr.env_buf.priorities[251] != 1.0


def test_determinism(tmp_path):
    cfg = tiny_config(total_num_steps=320)
    a = Trainer(cfg, metrics_path=tmp_path / "a.csv")
    b = Trainer(cfg, metrics_path=tmp_path / "b.csv")
    assert strip_wall(a.run()) == strip_wall(b.run())
    assert params_bytes(a) == params_bytes(b)


def test_checkpoint_resume_is_bitwise(tmp_path):
    cfg = tiny_config(total_num_steps=400, eval_interval=50, beta_anneal_steps=400)
    full = Trainer(cfg)
    full.run()

    part = Trainer(dataclasses.replace(cfg, total_num_steps=300))
    part.run()
    part.save(tmp_path / "c.memr")
    resumed = Trainer.load(tmp_path / "c.memr")
    resumed.cfg.total_num_steps = 400
    resumed.run()
    assert strip_wall(resumed.rows) == strip_wall(full.rows)
    assert params_bytes(resumed) == params_bytes(full)
    assert resumed.env_buf.tree.tree.tobytes() == full.env_buf.tree.tree.tobytes()


def test_checkpoint_at_step_zero(tmp_path):
    cfg = tiny_config(total_num_steps=280)
    Trainer(cfg).save(tmp_path / "c.memr")
    a = Trainer.load(tmp_path / "c.memr")
    b = Trainer(cfg)
    assert strip_wall(a.run()) == strip_wall(b.run())


def test_corrupt_checkpoint(tmp_path):
    path = tmp_path / "c.memr"
    Trainer(tiny_config()).save(path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="section"):
        Trainer.load(path)
    path.write_bytes(bytes(raw[:100]))
    with pytest.raises(CheckpointError):
        Trainer.load(path)


def test_errors_carry_step_number(monkeypatch):
    tr = Trainer(tiny_config(total_num_steps=300))

    def boom(*a, **k):
        raise FloatingPointError("bad")

    monkeypatch.setattr(tr.agent, "update", boom)
    with pytest.raises(TrainingError, match="step 251"):
        tr.run()


def test_metrics_csv(tmp_path):
    path = tmp_path / "m.csv"
    rows = Trainer(tiny_config(total_num_steps=300), metrics_path=path).run()
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    assert len(lines) == 1 + len(rows) == 4
    parsed = read_metrics(path)
    assert [r["step"] for r in parsed] == [100, 200, 300]
    assert parsed[-1]["policy_updates"] == rows[-1].policy_updates
    assert np.isfinite(parsed[-1]["knn_entropy"]) and np.isfinite(parsed[-1]["model_mse"])


def test_read_metrics_errors(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("")
    with pytest.raises(ValueError, match="empty"):
        read_metrics(path)
    path.write_text(",".join(METRIC_COLUMNS) + "\n" + ",".join(["1"] * len(METRIC_COLUMNS))
                    + "\n1,2\n")
    with pytest.raises(ValueError, match="row 3"):
        read_metrics(path)
    path.write_text(",".join(METRIC_COLUMNS) + "\n" + ",".join(["x"] * len(METRIC_COLUMNS)) + "\n")
    with pytest.raises(ValueError, match="row 2"):
        read_metrics(path)


def test_pointmass_runs():
    rows = Trainer(tiny_config(env="pointmass", total_num_steps=300)).run()
    assert rows[-1].model_rollouts == 50 * 8


def test_metrics_row_fields():
    assert METRIC_COLUMNS[:3] == ["step", "eval_return", "discounted_return"]
    assert METRIC_COLUMNS[-1] == "wall_seconds"
    assert set(METRIC_COLUMNS) == {f.name for f in dataclasses.fields(MetricsRow)}
