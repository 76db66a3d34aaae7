from memr.trainer import TrainerConfig


def tiny_config(**kw):
    base = dict(total_num_steps=400, initial_random_steps=250, model_min_data=250,
                eval_interval=100, eval_episodes=2, rollouts_per_step=8, batch_size=8,
                model_dataset_size=800, sac_hidden=(16, 16), model_hidden=(16, 16),
                psi_hidden=(16, 16), ensemble_size=2, model_max_epochs=2,
                model_update_freq=100, diversity_samples=200, horizon=50)
    base.update(kw)
    return TrainerConfig(**base)
