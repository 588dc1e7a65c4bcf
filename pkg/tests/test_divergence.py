import numpy as np
import pytest

from elgar.denoiser import DenoiserConfig, DenoiserParams, denoiser_forward, read_checkpoint
from elgar.diffusion import GuidanceConfig, cosine_schedule
from elgar.errors import NonFiniteActivation
from elgar.losses import LossWeights
from elgar.synth import semitone_note, synth_performance
from elgar.training import OptimizerSettings, slice_dataset, train

MINI = DenoiserConfig(blocks=1, dim=8, heads=2)


@pytest.fixture(scope="module")
def data():
    from elgar.cello import default_cello
    from elgar.skeleton import default_skeleton

    sk = default_skeleton()
    cello = default_cello()
    res = synth_performance([semitone_note(cello, 2, 2, 1.0)], sk, cello)
    return sk, cello, slice_dataset([(res.motion, res.track, res.foot_contact)])


def test_nan_parameters_raise(rng, data):
    params = DenoiserParams.initialize(MINI, seed=0)
    params.arrays["out_b"][0] = np.nan
    with pytest.raises(NonFiniteActivation):
        denoiser_forward(params, rng.standard_normal((3, 309)), 2, None)


def test_divergence_retains_last_good_checkpoint(tmp_path, data, monkeypatch):
    sk, cello, slices = data
    path = tmp_path / "model.ckpt"

    import elgar.training as training_mod

    real_backward = training_mod.backward
    calls = {"n": 0}

    def failing_backward(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 3:
            raise NonFiniteActivation("injected divergence")
        return real_backward(*args, **kwargs)

    monkeypatch.setattr(training_mod, "backward", failing_backward)
    with pytest.raises(NonFiniteActivation):
        train(
            slices,
            MINI,
            cosine_schedule(10),
            GuidanceConfig(),
            sk,
            cello,
            weights=LossWeights(1, 0, 0, 0, 0, 0, 0),
            optimizer=OptimizerSettings(lr=1e-3),
            steps=10,
            batch_size=1,
            seed=0,
            checkpoint_path=path,
            checkpoint_every=2,
        )
    # the checkpoint from step 2 survives the failure at step 4
    retained = read_checkpoint(path)
    assert retained.config == MINI


def test_cli_train_divergence_exit_code(tmp_path, monkeypatch):
    import json

    import elgar.cli as cli_mod

    def fake_train(*args, **kwargs):
        raise NonFiniteActivation("injected")

    monkeypatch.setattr(cli_mod, "train", fake_train)
    cfg = {
        "out_dir": str(tmp_path / "out"),
        "denoiser": {"blocks": 1, "dim": 8, "heads": 2, "cond_dim": 4, "max_frames": 150},
        "dataset": {
            "kind": "synthetic",
            "n_train_scores": 1,
            "n_test_scores": 1,
            "notes_per_score": 2,
            "note_durations": [0.5],
            "seed": 0,
        },
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert cli_mod.main(["train", "--config", str(path)]) == 4
