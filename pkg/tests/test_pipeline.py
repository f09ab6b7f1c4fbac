import numpy as np
import pytest

from phonodec.covariance import EegTrial
from phonodec.evaluation import SplitSpec, split
from phonodec.exceptions import ValidationError
from phonodec.labels import PHON_ORDER, TOKEN_INDEX, TOKEN_ORDER, PhonCategory, \
    TokenLabel, derive_phonological_labels, token_from_string
from phonodec.pipeline import PipelineConfig, stack_latents, stack_latents_batch, \
    predict_token, predict_tokens, train_phase1, train_phase2, train_pipeline, \
    trial_features
from phonodec.synthetic import SynthSpec, generate_synthetic

BITS = {t: derive_phonological_labels(t) for t in TOKEN_ORDER}


# ---------------------------------------------------------------------------
# label table


def test_token_and_category_counts():
    assert len(TOKEN_ORDER) == 11
    assert len(PHON_ORDER) == 6


def test_m_is_bilabial_nasal_voiced_consonant():
    assert BITS[TokenLabel.M] == (True, True, True, False, False, True)


def test_iy_is_pure_high_front_vowel():
    assert BITS[TokenLabel.IY] == (False, False, False, False, True, True)


def test_piy_diy_differ_in_bilabial_and_voicing():
    diff = [i for i in range(6) if BITS[TokenLabel.PIY][i] != BITS[TokenLabel.DIY][i]]
    names = {PHON_ORDER[i] for i in diff}
    assert names == {PhonCategory.BILABIAL, PhonCategory.VOICED}


def _members(category):
    j = PHON_ORDER.index(category)
    return {t for t in TOKEN_ORDER if BITS[t][j]}


def test_category_memberships():
    vowels = {t for t in TOKEN_ORDER
              if not BITS[t][PHON_ORDER.index(PhonCategory.CONSONANT_PRESENT)]}
    assert vowels == {TokenLabel.IY, TokenLabel.UW}
    assert _members(PhonCategory.NASAL) == {
        TokenLabel.M, TokenLabel.N, TokenLabel.KNEW, TokenLabel.GNAW}
    assert _members(PhonCategory.BILABIAL) == {
        TokenLabel.PIY, TokenLabel.PAT, TokenLabel.POT, TokenLabel.M}
    assert _members(PhonCategory.HIGH_FRONT_IY) == {
        TokenLabel.IY, TokenLabel.PIY, TokenLabel.TIY, TokenLabel.DIY}
    assert _members(PhonCategory.HIGH_BACK_UW) == {TokenLabel.UW, TokenLabel.KNEW}


def test_pat_pot_share_identical_rows():
    assert BITS[TokenLabel.PAT] == BITS[TokenLabel.POT]


def test_token_from_string():
    assert token_from_string("knew") is TokenLabel.KNEW
    with pytest.raises(ValidationError, match="xyz"):
        token_from_string("xyz")


# ---------------------------------------------------------------------------
# pipeline


@pytest.fixture(scope="module")
def benchmark():
    trials = generate_synthetic(SynthSpec(seed=3, channels=8, samples=256,
                                          trials_per_token=18, subjects=2))
    return split(trials, SplitSpec(ratios=(0.8, 0.1, 0.1), seed=3))


@pytest.fixture(scope="module")
def trained(benchmark):
    train, dev, _ = benchmark
    config = PipelineConfig.desk_scale(bottleneck=12, epochs=4, rounds=60, seed=3)
    return train_pipeline(train, config, dev)


def test_phase1_on_planted_benchmark(trained):
    _, summary = trained
    accs = summary["phase1_dev_accuracy"]
    assert set(accs) == {c.value for c in PHON_ORDER}
    assert min(accs.values()) >= 0.9


def test_phase2_on_planted_benchmark(trained):
    _, summary = trained
    assert summary["phase2_dev_accuracy"] >= 0.6  # chance is 1/11


def test_stack_shapes_and_order(trained, benchmark):
    model, _ = trained
    _, _, test = benchmark
    stack = stack_latents(test[0], model.tasks, model.categories, model.lag)
    assert stack.shape == (6, 12)
    assert stack.reshape(-1).shape == (72,)
    # identical trial gives identical stacks
    again = stack_latents(test[0], model.tasks, model.categories, model.lag)
    np.testing.assert_array_equal(stack, again)
    # row order follows the category declaration order
    from phonodec.pipeline import task_codes
    imgs, flats = trial_features([test[0]], model.lag)
    for j, cat in enumerate(model.categories):
        np.testing.assert_array_equal(stack[j], task_codes(model.tasks[cat], imgs, flats)[0])


def test_predict_token_contract(trained, benchmark):
    model, _ = trained
    _, _, test = benchmark
    token, dist, phon = predict_token(test[0], model)
    assert token in TOKEN_ORDER
    assert dist.shape == (11,)
    assert abs(dist.sum() - 1.0) < 1e-9
    assert phon.shape == (6,)
    assert ((phon >= 0) & (phon <= 1)).all()
    token2, dist2, phon2 = predict_token(test[0], model)
    assert token2 is token
    np.testing.assert_array_equal(dist, dist2)
    np.testing.assert_array_equal(phon, phon2)


def test_predict_rejects_channel_mismatch(trained):
    model, _ = trained
    bad = EegTrial("S99", TokenLabel.IY, np.zeros((4, 64)) + np.arange(64))
    with pytest.raises(ValidationError, match="channels"):
        predict_token(bad, model)


def test_phase1_rejects_single_class_task():
    trials = generate_synthetic(SynthSpec(seed=1, channels=6, samples=64,
                                          trials_per_token=3, subjects=1))
    vowels_only = [t for t in trials if t.token in (TokenLabel.IY, TokenLabel.UW)]
    config = PipelineConfig.desk_scale(bottleneck=4, epochs=1, rounds=5)
    with pytest.raises(ValidationError, match="Bilabial"):
        train_phase1(vowels_only, config)


def test_null_model_pipeline_completes():
    # zero epochs and zero boosting rounds: every head predicts the class
    # favored by the training prior, so dev accuracy is that class's dev rate
    trials = generate_synthetic(SynthSpec(seed=5, channels=6, samples=96,
                                          trials_per_token=6, subjects=2))
    train, dev, _ = split(trials, SplitSpec(ratios=(0.7, 0.2, 0.1), seed=5))
    config = PipelineConfig.desk_scale(bottleneck=4, epochs=0, rounds=0, seed=5)
    model, summary = train_pipeline(train, config, dev)
    train_bits = np.asarray([derive_phonological_labels(t.token) for t in train], dtype=float)
    dev_bits = np.asarray([derive_phonological_labels(t.token) for t in dev], dtype=float)
    for j, cat in enumerate(PHON_ORDER):
        predicted_class = 1.0 if train_bits[:, j].mean() > 0.5 else 0.0
        expected = (dev_bits[:, j] == predicted_class).mean()
        assert summary["phase1_dev_accuracy"][cat.value] == pytest.approx(expected)


def test_memorization_sanity():
    trials = generate_synthetic(SynthSpec(seed=9, channels=6, samples=96,
                                          trials_per_token=2, subjects=1))
    config = PipelineConfig.desk_scale(bottleneck=8, epochs=3, rounds=60, seed=9)
    model, _ = train_pipeline(trials, config)
    pred, _, _ = predict_tokens(model, trials)
    truth = np.asarray([TOKEN_INDEX[t.token] for t in trials])
    assert (pred == truth).mean() == 1.0


def test_ablated_category_set_still_runs():
    trials = generate_synthetic(SynthSpec(seed=2, channels=6, samples=96,
                                          trials_per_token=4, subjects=1))
    config = PipelineConfig.desk_scale(bottleneck=6, epochs=1, rounds=10, seed=2)
    config = PipelineConfig(
        cnn=config.cnn, tcnn=config.tcnn, dae=config.dae, gbt=config.gbt,
        batch_size=config.batch_size, seed=config.seed,
        categories=PHON_ORDER[:5],
    )
    model, _ = train_pipeline(trials, config)
    stack = stack_latents(trials[0], model.tasks, model.categories)
    assert stack.shape == (5, 6)
    token, dist, phon = predict_token(trials[0], model)
    assert phon.shape == (5,)
    assert abs(dist.sum() - 1.0) < 1e-9


def test_phase2_rejects_degenerate_stacks():
    config = PipelineConfig.desk_scale(bottleneck=4, epochs=1, rounds=5)
    with pytest.raises(ValidationError):
        train_phase2(np.zeros((0, 6, 4)), np.zeros(0, dtype=int), config)
    with pytest.raises(ValidationError):
        train_phase2(np.zeros((4, 6, 4)), np.zeros(4, dtype=int), config)


def test_mismatched_bottlenecks_rejected(trained):
    model, _ = trained
    tasks = dict(model.tasks)
    from phonodec.networks import DeepAutoencoder, MinMaxScaler
    from phonodec.pipeline import TaskModel

    odd = model.tasks[PhonCategory.BILABIAL]
    smaller = DeepAutoencoder(odd.dae.input_width, hidden=odd.dae.hidden,
                              bottleneck=5, seed=0)
    tasks[PhonCategory.BILABIAL] = TaskModel(
        cnn=odd.cnn, tcnn=odd.tcnn, dae=smaller, scaler=odd.scaler, gbt=odd.gbt)
    trials = generate_synthetic(SynthSpec(seed=1, channels=8, samples=64,
                                          trials_per_token=2, subjects=1))
    imgs, flats = trial_features([trials[0]])
    with pytest.raises(ValidationError, match="bottleneck"):
        stack_latents_batch(imgs, flats, tasks, model.categories)


def test_config_roundtrip():
    config = PipelineConfig.desk_scale(bottleneck=12, epochs=4, rounds=60, seed=3)
    rebuilt = PipelineConfig.from_dict(config.to_dict())
    assert rebuilt == config
    with pytest.raises(ValidationError):
        PipelineConfig(phase2_layout="grid")


def test_phase2_channels_layout_runs():
    trials = generate_synthetic(SynthSpec(seed=6, channels=6, samples=96,
                                          trials_per_token=3, subjects=1))
    base = PipelineConfig.desk_scale(bottleneck=6, epochs=1, rounds=10, seed=6)
    config = PipelineConfig(
        cnn=base.cnn, tcnn=base.tcnn, dae=base.dae, gbt=base.gbt,
        batch_size=base.batch_size, seed=base.seed, phase2_layout="channels",
    )
    model, _ = train_pipeline(trials, config)
    token, dist, _ = predict_token(trials[0], model)
    assert abs(dist.sum() - 1.0) < 1e-9
