"""FGSM perturbation contracts and the AT-FGSM baseline."""

import numpy as np
import pytest

from amcguard import attack as atk
from amcguard import model as mdl
from amcguard.dataset import Dataset, SynthConfig, make_split
from amcguard.errors import ContractError
from amcguard.signals import ModulationScheme as M
from conftest import max_rel_err, numerical_gradient

TINY = mdl.ModelConfig(conv_kernels=5, conv_width=3, lstm_units=4, fc1_units=6, num_classes=3)


def test_attack_config_validation():
    with pytest.raises(ContractError):
        atk.AttackConfig(epsilon=-0.1)
    with pytest.raises(ContractError):
        atk.AttackConfig(epsilon=0.1, targeted=True)


def test_input_gradient_shape_and_fd(rng):
    params = mdl.init_params(TINY, seed=2)
    frame = rng.normal(size=(12, 2))
    g = atk.input_gradient(params, frame.astype(np.float32), 1)
    assert g.shape == (12, 2)

    # finite-difference oracle on the same loss (inference mode)
    import amcguard.tensor as T

    with T.dtype_scope(np.float64):
        p64 = mdl.init_params(TINY, seed=2)
    for name in mdl.PARAM_ORDER:
        p64.tensors[name].data[...] = params.tensors[name].data.astype(np.float64)
    p64.bn_state.running_mean[:] = params.bn_state.running_mean
    p64.bn_state.running_var[:] = params.bn_state.running_var

    def f(arrays):
        probs = mdl.forward(p64, T.Tensor(arrays[0], dtype=np.float64))
        return T.categorical_crossentropy(probs, 1).item()

    g_fd = numerical_gradient(f, [frame.copy()], 0)
    g64 = atk.input_gradient(p64, frame, 1)
    assert max_rel_err(g64, g_fd) <= 1e-3


def test_zero_conv_kernels_give_zero_gradient(rng):
    params = mdl.init_params(TINY, seed=4)
    params.tensors["conv_w"].data[...] = 0.0
    g = atk.input_gradient(params, rng.normal(size=(12, 2)).astype(np.float32), 0)
    assert np.all(g == 0)


def test_fgsm_epsilon_zero_is_identity(rng):
    params = mdl.init_params(TINY, seed=5)
    frame = rng.normal(size=(12, 2)).astype(np.float32)
    adv = atk.fgsm(params, frame, 2, atk.AttackConfig(epsilon=0.0))
    assert np.array_equal(adv, frame)


def test_fgsm_zero_gradient_is_identity(rng):
    params = mdl.init_params(TINY, seed=6)
    params.tensors["conv_w"].data[...] = 0.0  # disconnects the input
    frame = rng.normal(size=(12, 2)).astype(np.float32)
    adv = atk.fgsm(params, frame, 0, atk.AttackConfig(epsilon=0.1))
    assert np.array_equal(adv, frame)


def test_fgsm_perturbation_set_membership(rng):
    # every element of x_adv - x is -eps, 0, or +eps up to one ulp at the
    # sample's magnitude (x + eps rounds at x's exponent, and the later
    # subtraction is exact for nearby operands)
    params = mdl.init_params(TINY, seed=7)
    eps = np.float32(0.05)
    frames = rng.normal(size=(50, 16, 2)).astype(np.float32)
    labels = rng.integers(0, 3, size=50)
    adv = atk.fgsm_batch(params, frames, labels, atk.AttackConfig(epsilon=float(eps)))
    diff = adv - frames
    ulp = np.spacing(np.maximum(np.abs(frames), np.abs(adv)))
    ok = (diff == 0) | (np.abs(np.abs(diff) - eps) <= ulp)
    assert np.all(ok)
    assert np.abs(diff).max() <= eps + ulp.max()
    # sign of each nonzero perturbation matches the implied gradient sign
    assert np.any(diff > 0) and np.any(diff < 0)


def test_attack_dataset_preserves_labels_and_tags():
    cfg = SynthConfig(
        schemes=(M.BPSK, M.QPSK),
        snr_grid=(6, 12),
        split_sizes={"tiny_test": 8},
        frame_len=32,
        master_seed=21,
    )
    ds = make_split(cfg, "tiny_test")
    params = mdl.init_params(
        mdl.ModelConfig(conv_kernels=6, conv_width=3, lstm_units=4, fc1_units=8, num_classes=2), seed=8
    )
    out = atk.attack_dataset(params, ds, atk.AttackConfig(epsilon=0.1), schemes=(M.BPSK, M.QPSK))
    assert np.array_equal(out.labels, ds.labels)
    assert np.array_equal(out.snrs, ds.snrs)
    assert out.metadata["epsilon"] == 0.1
    assert out.metadata["source_split"] == "tiny_test"
    assert len(out) == 8
    # epsilon=0 attack leaves the dataset identical
    same = atk.attack_dataset(params, ds, atk.AttackConfig(epsilon=0.0), schemes=(M.BPSK, M.QPSK))
    assert np.array_equal(same.samples, ds.samples)


def test_adversarial_training_eps0_matches_plain_training():
    cfg = SynthConfig(
        schemes=(M.BPSK, M.QAM16),
        snr_grid=(10, 18),
        split_sizes={"tiny_train": 40},
        frame_len=48,
        master_seed=31,
    )
    ds = make_split(cfg, "tiny_train")
    mcfg = mdl.ModelConfig(conv_kernels=8, conv_width=5, lstm_units=8, fc1_units=16, num_classes=2)
    tcfg = mdl.TrainConfig(epochs=3, batch_size=20, validation_fraction=0.0, seed=13)

    plain = mdl.init_params(mcfg, seed=17)
    hist_plain = mdl.train(plain, ds, tcfg, schemes=(M.BPSK, M.QAM16))

    hardened = mdl.init_params(mcfg, seed=17)
    _, hist_at = atk.adversarial_training(
        hardened, ds, atk.AttackConfig(epsilon=0.0), tcfg, schemes=(M.BPSK, M.QAM16)
    )
    assert hist_plain.train_loss == hist_at.train_loss
    for name in mdl.PARAM_ORDER:
        assert np.array_equal(plain.tensors[name].data, hardened.tensors[name].data), name


@pytest.mark.slow
def test_adversarial_training_improves_robustness():
    # small-scale analog of the AT-FGSM comparison: the hardened model beats
    # the plain model under its training epsilon and stays within 15 points clean
    schemes = (M.BPSK, M.QAM16)
    cfg = SynthConfig(
        schemes=schemes,
        snr_grid=(10, 14, 18),
        split_sizes={"tiny_train": 240, "tiny_test": 120},
        frame_len=64,
        master_seed=41,
    )
    train_ds = make_split(cfg, "tiny_train")
    test_ds = make_split(cfg, "tiny_test")
    mcfg = mdl.ModelConfig(conv_kernels=24, conv_width=8, lstm_units=24, fc1_units=48, num_classes=2)
    tcfg = mdl.TrainConfig(epochs=25, batch_size=40, validation_fraction=0.1, seed=3)
    eps = atk.AttackConfig(epsilon=0.1)

    plain = mdl.init_params(mcfg, seed=1)
    mdl.train(plain, train_ds, tcfg, schemes=schemes)
    hardened = mdl.init_params(mcfg, seed=1)
    atk.adversarial_training(hardened, train_ds, eps, tcfg, schemes=schemes)

    clean_plain = mdl.evaluate(plain, test_ds, schemes).accuracy
    clean_hard = mdl.evaluate(hardened, test_ds, schemes).accuracy
    adv_plain = mdl.evaluate(plain, atk.attack_dataset(plain, test_ds, eps, schemes), schemes).accuracy
    adv_hard = mdl.evaluate(
        hardened, atk.attack_dataset(hardened, test_ds, eps, schemes), schemes
    ).accuracy
    assert adv_hard > adv_plain, (adv_hard, adv_plain)
    assert clean_hard >= clean_plain - 0.15, (clean_hard, clean_plain)
