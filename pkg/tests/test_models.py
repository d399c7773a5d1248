import numpy as np
import pytest

from gradcheck import rel_error
from semiadv import models
from semiadv import nncore as nn
from semiadv.config import Config, desk_classifier_channels
from semiadv.losses import loss_JG, loss_JM, loss_total
from semiadv.nncore import Tensor
from semiadv.prototypes import prototypes_from_means


def small_prototypes(size, seed=0):
    rng = np.random.default_rng(seed)
    return prototypes_from_means(rng.uniform(0.2, 0.8, (1, size, size)), rng.uniform(0.2, 0.8, (1, size, size)), 3, 5)


def test_autoencoder_shapes_at_224():
    ae = models.build_autoencoder(0)
    ps = small_prototypes(224)
    x = Tensor(np.zeros((1, 1, 224, 224), np.float32))
    code = models.encode(ae, x, ps.p_male)
    assert code.shape[1:] == (12, 56, 56)
    dec = models.decode(ae, code)
    assert dec.shape[1:] == (128, 224, 224)
    assert ae["final.weight"].shape[1] == dec.shape[1] + ps.p_male.shape[0] == 131
    assert models.autoencode(ae, x, ps, 1, "OP").shape == (1, 1, 224, 224)


def test_classifier_pre_dense_map_at_224():
    g = models.build_gender_classifier(0, 224, Config().classifier_channels)
    feats = models.trunk_features(g, np.zeros((1, 1, 224, 224), np.float32))
    assert feats.shape[1:] == (256, 4, 4)
    assert g["fc1.weight"].shape == (4 * 4 * 256, 256)


def test_desk_classifier_keeps_4x4():
    for size, n in ((64, 4), (32, 3), (8, 1), (224, 6)):
        ch = desk_classifier_channels(Config().classifier_channels, size)
        assert len(ch) == n and ch[-1] == 256
        g = models.build_gender_classifier(0, size, ch)
        assert models.trunk_features(g, np.zeros((1, 1, size, size), np.float32)).shape[2:] == (4, 4)


def test_output_range_and_determinism():
    ae = models.build_autoencoder(1)
    ps = small_prototypes(16)
    x = np.random.default_rng(0).uniform(size=(3, 1, 16, 16)).astype(np.float32)
    a = models.autoencode(ae, x, ps, [1, 0, 1], "SM").data
    b = models.autoencode(ae, x, ps, [1, 0, 1], "SM").data
    assert a.tobytes() == b.tobytes()
    assert a.min() > 0 and a.max() < 1


def test_prototype_channel_ablation():
    ae = models.build_autoencoder(2)
    ps = small_prototypes(16)
    x = np.random.default_rng(1).uniform(size=(2, 1, 16, 16)).astype(np.float32)
    sm = models.autoencode(ae, x, ps, [1, 0], "SM").data
    op = models.autoencode(ae, x, ps, [1, 0], "OP").data
    assert not np.array_equal(sm, op)
    ae["final.weight"].data[:, -3:] = 0
    sm = models.autoencode(ae, x, ps, [1, 0], "SM").data
    op = models.autoencode(ae, x, ps, [1, 0], "OP").data
    np.testing.assert_array_equal(sm, op)


def test_triple_matches_autoencode_and_shares_decoder():
    ae = models.build_autoencoder(3)
    ps = small_prototypes(16)
    x = np.random.default_rng(2).uniform(size=(2, 1, 16, 16)).astype(np.float32)
    y = [0, 1]
    tri = models.perturb_triple(ae, x, ps, y)
    for kind, out in (("SM", tri.x_sm), ("NT", tri.x_nt), ("OP", tri.x_op)):
        np.testing.assert_allclose(out.data, models.autoencode(ae, x, ps, y, kind).data, atol=1e-6)
    # the concatenated-input form gives the same map as the split final conv
    proto = np.stack([ps.p_female, ps.p_male])
    cat = nn.concat([tri.decoded, Tensor(proto)], axis=1)
    ref = nn.sigmoid(nn.conv2d(cat, ae["final.weight"], ae["final.bias"]))
    np.testing.assert_allclose(ref.data, tri.x_sm.data, atol=1e-6)
    assert models.perturb_triple(ae, x, ps, y, kinds=("SM",)).x_op is None


def test_encoder_always_sees_same_gender_prototype():
    ae = models.build_autoencoder(4)
    ps = small_prototypes(8)
    x = np.random.default_rng(3).uniform(size=(1, 1, 8, 8)).astype(np.float32)
    # the OP output must equal: encode with SM prototype, final conv with OP prototype
    code = models.encode(ae, x, ps.p_male)
    manual = models.proto_combine(ae, models.decode(ae, code), ps.p_female)
    np.testing.assert_array_equal(models.autoencode(ae, x, ps, 1, "OP").data, manual.data)


def test_prototype_size_mismatch():
    ae = models.build_autoencoder(0)
    with pytest.raises(ValueError, match="prototype size"):
        models.autoencode(ae, np.zeros((1, 1, 16, 16), np.float32), small_prototypes(8), 1)


def test_gender_forward_range_dropout():
    g = models.build_gender_classifier(0, 16, (16, 256), hidden=8)
    x = np.random.default_rng(4).uniform(size=(5, 1, 16, 16)).astype(np.float32)
    p = models.gender_forward(g, x).data
    assert p.shape == (5,) and np.all((p > 0) & (p < 1))
    assert p.tobytes() == models.gender_forward(g, x).data.tobytes()
    q1 = models.gender_forward(g, x, training=True, rng=np.random.default_rng(0)).data
    q2 = models.gender_forward(g, x, training=True, rng=np.random.default_rng(1)).data
    assert not np.array_equal(q1, q2)
    with pytest.raises(ValueError):
        models.gender_forward(g, x, training=True)


def test_matcher_embed_and_head():
    m = models.build_matcher(0, 16, (8, 16), descriptor_dim=10, n_train_identities=4)
    x = np.random.default_rng(5).uniform(size=(3, 1, 16, 16)).astype(np.float32)
    assert models.identity_logits(m, x).shape == (3, 4)
    e = models.matcher_embed(m, x).data
    assert e.shape == (3, 10)
    stripped = models.drop_head(m)
    assert not any(n.startswith("head.") for n in stripped.names())
    assert models.matcher_embed(stripped, x).data.tobytes() == e.tobytes()
    assert models.build_matcher(0, 224, (8,), descriptor_dim=2622)["embed.weight"].shape[1] == 2622


def test_adapt_rgb_filters():
    w = np.random.default_rng(6).normal(size=(1, 1, 3, 3))
    np.testing.assert_array_equal(models.adapt_rgb_filters_to_gray(np.repeat(w, 3, axis=1)), 3 * w)
    np.testing.assert_array_equal(models.adapt_rgb_filters_to_gray(np.zeros((2, 3, 3, 3))), np.zeros((2, 1, 3, 3)))
    with pytest.raises(ValueError):
        models.adapt_rgb_filters_to_gray(np.zeros((2, 1, 3, 3)))


def adapt_dual_path_error(seed=0):
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(5, 3, 3, 3))
    gray = rng.uniform(size=(2, 1, 12, 12))
    rgb = np.repeat(gray, 3, axis=1)
    a = nn.conv2d(Tensor(rgb), Tensor(k)).data
    b = nn.conv2d(Tensor(gray), Tensor(models.adapt_rgb_filters_to_gray(k))).data
    return float(np.max(np.abs(a - b)))


def test_adapt_dual_path_equivalence():
    assert adapt_dual_path_error() < 1e-6


# composed gradient ---------------------------------------------------------------

def composed_grad_error(n_samples=6, seed=0):
    """Worst relative FD error over sampled entries of every autoencoder parameter
    and the input, for the full semi-adversarial objective at 8x8 in float64."""
    rng = np.random.default_rng(seed)
    size = 8
    ae = models.build_autoencoder(seed, dtype=np.float64)
    g = models.build_gender_classifier(seed + 1, size, desk_classifier_channels((8, 16, 32, 64, 128, 256), size),
                                       hidden=16, dtype=np.float64)
    m = models.build_matcher(seed + 2, size, (8,), descriptor_dim=6, dtype=np.float64)
    g.freeze()
    m.freeze()
    ps = small_prototypes(size, seed)
    x0 = rng.uniform(0.1, 0.9, size=(2, 1, size, size))
    y = np.array([1, 0])
    e_x = models.matcher_embed(m, x0).data + rng.normal(0, 0.1, size=(2, 6))

    def objective(x):
        tri = models.perturb_triple(ae, x, ps, y, kinds=("SM", "OP"))
        jg = loss_JG(y, models.gender_forward(g, tri.x_sm), models.gender_forward(g, tri.x_op))
        jm = loss_JM(e_x, models.matcher_embed(m, tri.x_sm))
        return loss_total(jg, jm)

    xt = Tensor(x0.copy(), requires_grad=True)
    ae.zero_grad()
    objective(xt).backward()
    targets = [(name, t.data, t.grad) for name, t in ae.items()] + [("x", x0, xt.grad)]
    h = 1e-5
    worst = 0.0
    for name, arr, grad in targets:
        flat_idx = rng.choice(arr.size, size=min(n_samples, arr.size), replace=False)
        for fi in flat_idx:
            i = np.unravel_index(fi, arr.shape)
            old = arr[i]
            arr[i] = old + h
            fp = objective(Tensor(x0)).item()
            arr[i] = old - h
            fm = objective(Tensor(x0)).item()
            arr[i] = old
            num = (fp - fm) / (2 * h)
            worst = max(worst, rel_error(np.array([grad[i]]), np.array([num])))
    return worst


def test_composed_generator_gradient():
    assert composed_grad_error() < 1e-3
