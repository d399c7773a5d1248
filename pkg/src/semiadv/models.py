"""The three subnetworks: prototype-conditioned autoencoder (I), gender
classifier (II) and descriptor matcher (III).

Each subnetwork is a :class:`ParamStore` whose ``meta`` carries the
``subnetwork`` tag and the architecture needed to run it, so a loaded
checkpoint is self-describing.
"""
from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from .nncore import ParamStore, Tensor
from .nncore.init import conv_params, dense_params, he_uniform
from .prototypes import prototype_batch

AUTOENCODER, CLASSIFIER, MATCHER = "I", "II", "III"
DESCRIPTOR_SCALE = 16.0


def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def _as_batch(x):
    """Accept [H, W], [1, H, W] or [N, 1, H, W] arrays/tensors; return a 4-d Tensor."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float32))
    if x.ndim == 2:
        return x.reshape(1, 1, *x.shape)
    if x.ndim == 3:
        return x.reshape(1, *x.shape)
    return x


def pooled_size(size, n_halvings):
    for _ in range(n_halvings):
        size = -(-size // 2)
    return size


# ---------------------------------------------------------------------------
# subnetwork I
# ---------------------------------------------------------------------------

def build_autoencoder(seed, encoder_channels=(12, 12), decoder_channels=(64, 128),
                      leaky_slope=0.2, proto_channels=3, dtype=np.float32):
    rng = _rng(seed)
    store = ParamStore({
        "subnetwork": AUTOENCODER,
        "encoder_channels": list(encoder_channels),
        "decoder_channels": list(decoder_channels),
        "proto_channels": proto_channels,
        "leaky_slope": leaky_slope,
    })
    c = 1 + proto_channels
    for i, k in enumerate(encoder_channels):
        conv_params(store, f"enc{i + 1}", rng, c, k, dtype=dtype)
        c = k
    for i, k in enumerate(decoder_channels):
        conv_params(store, f"dec{i + 1}", rng, c, k, dtype=dtype)
        c = k
    conv_params(store, "final", rng, c + proto_channels, 1, dtype=dtype)
    return store


def encode(params, x, p_sm):
    """Encoder on ``concat(x, P_SM)``: (conv, leaky ReLU, 2x2 average pool) per block."""
    slope = params.meta["leaky_slope"]
    x = _as_batch(x)
    p_sm = np.asarray(p_sm, dtype=x.dtype)
    if p_sm.ndim == 3:
        p_sm = p_sm[None]
    if p_sm.shape[-2:] != x.shape[-2:]:
        raise ValueError(f"prototype size {p_sm.shape[-2:]} does not match image size {x.shape[-2:]}")
    h = nn.concat([x, Tensor(p_sm)], axis=1)
    for i in range(len(params.meta["encoder_channels"])):
        h = nn.conv2d(h, params[f"enc{i + 1}.weight"], params[f"enc{i + 1}.bias"])
        h = nn.avg_pool2d(nn.leaky_relu(h, slope))
    return h


def decode(params, code):
    """Decoder: (conv, leaky ReLU, nearest x2 upsample) per block."""
    slope = params.meta["leaky_slope"]
    h = code
    for i in range(len(params.meta["decoder_channels"])):
        h = nn.conv2d(h, params[f"dec{i + 1}.weight"], params[f"dec{i + 1}.bias"])
        h = nn.upsample_nearest2d(nn.leaky_relu(h, slope))
    return h


def proto_combine(params, features, proto):
    """Final conv over ``concat(features, proto)`` followed by a sigmoid.

    The final kernel is applied as two slices (feature channels, prototype
    channels) so the feature half can be shared between prototype kinds;
    this is the same linear map as convolving the concatenation.
    """
    return nn.sigmoid(_final_feature_part(params, features) + _final_proto_part(params, features, proto))


def _final_feature_part(params, features):
    c = features.shape[1]
    w = params["final.weight"]
    if w.shape[1] != c + params.meta["proto_channels"]:
        raise ValueError(f"final conv expects {w.shape[1]} input channels, features have {c}")
    return nn.conv2d(features, w[:, :c], params["final.bias"])


def _final_proto_part(params, features, proto):
    c = features.shape[1]
    proto = np.asarray(proto, dtype=features.dtype)
    if proto.ndim == 3:
        proto = np.broadcast_to(proto, (features.shape[0],) + proto.shape)
    return nn.conv2d(Tensor(np.ascontiguousarray(proto)), params["final.weight"][:, c:])


def _labels(y, n):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.size == 1 and n > 1:
        y = np.repeat(y, n)
    if y.size != n:
        raise ValueError(f"got {y.size} gender labels for {n} images")
    return y


def autoencode(params, x, ps, y, kind="SM"):
    """Perturbed image ``[N, 1, H, W]`` using the ``kind`` prototype at the output.

    The encoder always sees the same-gender prototype; ``kind`` only changes
    what the proto-combiner appends before the final conv.
    """
    x = _as_batch(x)
    y = _labels(y, x.shape[0])
    dec = decode(params, encode(params, x, prototype_batch(ps, y, "SM")))
    return proto_combine(params, dec, prototype_batch(ps, y, kind))


@dataclass
class PerturbationTriple:
    x_sm: Tensor
    x_nt: Tensor
    x_op: Tensor
    decoded: Tensor = None


def perturb_triple(params, x, ps, y, kinds=("SM", "NT", "OP")):
    """SM/NT/OP outputs sharing a single encoder/decoder pass.

    Kinds left out of ``kinds`` come back as ``None`` (training skips NT).
    """
    x = _as_batch(x)
    y = _labels(y, x.shape[0])
    dec = decode(params, encode(params, x, prototype_batch(ps, y, "SM")))
    shared = _final_feature_part(params, dec)
    out = {}
    for kind in kinds:
        z = shared + _final_proto_part(params, dec, prototype_batch(ps, y, kind))
        out[kind] = nn.sigmoid(z)
    return PerturbationTriple(out.get("SM"), out.get("NT"), out.get("OP"), decoded=dec)


# ---------------------------------------------------------------------------
# subnetworks II / III share a conv trunk
# ---------------------------------------------------------------------------

def _build_trunk(store, rng, channels, in_channels, dtype):
    c = in_channels
    for i, k in enumerate(channels):
        conv_params(store, f"conv{i + 1}", rng, c, k, dtype=dtype)
        c = k


def trunk_features(params, x):
    """Conv blocks (conv, leaky ReLU, 2x2 ceil-mode max pool) -> final feature map."""
    slope = params.meta["leaky_slope"]
    h = _as_batch(x)
    for i in range(len(params.meta["channels"])):
        h = nn.conv2d(h, params[f"conv{i + 1}.weight"], params[f"conv{i + 1}.bias"])
        h = nn.max_pool2d(nn.leaky_relu(h, slope), ceil_mode=True)
    return h


def build_gender_classifier(seed, image_size, channels, hidden=256, dropout=0.5,
                            leaky_slope=0.2, dtype=np.float32):
    rng = _rng(seed)
    channels = list(channels)
    final = pooled_size(image_size, len(channels))
    store = ParamStore({
        "subnetwork": CLASSIFIER,
        "image_size": image_size,
        "channels": channels,
        "hidden": hidden,
        "dropout": dropout,
        "leaky_slope": leaky_slope,
    })
    _build_trunk(store, rng, channels, 1, dtype)
    dense_params(store, "fc1", rng, final * final * channels[-1], hidden, dtype=dtype)
    dense_params(store, "fc2", rng, hidden, 1, dtype=dtype)
    return store


def gender_logit(params, x, training=False, rng=None):
    p = params.meta.get("dropout", 0.5) if training else 0.0
    if training and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    h = nn.flatten(trunk_features(params, x))
    h = nn.dropout(h, p, rng, training)
    h = nn.leaky_relu(nn.dense(h, params["fc1.weight"], params["fc1.bias"]), params.meta["leaky_slope"])
    h = nn.dropout(h, p, rng, training)
    z = nn.dense(h, params["fc2.weight"], params["fc2.bias"])
    return z.reshape(-1)


def gender_forward(params, x, training=False, rng=None):
    """P(male) per image, shape ``[N]``. Dropout only when ``training``."""
    return nn.sigmoid(gender_logit(params, x, training, rng))


def build_matcher(seed, image_size, channels, descriptor_dim=64, n_train_identities=None,
                  leaky_slope=0.2, dtype=np.float32):
    """Descriptor network; with ``n_train_identities`` an identity head is added for training."""
    rng = _rng(seed)
    channels = list(channels)
    final = pooled_size(image_size, len(channels))
    store = ParamStore({
        "subnetwork": MATCHER,
        "image_size": image_size,
        "channels": channels,
        "descriptor_dim": descriptor_dim,
        "leaky_slope": leaky_slope,
    })
    _build_trunk(store, rng, channels, 1, dtype)
    dense_params(store, "embed", rng, final * final * channels[-1], descriptor_dim, dtype=dtype)
    if n_train_identities:
        store.add("head.weight", he_uniform(rng, (descriptor_dim, n_train_identities), descriptor_dim, dtype))
    return store


def matcher_embed(params, x):
    """Descriptor ``[N, descriptor_dim]`` of fixed length ``DESCRIPTOR_SCALE``.

    A linear projection of the trunk, L2-normalised, then scaled. Normalising
    makes the descriptor insensitive to overall activation strength; the scale
    sets the size of the matching loss relative to the gender loss.
    """
    h = nn.flatten(trunk_features(params, x))
    return nn.l2_normalize(nn.dense(h, params["embed.weight"], params["embed.bias"])) * DESCRIPTOR_SCALE


def identity_logits(params, x):
    return nn.dense(matcher_embed(params, x), params["head.weight"])


def drop_head(params):
    """Copy of a matcher without its identity-classification head."""
    out = ParamStore(params.meta)
    for name, t in params.items():
        if not name.startswith("head."):
            out.add(name, Tensor(t.data.copy()), trainable=params.is_trainable(name))
    return out


def adapt_rgb_filters_to_gray(first_layer_kernel):
    """Sum a ``[K, 3, kh, kw]`` RGB kernel over its input channels -> ``[K, 1, kh, kw]``.

    On a gray image (R = G = B) the adapted kernel gives the same response
    as the original kernel on the RGB replica.
    """
    k = np.asarray(first_layer_kernel.data if isinstance(first_layer_kernel, Tensor) else first_layer_kernel)
    if k.ndim != 4 or k.shape[1] != 3:
        raise ValueError(f"expected a [K, 3, kh, kw] kernel, got shape {k.shape}")
    return k.sum(axis=1, keepdims=True)
