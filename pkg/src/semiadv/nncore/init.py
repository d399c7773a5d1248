import numpy as np


def he_uniform(rng, shape, fan_in, dtype=np.float32):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def conv_params(store, prefix, rng, c_in, c_out, k=3, dtype=np.float32):
    store.add(f"{prefix}.weight", he_uniform(rng, (c_out, c_in, k, k), c_in * k * k, dtype))
    store.add(f"{prefix}.bias", np.zeros(c_out, dtype=dtype))


def dense_params(store, prefix, rng, d_in, d_out, dtype=np.float32):
    store.add(f"{prefix}.weight", he_uniform(rng, (d_in, d_out), d_in, dtype))
    store.add(f"{prefix}.bias", np.zeros(d_out, dtype=dtype))
