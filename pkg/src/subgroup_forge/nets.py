"""Trainable networks, invariant and otherwise.

Every network maps a batch ``(B, d)`` to ``(B, 1)``. Pooling over set
elements or orbit positions goes through ``sorted_group_sum`` so invariance
does not depend on summation order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from subgroup_forge import autodiff as ad
from subgroup_forge.groups import DimensionError, SubgroupSpec, element_array


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    def named_params(self, prefix=""):
        out = []
        for name, value in vars(self).items():
            if isinstance(value, ad.Node) and value.requires_grad:
                out.append((prefix + name, value))
            elif isinstance(value, Module):
                out.extend(value.named_params(prefix + name + "."))
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, sub in enumerate(value):
                    out.extend(sub.named_params(f"{prefix}{name}.{i}."))
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    def state_dict(self):
        return {name: p.value.copy() for name, p in self.named_params()}

    def load_state_dict(self, state):
        for name, p in self.named_params():
            if state[name].shape != p.value.shape:
                raise DimensionError(f"{name}: checkpoint shape {state[name].shape} != {p.value.shape}")
            p.value[...] = state[name]

    def predict(self, X, batch: int = 8192) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        parts = [self(ad.constant(X[i:i + batch])).value[:, 0] for i in range(0, len(X), batch)]
        return np.concatenate(parts) if parts else np.empty(0)


class Dense(Module):
    def __init__(self, rng, fan_in, fan_out):
        self.W = ad.param(xavier(rng, fan_in, fan_out))
        self.b = ad.param(np.zeros(fan_out))

    def __call__(self, x):
        return ad.matmul(x, self.W) + self.b


class MLP(Module):
    """Dense layers with tanh between them; the last layer is linear unless
    ``final_tanh``."""

    def __init__(self, rng, widths, final_tanh=False):
        self.widths = list(widths)
        self.layers = [Dense(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
        self.final_tanh = final_tanh

    def __call__(self, x):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_tanh:
                x = ad.tanh(x)
        return x


def _check_width(X, width, name):
    if X.value.ndim != 2 or X.shape[1] != width:
        raise DimensionError(f"{name} expects input width {width}, got shape {X.shape}")


class SetPool(Module):
    """x -> sum_i inner(x_i) over ``size`` scalar slots; the learned gamma."""

    def __init__(self, rng, size, inner=(32, 32), latent=None):
        self.size = size
        self.latent = latent or size + 1
        self.inner = MLP(rng, [1, *inner, self.latent])

    def __call__(self, X):
        B = X.shape[0]
        h = self.inner(ad.reshape(X, (B * self.size, 1)))
        return ad.sorted_group_sum(ad.reshape(h, (B, self.size * self.latent)), self.size)


class DeepSetsNet(Module):
    """rho(sum_i gamma(x_i)), invariant under every permutation of the n slots."""

    def __init__(self, rng, n, inner=(32, 32), latent=None, outer=(32,)):
        self.n = n
        self.pool = SetPool(rng, n, inner, latent)
        self.outer = MLP(rng, [self.pool.latent, *outer, 1])

    def __call__(self, X):
        _check_width(X, self.n, "DeepSetsNet")
        return self.outer(self.pool(X))


class PassThroughPoolNet(Module):
    """head([y_0..y_{n-1}, sum_i gamma(y_{n+i})]).

    Invariant under permutations of the second block of its 2n inputs; the
    first block passes through untouched.
    """

    def __init__(self, rng, n, inner=(32, 32), latent=None, head=(32,)):
        self.n = n
        self.pool = SetPool(rng, n, inner, latent)
        self.head = MLP(rng, [n + self.pool.latent, *head, 1])

    def __call__(self, X):
        _check_width(X, 2 * self.n, "PassThroughPoolNet")
        n = self.n
        pooled = self.pool(ad.slice_cols(X, n, 2 * n))
        return self.head(ad.concat([ad.slice_cols(X, 0, n), pooled], axis=1))


def orbit_windows(n: int, window: int, dihedral: bool):
    """Column indices of every window of ``window`` consecutive cycle positions.

    Returns (idx of shape (S, window), neighbour) where neighbour[s] is the
    window one step further along the same orientation. Shifts (and, for
    dihedral, reflections) of the input permute these windows among
    themselves and preserve the neighbour relation.
    """
    s = np.arange(n)
    j = np.arange(window)
    idx = (s[:, None] + j[None, :]) % n
    neighbour = (s + 1) % n
    if dihedral:
        idx = np.concatenate([idx, (s[:, None] - j[None, :]) % n])
        neighbour = np.concatenate([neighbour, n + (s - 1) % n])
    return idx, neighbour


class CyclicInvariantNet(Module):
    """Z_n-invariant network over the first n of its inputs.

    A shared MLP reads every cyclic window of ``window`` consecutive
    coordinates; its outputs are averaged over the orbit of windows. With
    ``sum_product`` the orbit average of products of each channel with its
    value one window further along is appended. Any further ``pass_dim``
    inputs bypass the pooling and go straight to the output MLP.
    ``window == n`` gives the full orbit (Reynolds) average of an MLP on the
    whole shifted vector.
    """

    dihedral = False

    def __init__(self, rng, n, pass_dim=0, window=2, hidden=(32,), channels=16,
                 sum_product=True, outer=(32,)):
        if not 1 <= window <= n:
            raise ValueError(f"window {window} out of range 1..{n}")
        self.n, self.pass_dim, self.window = n, pass_dim, window
        self.channels, self.sum_product = channels, sum_product
        idx, neighbour = orbit_windows(n, window, self.dihedral)
        self.orbit = len(idx)
        self._idx = idx.reshape(-1)
        self._nb_cols = (neighbour[:, None] * channels + np.arange(channels)[None, :]).reshape(-1)
        self.local = MLP(rng, [window, *hidden, channels], final_tanh=True)
        feat = channels * (2 if sum_product else 1) + pass_dim
        self.outer = MLP(rng, [feat, *outer, 1])

    def features(self, X):
        B, S, c = X.shape[0], self.orbit, self.channels
        cyc = X if not self.pass_dim else ad.slice_cols(X, 0, self.n)
        win = ad.reshape(ad.take_cols(cyc, self._idx), (B * S, self.window))
        h = ad.reshape(self.local(win), (B, S * c))
        parts = [ad.sorted_group_sum(h, S, 1.0 / S)]
        if self.sum_product:
            parts.append(ad.sorted_group_sum(ad.mul(h, ad.take_cols(h, self._nb_cols)), S, 1.0 / S))
        if self.pass_dim:
            parts.append(ad.slice_cols(X, self.n, self.n + self.pass_dim))
        return ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]

    def __call__(self, X):
        _check_width(X, self.n + self.pass_dim, type(self).__name__)
        return self.outer(self.features(X))


class DihedralInvariantNet(CyclicInvariantNet):
    """D_2n-invariant variant: the window orbit includes both orientations."""

    dihedral = True


class SimpleFC(Module):
    def __init__(self, rng, n, widths=(64, 64)):
        self.n = n
        self.mlp = MLP(rng, [n, *widths, 1])

    def __call__(self, X):
        _check_width(X, self.n, "SimpleFC")
        return self.mlp(X)


class Conv1D(Module):
    """Valid (non-circular) 1-D convolutions followed by dense layers."""

    def __init__(self, rng, n, kernel=3, channels=(8, 8), fc=(32,)):
        self.n, self.kernel = n, kernel
        self.convs = []
        self._cols = []
        length, cin = n, 1
        for cout in channels:
            out_len = length - kernel + 1
            if out_len < 1:
                raise ValueError(f"input of length {n} too short for {len(channels)} convolutions")
            p = np.arange(out_len)[:, None, None]
            j = np.arange(kernel)[None, :, None]
            ch = np.arange(cin)[None, None, :]
            self._cols.append(((p + j) * cin + ch).reshape(-1))
            self.convs.append(Dense(rng, kernel * cin, cout))
            length, cin = out_len, cout
        self.out_len, self.out_ch = length, cin
        self.fc = MLP(rng, [length * cin, *fc, 1])

    def __call__(self, X):
        _check_width(X, self.n, "Conv1D")
        B = X.shape[0]
        h, length = X, self.n
        for conv, cols in zip(self.convs, self._cols):
            length = length - self.kernel + 1
            patches = ad.reshape(ad.take_cols(h, cols), (B * length, -1))
            h = ad.reshape(ad.tanh(conv(patches)), (B, -1))
        return self.fc(h)


class OrbitAveraged(Module):
    """(1/|G|) sum_g f(g . x) for a wrapped network f."""

    def __init__(self, net, group: SubgroupSpec):
        self.net = net
        self.group = group
        self._perms = element_array(group)

    def __call__(self, X):
        B, n = X.shape
        G = len(self._perms)
        moved = ad.reshape(ad.take_cols(X, self._perms.reshape(-1)), (B * G, n))
        vals = ad.reshape(self.net(moved), (B, G))
        return ad.reshape(ad.sorted_group_sum(vals, G, 1.0 / G), (B, 1))


def orbit_average(f, x, group: SubgroupSpec) -> np.ndarray:
    """Group average of ``f`` at ``x`` (a vector or a batch of rows).

    ``f`` may be a network from this module or any callable on arrays that
    returns one value per row.
    """
    x = np.asarray(x, dtype=np.float64)
    batch = np.atleast_2d(x)
    if batch.shape[1] != group.n:
        raise DimensionError(f"input width {batch.shape[1]} != group degree {group.n}")
    perms = element_array(group)
    if isinstance(f, Module):
        vals = np.stack([f.predict(batch[:, g]) for g in perms], axis=1)
    else:
        vals = np.stack([np.asarray(f(batch[:, g]), dtype=np.float64).reshape(-1) for g in perms], axis=1)
    out = np.sort(vals, axis=1).sum(axis=1) / len(perms)
    return out if x.ndim == 2 else out[0]


def save_checkpoint(directory, module: Module, manifest: dict) -> Path:
    """JSON manifest plus one binary tensor file per parameter."""
    return save_state(directory, module.state_dict(), manifest)


def save_state(directory, state: dict, manifest: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, value in state.items():
        fname = name.replace(".", "_") + ".bin"
        ad.save_tensor(directory / fname, value)
        files[name] = fname
    body = dict(manifest, tensors=files)
    (directory / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def load_checkpoint(directory, module: Module) -> dict:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    state = {name: ad.load_tensor(directory / fname) for name, fname in manifest["tensors"].items()}
    module.load_state_dict(state)
    return manifest
