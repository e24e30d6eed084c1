"""Deterministic MLP policy with hand-rolled first- and second-order products.

The network maps an observation ``s`` to an action

    a = beta * (W_L tanh(... tanh(W_1 s + b_1) ...) + b_L)

Every derivative product the optimizer needs is written out explicitly:

* ``param_jvp`` / ``param_vjp``: (da/dtheta) v and (da/dtheta)^T u
* ``state_jacobian``: J = da/ds
* ``statejac_param_jvp`` / ``statejac_param_vjp``: (d vec J/dtheta) v and its
  transpose, i.e. forward-over-reverse on the layer recursion of J.

All functions accept a single observation of shape ``(d_s,)`` or a batch of
shape ``(n, d_s)``. Products that return parameter-space vectors sum over the
batch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_MAGIC = b"TDPOCKPT"
CHECKPOINT_VERSION = 1


class PolicyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Flat parameter vector of a fixed-shape MLP.

    ``sizes`` lists layer widths from observation to action, e.g.
    ``(3, 64, 64, 1)``. Two entries give a purely linear policy.
    """

    sizes: tuple[int, ...]
    flat: np.ndarray
    action_scale: float = 1.0
    bias: bool = True
    _layers: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise PolicyError(f"invalid layer sizes {sizes}")
        flat = np.array(self.flat, dtype=np.float64).ravel()
        expected = num_params(sizes, self.bias)
        if flat.size != expected:
            raise PolicyError(
                f"flat parameter length {flat.size} does not match architecture "
                f"{sizes} (expected {expected})"
            )
        if not np.all(np.isfinite(flat)):
            raise PolicyError("policy parameters must be finite")
        flat.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "action_scale", float(self.action_scale))
        object.__setattr__(self, "_layers", _unpack(flat, sizes, self.bias))

    @property
    def obs_dim(self) -> int:
        return self.sizes[0]

    @property
    def act_dim(self) -> int:
        return self.sizes[-1]

    @property
    def size(self) -> int:
        return self.flat.size

    def with_flat(self, flat: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.sizes, flat, self.action_scale, self.bias)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        return forward(self, s)

    def same_architecture(self, other: "PolicyParams") -> bool:
        return (
            self.sizes == other.sizes
            and self.bias == other.bias
            and self.action_scale == other.action_scale
        )


def num_params(sizes: Sequence[int], bias: bool = True) -> int:
    return sum((fan_in + int(bias)) * fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:]))


def _unpack(flat: np.ndarray, sizes: Sequence[int], bias: bool) -> list:
    layers = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = flat[offset : offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        if bias:
            b = flat[offset : offset + fan_out]
            offset += fan_out
        else:
            b = None
        layers.append((W, b))
    return layers


def _pack(grads: list, bias: bool) -> np.ndarray:
    parts = []
    for gW, gb in grads:
        parts.append(gW.ravel())
        if bias:
            parts.append(gb)
    return np.concatenate(parts)


def init_params(
    sizes: Sequence[int],
    rng: np.random.Generator,
    action_scale: float = 1.0,
    bias: bool = True,
    output_gain: float = 0.01,
) -> PolicyParams:
    """Glorot-uniform weights, zero biases, output layer shrunk by ``output_gain``."""
    grads = []
    n_layers = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        if i == n_layers - 1:
            W *= output_gain
        grads.append((W, np.zeros(fan_out)))
    return PolicyParams(tuple(sizes), _pack(grads, bias), action_scale, bias)


def zeros_like_policy(policy: PolicyParams) -> PolicyParams:
    return policy.with_flat(np.zeros(policy.size))


# --- activations -----------------------------------------------------------
# Hidden layers use tanh, the output layer is linear.


def _act(z, hidden):
    return np.tanh(z) if hidden else z


def _dact(z, hidden):
    if hidden:
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def _ddact(z, hidden):
    if hidden:
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    return np.zeros_like(z)


def _as_batch(policy: PolicyParams, s) -> tuple[np.ndarray, bool]:
    S = np.asarray(s, dtype=np.float64)
    single = S.ndim == 1
    if single:
        S = S[None, :]
    if S.ndim != 2 or S.shape[1] != policy.obs_dim:
        raise PolicyError(
            f"observation shape {np.shape(s)} incompatible with input size {policy.obs_dim}"
        )
    return S, single


def _check_vec(v, n: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != n:
        raise PolicyError(f"{what} has length {v.size}, expected {n}")
    return v


def _forward_cache(policy: PolicyParams, S: np.ndarray):
    hs = [S]
    zs = []
    n_layers = len(policy._layers)
    h = S
    for i, (W, b) in enumerate(policy._layers):
        z = h @ W.T
        if b is not None:
            z = z + b
        hidden = i < n_layers - 1
        h = _act(z, hidden)
        zs.append(z)
        hs.append(h)
    return hs, zs


def _tangent(policy: PolicyParams, v: np.ndarray) -> list:
    return _unpack(v, policy.sizes, policy.bias)


# --- first order ---------------------------------------------------------


def forward(policy: PolicyParams, s) -> np.ndarray:
    """Action(s) for observation(s) ``s``."""
    S, single = _as_batch(policy, s)
    hs, _ = _forward_cache(policy, S)
    a = policy.action_scale * hs[-1]
    return a[0] if single else a


def _jvp_pass(policy, S, v):
    """Returns activations, pre-activations and their tangents along ``v``."""
    hs, zs = _forward_cache(policy, S)
    n_layers = len(policy._layers)
    dh = np.zeros_like(S)
    dzs = []
    for i, ((W, _), (VW, Vb), z, h_prev) in enumerate(
        zip(policy._layers, _tangent(policy, v), zs, hs[:-1])
    ):
        dz = h_prev @ VW.T + dh @ W.T
        if Vb is not None:
            dz = dz + Vb
        dzs.append(dz)
        dh = _dact(z, i < n_layers - 1) * dz
    return hs, zs, dzs, dh


def param_jvp(policy: PolicyParams, s, v) -> np.ndarray:
    """(da/dtheta) v, by forward-mode propagation."""
    v = _check_vec(v, policy.size, "parameter tangent")
    S, single = _as_batch(policy, s)
    *_, dh = _jvp_pass(policy, S, v)
    out = policy.action_scale * dh
    return out[0] if single else out


def param_vjp(policy: PolicyParams, s, u) -> np.ndarray:
    """(da/dtheta)^T u summed over the batch, by reverse-mode propagation.

    ``u`` has shape ``(d_a,)`` for a single observation or ``(n, d_a)``.
    """
    S, single = _as_batch(policy, s)
    U = np.asarray(u, dtype=np.float64)
    if single:
        U = U.reshape(1, -1)
    if U.shape != (S.shape[0], policy.act_dim):
        raise PolicyError(f"cotangent shape {np.shape(u)} incompatible with action size {policy.act_dim}")
    hs, zs = _forward_cache(policy, S)
    n_layers = len(policy._layers)
    g = policy.action_scale * U
    grads = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        W, _ = policy._layers[i]
        grads[i] = (g.T @ hs[i], g.sum(axis=0))
        if i > 0:
            g = (g @ W) * _dact(zs[i - 1], True)
    return _pack(grads, policy.bias)


# --- state Jacobian and its parameter derivatives --------------------------


def _contract_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """sum_{n,d} A[n, o, d] B[n, i, d] as a single matrix product."""
    n, o, d = A.shape
    return A.transpose(1, 0, 2).reshape(o, n * d) @ B.transpose(1, 0, 2).reshape(B.shape[1], n * d).T


def _jacobian_chain(policy, S, zs):
    """Layerwise Jacobians M_l = dh_l/ds and pre-activation parts P_l = W_l M_{l-1}."""
    n = S.shape[0]
    M = np.broadcast_to(np.eye(policy.obs_dim), (n, policy.obs_dim, policy.obs_dim))
    Ms = [M]
    Ps = []
    n_layers = len(policy._layers)
    for i, ((W, _), z) in enumerate(zip(policy._layers, zs)):
        P = np.matmul(W, M)
        M = _dact(z, i < n_layers - 1)[:, :, None] * P
        Ps.append(P)
        Ms.append(M)
    return Ms, Ps


def state_jacobian(policy: PolicyParams, s) -> np.ndarray:
    """Exact da/ds with shape ``(d_a, d_s)`` (or ``(n, d_a, d_s)`` for a batch)."""
    S, single = _as_batch(policy, s)
    _, zs = _forward_cache(policy, S)
    Ms, _ = _jacobian_chain(policy, S, zs)
    J = policy.action_scale * Ms[-1]
    return J[0] if single else J


def statejac_param_jvp(policy: PolicyParams, s, v) -> np.ndarray:
    """(d vec J / dtheta) v with J flattened row-major to length ``d_a * d_s``."""
    v = _check_vec(v, policy.size, "parameter tangent")
    S, single = _as_batch(policy, s)
    hs, zs, dzs, _ = _jvp_pass(policy, S, v)
    Ms, Ps = _jacobian_chain(policy, S, zs)
    n_layers = len(policy._layers)
    dM = np.zeros_like(Ms[0])
    for i, ((W, _), (VW, _), z, dz) in enumerate(zip(policy._layers, _tangent(policy, v), zs, dzs)):
        hidden = i < n_layers - 1
        dP = np.matmul(VW, Ms[i]) + np.matmul(W, dM)
        dM = (_ddact(z, hidden) * dz)[:, :, None] * Ps[i] + _dact(z, hidden)[:, :, None] * dP
    out = (policy.action_scale * dM).reshape(S.shape[0], -1)
    return out[0] if single else out


def statejac_param_vjp(policy: PolicyParams, s, U) -> np.ndarray:
    """(d vec J / dtheta)^T U summed over the batch.

    Reverse sweep through both the Jacobian recursion and the activation
    chain, since each layer's derivative factor depends on the parameters
    below it.
    """
    S, single = _as_batch(policy, s)
    n, d_a, d_s = S.shape[0], policy.act_dim, policy.obs_dim
    U = np.asarray(U, dtype=np.float64)
    if U.size != n * d_a * d_s:
        raise PolicyError(f"Jacobian cotangent has size {U.size}, expected {n * d_a * d_s}")
    U_bar = policy.action_scale * U.reshape(n, d_a, d_s)
    hs, zs = _forward_cache(policy, S)
    Ms, Ps = _jacobian_chain(policy, S, zs)
    n_layers = len(policy._layers)
    h_bar = np.zeros((n, d_a))
    grads = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        W, _ = policy._layers[i]
        hidden = i < n_layers - 1
        D = _dact(zs[i], hidden)
        P_bar = D[:, :, None] * U_bar
        d_bar = (U_bar * Ps[i]).sum(axis=2)
        z_bar = _ddact(zs[i], hidden) * d_bar + D * h_bar
        gW = _contract_batch(P_bar, Ms[i]) + z_bar.T @ hs[i]
        grads[i] = (gW, z_bar.sum(axis=0))
        U_bar = np.matmul(W.T, P_bar)
        h_bar = z_bar @ W
    return _pack(grads, policy.bias)


# --- checkpoints -------------------------------------------------------------
# Layout (little-endian): magic, u32 version, u32 n_sizes, u32 sizes..., f64 beta,
# u8 bias, u64 n_params, f64 params...


def save_checkpoint(policy: PolicyParams, path) -> None:
    sizes = policy.sizes
    header = CHECKPOINT_MAGIC + struct.pack(
        f"<II{len(sizes)}IdBQ",
        CHECKPOINT_VERSION,
        len(sizes),
        *sizes,
        policy.action_scale,
        int(policy.bias),
        policy.size,
    )
    Path(path).write_bytes(header + policy.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> PolicyParams:
    data = Path(path).read_bytes()
    m = len(CHECKPOINT_MAGIC)
    if data[:m] != CHECKPOINT_MAGIC:
        raise PolicyError(f"{path}: not a policy checkpoint")
    try:
        version, n_sizes = struct.unpack_from("<II", data, m)
        if version != CHECKPOINT_VERSION:
            raise PolicyError(f"{path}: unsupported checkpoint version {version}")
        off = m + 8
        sizes = struct.unpack_from(f"<{n_sizes}I", data, off)
        off += 4 * n_sizes
        beta, bias, count = struct.unpack_from("<dBQ", data, off)
        off += struct.calcsize("<dBQ")
    except struct.error as exc:
        raise PolicyError(f"{path}: truncated checkpoint header") from exc
    if len(data) - off != 8 * count:
        raise PolicyError(f"{path}: expected {count} parameters, found {(len(data) - off) / 8:g}")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
    return PolicyParams(tuple(sizes), flat, beta, bool(bias))
