"""Equivariant building blocks: vector-neuron layers, GVP blocks, grad checking.

Vector features are tensors shaped (..., C, 3): C channels of 3-vectors that
rotate with the input geometry. Scalar features are plain (..., D) tensors.
"""
from __future__ import annotations

import torch
from torch import nn

_EPS = 1e-12


def random_rotation(generator: torch.Generator | None = None, dtype=torch.float64) -> torch.Tensor:
    """Proper rotation matrix from the QR decomposition of a Gaussian matrix."""
    m = torch.randn(3, 3, generator=generator, dtype=dtype)
    q, r = torch.linalg.qr(m)
    q = q * torch.sign(torch.diagonal(r))
    if torch.linalg.det(q) < 0:
        q = q.clone()
        q[:, 0] = -q[:, 0]
    return q


def rotate(x: torch.Tensor, rot: torch.Tensor) -> torch.Tensor:
    """Apply a rotation to every 3-vector in a (..., 3) tensor."""
    return x @ rot.to(x.dtype).T


class VNLinear(nn.Module):
    """Channel-mixing linear map on vector features; exactly rotation-equivariant."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels))
        nn.init.kaiming_uniform_(self.weight, a=5 ** 0.5)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] != self.weight.shape[1]:
            raise ValueError(
                f"expected {self.weight.shape[1]} vector channels, got {x.shape[-2]}"
            )
        return torch.einsum("oc,...ci->...oi", self.weight.to(x.dtype), x)


class VNLeakyReLU(nn.Module):
    """Vector nonlinearity: damp the component opposing a learned direction.

    Per channel q with direction k: unchanged when <q, k> >= 0, otherwise the
    parallel component is scaled by the leak factor.
    """

    def __init__(self, channels: int, leak: float = 0.2):
        super().__init__()
        self.direction = VNLinear(channels, channels)
        self.leak = leak

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        k = self.direction(x)
        k_hat = k / (k.norm(dim=-1, keepdim=True) + _EPS)
        dot = (x * k_hat).sum(-1, keepdim=True)
        return x - (1.0 - self.leak) * torch.clamp(dot, max=0.0) * k_hat


class VNLinearLeakyReLU(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, leak: float = 0.2):
        super().__init__()
        self.linear = VNLinear(in_channels, out_channels)
        self.act = VNLeakyReLU(out_channels, leak)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.linear(x))


class VNInvariant(nn.Module):
    """Rotation-invariant readout: each channel dotted with a learned direction.

    With the identity weight this reduces to per-channel squared norms.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.direction = VNLinear(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x * self.direction(x)).sum(-1)


class VNMLP(nn.Module):
    """Stack of VN linear + leaky-ReLU layers."""

    def __init__(self, channels: list[int], leak: float = 0.2):
        super().__init__()
        self.layers = nn.ModuleList(
            VNLinearLeakyReLU(c_in, c_out, leak) for c_in, c_out in zip(channels, channels[1:])
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class GVP(nn.Module):
    """Geometric vector perceptron: joint update of scalar and vector channels.

    Scalars see the vector-channel norms (invariant); vectors pass through a
    channel-mixing linear map gated by a function of the scalars (equivariant).
    """

    def __init__(
        self,
        in_dims: tuple[int, int],
        out_dims: tuple[int, int],
        hidden_vector_channels: int | None = None,
        activations=(torch.nn.functional.silu, torch.sigmoid),
        vector_gate: bool = True,
    ):
        super().__init__()
        self.si, self.vi = in_dims
        self.so, self.vo = out_dims
        self.vector_gate = vector_gate
        self.scalar_act, self.vector_act = activations
        if self.vi == 0:
            raise ValueError("GVP expects at least one input vector channel")
        self.h_dim = hidden_vector_channels or max(self.vi, self.vo)
        self.wh = VNLinear(self.vi, self.h_dim)
        self.ws = nn.Linear(self.h_dim + self.si, self.so)
        if self.vo:
            self.wv = VNLinear(self.h_dim, self.vo)
            if vector_gate:
                self.wsv = nn.Linear(self.so, self.vo)

    def forward(self, s: torch.Tensor, v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if s.shape[-1] != self.si or v.shape[-2] != self.vi:
            raise ValueError(
                f"GVP got scalars {tuple(s.shape)} / vectors {tuple(v.shape)}, "
                f"expected {self.si} scalar and {self.vi} vector channels"
            )
        vh = self.wh(v)
        vn = torch.sqrt((vh * vh).sum(-1) + _EPS)
        s_out = self.ws(torch.cat([s, vn], dim=-1))
        v_out = v.new_zeros(*v.shape[:-2], 0, 3)
        if self.vo:
            v_out = self.wv(vh)
            if self.vector_gate:
                gate = self.wsv(self.vector_act(s_out) if self.vector_act else s_out)
                v_out = v_out * torch.sigmoid(gate).unsqueeze(-1)
            elif self.vector_act:
                v_out = v_out * self.vector_act(v_out.norm(dim=-1, keepdim=True))
        if self.scalar_act:
            s_out = self.scalar_act(s_out)
        return s_out, v_out


class GVPStack(nn.Module):
    """Several chained GVPs; the last layer keeps its outputs unactivated."""

    def __init__(self, in_dims, out_dims, n_layers: int = 3, vector_gate: bool = True):
        super().__init__()
        layers = []
        if n_layers == 1:
            layers.append(GVP(in_dims, out_dims, activations=(None, None), vector_gate=vector_gate))
        else:
            layers.append(GVP(in_dims, out_dims, vector_gate=vector_gate))
            for _ in range(n_layers - 2):
                layers.append(GVP(out_dims, out_dims, vector_gate=vector_gate))
            layers.append(GVP(out_dims, out_dims, activations=(None, None), vector_gate=vector_gate))
        self.layers = nn.ModuleList(layers)

    def forward(self, s: torch.Tensor, v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        for layer in self.layers:
            s, v = layer(s, v)
        return s, v


def mlp(dims: list[int], act=nn.SiLU, final_act: bool = False) -> nn.Sequential:
    layers: list[nn.Module] = []
    for k, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        layers.append(nn.Linear(d_in, d_out))
        if k < len(dims) - 2 or final_act:
            layers.append(act())
    return nn.Sequential(*layers)


def grad_check(op, inputs, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode gradients and central differences.

    `op` must be scalar-valued and the inputs double precision; the comparison
    runs per entry with errors relative to max(1, |grad|).
    """
    leaves = []
    for x in inputs:
        if x.dtype != torch.float64:
            raise ValueError("grad_check requires float64 inputs")
        leaves.append(x.detach().clone().requires_grad_(True))
    out = op(*leaves)
    if out.numel() != 1:
        raise ValueError("grad_check requires a scalar-valued op")
    if not torch.isfinite(out):
        raise FloatingPointError("non-finite value in grad_check forward pass")
    grads = torch.autograd.grad(out, leaves, allow_unused=True)

    worst = 0.0
    for leaf, grad in zip(leaves, grads):
        analytic = torch.zeros_like(leaf) if grad is None else grad
        flat = leaf.detach().reshape(-1)
        for idx in range(flat.numel()):
            orig = flat[idx].item()
            flat[idx] = orig + eps
            up = op(*[l.detach() for l in leaves])
            flat[idx] = orig - eps
            down = op(*[l.detach() for l in leaves])
            flat[idx] = orig
            if not (torch.isfinite(up) and torch.isfinite(down)):
                raise FloatingPointError("non-finite value while probing finite differences")
            numeric = (up - down).item() / (2.0 * eps)
            a = analytic.reshape(-1)[idx].item()
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
