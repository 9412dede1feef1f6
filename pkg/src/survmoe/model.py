"""Dual mixture-of-experts discrete-time hazard model.

Architecture: a shared encoder feeds K expert encoders mixed by a softmax
router; the mixed representation plus a learned per-bin time embedding feeds
L hazard experts mixed by a second router. Expert logits are mixed in logit
space and pass through one sigmoid, so every per-bin hazard stays in (0, 1).
Disabling either mixture (expert count 1, no router) recovers the plain
single-network model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode, ParameterStore, glorot_uniform, rng_for
from .errors import ConfigurationError, UsageError

ROUTER_INPUTS = ("features_only", "time_only", "both")


@dataclass(frozen=True)
class DualMoeConfig:
    input_dim: int
    max_bin: int  # last time-bin index; hazard curves have max_bin + 1 entries
    encoder_depth: int = 4
    hidden_width: int = 64
    feature_expert_depth: int = 1
    hazard_expert_depth: int = 1
    n_feature_experts: int = 4
    n_hazard_experts: int = 4
    time_embed_dim: int = 8
    feat_balance_coef: float = 0.3
    hazard_balance_coef: float = 0.5
    feature_moe_enabled: bool = True
    hazard_moe_enabled: bool = True
    hazard_router_input: str = "both"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if self.max_bin < 1:
            raise ConfigurationError("max_bin must be >= 1")
        if self.time_embed_dim < 1:
            raise ConfigurationError("time_embed_dim must be >= 1")
        if self.n_feature_experts < 1 or self.n_hazard_experts < 1:
            raise ConfigurationError("expert counts must be >= 1")
        if not self.feature_moe_enabled and self.n_feature_experts != 1:
            raise ConfigurationError("feature_moe_enabled=False requires n_feature_experts=1")
        if not self.hazard_moe_enabled and self.n_hazard_experts != 1:
            raise ConfigurationError("hazard_moe_enabled=False requires n_hazard_experts=1")
        if self.hazard_router_input not in ROUTER_INPUTS:
            raise ConfigurationError(
                f"hazard_router_input must be one of {ROUTER_INPUTS}, got {self.hazard_router_input!r}"
            )

    @property
    def n_bins(self) -> int:
        return self.max_bin + 1

    def naive(self) -> "DualMoeConfig":
        """The single-encoder, single-hazard-network degenerate of this config."""
        return replace(
            self,
            n_feature_experts=1,
            n_hazard_experts=1,
            feature_moe_enabled=False,
            hazard_moe_enabled=False,
            feat_balance_coef=0.0,
            hazard_balance_coef=0.0,
        )

    def to_entries(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_entries(cls, entries: dict[str, str], **overrides) -> "DualMoeConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in overrides:
                kwargs[f.name] = overrides[f.name]
                continue
            if f.name not in entries:
                continue
            raw = entries[f.name]
            if f.type == "int":
                kwargs[f.name] = int(raw)
            elif f.type == "float":
                kwargs[f.name] = float(raw)
            elif f.type == "bool":
                if raw.lower() not in ("true", "false"):
                    raise ConfigurationError(f"{f.name}: expected true/false, got {raw!r}")
                kwargs[f.name] = raw.lower() == "true"
            else:
                kwargs[f.name] = raw
        for name in ("input_dim", "max_bin"):
            if name in overrides:
                kwargs[name] = overrides[name]
            elif name not in kwargs:
                raise ConfigurationError(f"model config missing {name!r}")
        return cls(**kwargs)


def metabric_defaults(input_dim: int, max_bin: int) -> DualMoeConfig:
    return DualMoeConfig(input_dim=input_dim, max_bin=max_bin, encoder_depth=4,
                         feature_expert_depth=1, n_feature_experts=4, n_hazard_experts=4)


def gbsg_defaults(input_dim: int, max_bin: int) -> DualMoeConfig:
    return DualMoeConfig(input_dim=input_dim, max_bin=max_bin, encoder_depth=3,
                         feature_expert_depth=2, n_feature_experts=6, n_hazard_experts=3)


@dataclass
class HazardCurve:
    """Per-bin hazards with the survival and event-mass curves they induce."""

    hazards: np.ndarray
    survival: np.ndarray = field(init=False)
    event_mass: np.ndarray = field(init=False)

    def __post_init__(self):
        self.hazards = np.asarray(self.hazards, dtype=np.float64)
        self.survival = np.cumprod(1.0 - self.hazards)
        prev = np.concatenate(([1.0], self.survival[:-1]))
        self.event_mass = self.hazards * prev


def survival_from_hazards(hazards: np.ndarray) -> np.ndarray:
    """Row-wise survival curves S(t) = prod_{t' <= t} (1 - hazard_t')."""
    return np.cumprod(1.0 - hazards, axis=-1)


def event_mass_from_hazards(hazards: np.ndarray) -> np.ndarray:
    surv = survival_from_hazards(hazards)
    prev = np.concatenate([np.ones_like(surv[..., :1]), surv[..., :-1]], axis=-1)
    return hazards * prev


@dataclass
class RoutingTrace:
    """Routing probabilities for one patient: feature experts and per-bin hazard experts."""

    pi_feat: np.ndarray  # (K,)
    pi_haz: np.ndarray  # (n_bins, L)


@dataclass
class ForwardGraph:
    """Live graph nodes from one batch forward pass."""

    hazards: DiffNode  # (B, n_bins)
    pi_feat: DiffNode | None  # (B, K) when the feature MoE is enabled
    pi_haz: DiffNode | None  # (B * n_bins, L) when the hazard MoE is enabled
    batch_size: int


def _init_mlp(store: ParameterStore, seed: int, name: str, dims: list[int]) -> None:
    for j in range(len(dims) - 1):
        rng = rng_for(seed, "init", f"{name}.{j}.w")
        store.parameter(f"{name}.{j}.w", glorot_uniform(rng, dims[j], dims[j + 1]))
        store.parameter(f"{name}.{j}.b", np.zeros((1, dims[j + 1])))


def _apply_mlp(store: ParameterStore, name: str, x: DiffNode, n_layers: int,
               relu_output: bool) -> DiffNode:
    for j in range(n_layers):
        x = ad.matmul(x, store[f"{name}.{j}.w"]) + store[f"{name}.{j}.b"]
        if j < n_layers - 1 or relu_output:
            x = ad.relu(x)
    return x


class DualMoeModel:
    """Binds a DualMoeConfig to a ParameterStore and runs forward passes."""

    def __init__(self, config: DualMoeConfig, store: ParameterStore | None = None,
                 seed: int = 0):
        self.config = config
        if store is None:
            store = ParameterStore()
            self._init_parameters(store, seed)
        self.store = store

    def _init_parameters(self, store: ParameterStore, seed: int) -> None:
        c = self.config
        h = c.hidden_width
        _init_mlp(store, seed, "enc", [c.input_dim] + [h] * c.encoder_depth)
        for k in range(c.n_feature_experts):
            _init_mlp(store, seed, f"fe.{k}", [h] * (c.feature_expert_depth + 1) + [h])
        if c.feature_moe_enabled:
            _init_mlp(store, seed, "fr", [h, h, c.n_feature_experts])
        emb = rng_for(seed, "init", "time_emb").normal(0.0, 0.1, size=(c.n_bins, c.time_embed_dim))
        store.parameter("time_emb", emb)
        he_in = h + c.time_embed_dim
        for l in range(c.n_hazard_experts):
            _init_mlp(store, seed, f"he.{l}", [he_in] + [h] * c.hazard_expert_depth + [1])
        if c.hazard_moe_enabled:
            hr_in = {"both": he_in, "features_only": h, "time_only": c.time_embed_dim}
            _init_mlp(store, seed, "hr", [hr_in[c.hazard_router_input], h, c.n_hazard_experts])

    # -- forward pieces -------------------------------------------------------
    def encode(self, x: DiffNode) -> tuple[DiffNode, DiffNode | None]:
        """Mixed representation and feature-routing probabilities for a batch."""
        c = self.config
        if x.value.ndim != 2 or x.value.shape[1] != c.input_dim:
            raise ConfigurationError(
                f"expected features of width {c.input_dim}, got shape {x.value.shape}"
            )
        hidden = _apply_mlp(self.store, "enc", x, c.encoder_depth, relu_output=True)
        expert_outs = [
            _apply_mlp(self.store, f"fe.{k}", hidden, c.feature_expert_depth + 1,
                       relu_output=False)
            for k in range(c.n_feature_experts)
        ]
        if not c.feature_moe_enabled:
            return expert_outs[0], None
        logits = _apply_mlp(self.store, "fr", hidden, 2, relu_output=False)
        pi = ad.softmax_rows(logits)
        mixed = None
        for k, out in enumerate(expert_outs):
            term = ad.mul(ad.slice_cols(pi, k, k + 1), out)
            mixed = term if mixed is None else mixed + term
        return mixed, pi

    def hazard_forward(self, z: DiffNode) -> tuple[DiffNode, DiffNode | None]:
        """Hazards (B, n_bins) and hazard-routing probabilities (B*n_bins, L).

        Rows of the flattened per-(patient, bin) tensors are patient-major:
        row i * n_bins + t belongs to patient i at bin t.
        """
        c = self.config
        batch = z.value.shape[0]
        z_rep = ad.repeat_rows(z, c.n_bins)
        e_rep = ad.tile_rows(self.store["time_emb"], batch)
        expert_in = ad.concat_cols([z_rep, e_rep])
        expert_logits = [
            _apply_mlp(self.store, f"he.{l}", expert_in, c.hazard_expert_depth + 1,
                       relu_output=False)
            for l in range(c.n_hazard_experts)
        ]
        if c.hazard_moe_enabled:
            router_in = {"both": expert_in, "features_only": z_rep, "time_only": e_rep}
            logits = _apply_mlp(self.store, "hr", router_in[c.hazard_router_input], 2,
                                relu_output=False)
            pi = ad.softmax_rows(logits)
            mixed = None
            for l, out in enumerate(expert_logits):
                term = ad.mul(ad.slice_cols(pi, l, l + 1), out)
                mixed = term if mixed is None else mixed + term
        else:
            pi = None
            mixed = expert_logits[0]
        hazards = ad.reshape(ad.sigmoid(mixed), (batch, c.n_bins))
        return hazards, pi

    def forward(self, x: np.ndarray | DiffNode) -> ForwardGraph:
        """Full batch forward pass building the differentiable graph."""
        if not isinstance(x, DiffNode):
            x = ad.constant(np.asarray(x, dtype=np.float64))
        if x.value.ndim != 2:
            raise UsageError(f"forward expects a (batch, features) matrix, got {x.value.shape}")
        if x.value.shape[0] == 0:
            raise UsageError("forward called with an empty batch")
        z, pi_feat = self.encode(x)
        hazards, pi_haz = self.hazard_forward(z)
        return ForwardGraph(hazards=hazards, pi_feat=pi_feat, pi_haz=pi_haz,
                            batch_size=x.value.shape[0])

    # -- inference views ------------------------------------------------------
    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Hazards (B, n_bins), pi_feat (B, K), pi_haz (B, n_bins, L) as arrays."""
        c = self.config
        g = self.forward(x)
        batch = g.batch_size
        if g.pi_feat is None:
            pi_feat = np.ones((batch, 1))
        else:
            pi_feat = g.pi_feat.value.copy()
        if g.pi_haz is None:
            pi_haz = np.ones((batch, c.n_bins, 1))
        else:
            pi_haz = g.pi_haz.value.reshape(batch, c.n_bins, c.n_hazard_experts).copy()
        return g.hazards.value.copy(), pi_feat, pi_haz

    def predict_curve(self, x_vector: np.ndarray) -> tuple[HazardCurve, RoutingTrace]:
        """Single-record path: hazard curve plus routing trace."""
        x = np.asarray(x_vector, dtype=np.float64)
        if x.ndim != 1:
            raise UsageError("predict_curve expects a single feature vector")
        hazards, pi_feat, pi_haz = self.predict(x[None, :])
        return HazardCurve(hazards[0]), RoutingTrace(pi_feat=pi_feat[0], pi_haz=pi_haz[0])
