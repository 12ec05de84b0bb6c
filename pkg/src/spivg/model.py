"""Model assembly: all learnable parameters plus the end-to-end forward pass.

Channel layout into fusion is fixed: channel 0 is the spiking extractor
(surrogate-relaxed values during training, hard spikes at inference, both
prepended with 0 to align with the T frame scores), channels 1..3 are the
forward/backward/undirected reasoner outputs.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import fusion, reasoner, spike, textfuse
from .config import N_CHANNELS, PipelineConfig
from .errors import SpivgError
from .gradtape import Tape, Tensor, float32_grid, load_params, save_params


class SpivgModel:
    def __init__(self, cfg: PipelineConfig, dim: int, text_dim: int | None = None,
                 rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        cfg.validate()
        self.cfg = cfg
        self.dim = dim
        self.text_dim = text_dim

        self.snn_c_m = Tensor(float32_grid(np.asarray(cfg.neuron.c_m)), requires_grad=True)
        self.snn_g_l = Tensor(float32_grid(np.asarray(cfg.neuron.g_l)), requires_grad=True)
        self.snn_e_l = Tensor(float32_grid(np.asarray(cfg.neuron.e_l)), requires_grad=True)
        self.snn_gains = Tensor(np.ones(cfg.snn.layers), requires_grad=True)

        self.channels = {
            kind: reasoner.init_channel(dim, cfg.reasoner.layers, cfg.reasoner.tau_cos,
                                        rng, cfg.reasoner.hidden_dim)
            for kind in reasoner.GRAPH_KINDS
        }
        self.gate = (textfuse.init_gate(text_dim, dim, cfg.text.gate_dim, rng)
                     if text_dim else None)
        self.fusion_w = Tensor(np.zeros(len(cfg.fusion.orders)), requires_grad=True)
        self.fusion_b = Tensor(np.zeros(N_CHANNELS), requires_grad=True)
        self._graph_cache = {}

    # -- parameter registry --------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        p = {"snn.c_m": self.snn_c_m, "snn.g_l": self.snn_g_l, "snn.e_l": self.snn_e_l}
        if self.cfg.snn.layers > 0:
            p["snn.gains"] = self.snn_gains
        for kind in reasoner.GRAPH_KINDS:
            ch = self.channels[kind]
            for i, layer in enumerate(ch.layers):
                base = f"reasoner.{kind}.layer{i}"
                p[f"{base}.w1"] = layer.w1
                p[f"{base}.b1"] = layer.b1
                p[f"{base}.w2"] = layer.w2
                p[f"{base}.b2"] = layer.b2
            p[f"reasoner.{kind}.readout.w"] = ch.readout_w
            p[f"reasoner.{kind}.readout.b"] = ch.readout_b
        if self.gate is not None:
            p["gate.w1"] = self.gate.w1
            p["gate.w2"] = self.gate.w2
            p["gate.w3"] = self.gate.w3
            p["gate.b"] = self.gate.b
        p["fusion.w"] = self.fusion_w
        p["fusion.b"] = self.fusion_b
        return p

    def buffers(self) -> dict[str, Tensor]:
        b = {}
        for kind in reasoner.GRAPH_KINDS:
            for i, layer in enumerate(self.channels[kind].layers):
                b[f"reasoner.{kind}.layer{i}.w_filter"] = layer.w_filter
        return b

    def all_tensors(self) -> dict[str, Tensor]:
        return {**self.parameters(), **self.buffers()}

    def clamp_constraints(self):
        """Keep membrane constants physical after optimizer steps (values stay
        on the float32 grid so serialization remains exact)."""
        self.snn_c_m.data = float32_grid(np.maximum(self.snn_c_m.data, 0.05))
        self.snn_g_l.data = float32_grid(np.maximum(self.snn_g_l.data, 0.0))

    def neuron_config(self) -> spike.NeuronConfig:
        """Neuron config carrying the current trained membrane constants."""
        return replace(self.cfg.neuron,
                       c_m=float(self.snn_c_m.data),
                       g_l=float(self.snn_g_l.data),
                       e_l=float(self.snn_e_l.data))

    # -- forward --------------------------------------------------------------

    def _graphs(self, n_frames: int):
        key = (n_frames, self.cfg.reasoner.window)
        if key not in self._graph_cache:
            self._graph_cache[key] = reasoner.build_graphs(n_frames, self.cfg.reasoner.window)
        return self._graph_cache[key]

    def forward(self, tape: Tape, features: np.ndarray, queries: list | None = None,
                training: bool = False, rng: np.random.Generator | None = None) -> dict:
        """Full pipeline on one video; returns tape tensors.

        features: (T, d) array. queries: list of text vectors fused in order.
        """
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.dim:
            raise SpivgError(
                f"forward: features shape {feats.shape} does not match model dim {self.dim}")
        t = feats.shape[0]
        if t <= max(self.cfg.fusion.orders):
            raise SpivgError(
                f"forward: need more than {max(self.cfg.fusion.orders)} frames, got {t}")
        x = Tensor(feats)
        if queries:
            x = textfuse.fuse_queries_op(tape, self.gate, list(queries), x)

        delta = spike.frame_diff_op(tape, x)
        z = spike.standardize_op(tape, delta) if self.cfg.snn.standardize else delta
        n_layers = self.cfg.snn.layers
        if n_layers == 0:
            k0_body = z
        elif training:
            k0_body = spike.snn_forward_relaxed(
                tape, z, self.cfg.neuron, n_layers,
                self.snn_c_m, self.snn_g_l, self.snn_e_l, self.snn_gains,
                width=self.cfg.snn.surrogate_width)
        else:
            hard, _ = spike.snn_forward(self.neuron_config(), n_layers,
                                        z.numpy(), self.snn_gains.numpy())
            k0_body = Tensor(hard)
        k0 = tape.concat([Tensor(np.zeros(1)), k0_body])

        graphs = self._graphs(t)
        keep = 1.0 - self.cfg.optimizer.dropout if training else 1.0
        ks = [k0]
        for graph, kind in zip(graphs, reasoner.GRAPH_KINDS):
            ks.append(reasoner.channel_forward(tape, self.channels[kind], x, graph,
                                               dropout_keep=keep, rng=rng))

        precisions = []
        for i, k in enumerate(ks):
            expo = fusion.variance_exponent_op(tape, self.fusion_w, self.fusion_b,
                                               i, k, self.cfg.fusion.orders)
            precisions.append(tape.exp(tape.scalar_mul(expo, -1.0)))
        mu = fusion.posterior_from_precisions_op(
            tape, ks, precisions,
            self.cfg.fusion.mu0, self.cfg.fusion.sigma0_sq, self.cfg.fusion.sigmay_inv)
        return {"mu": mu, "channels": ks, "precisions": precisions,
                "snn_input": z}

    def infer_forward(self, features: np.ndarray, queries: list | None = None) -> dict:
        """Inference mode (hard spikes, no dropout); plain arrays out."""
        out = self.forward(Tape(), features, queries=queries, training=False)
        return {
            "mu": out["mu"].numpy(),
            "channels": [k.numpy() for k in out["channels"]],
            "variances": [float(1.0 / p.numpy()) for p in out["precisions"]],
        }

    # -- serialization ----------------------------------------------------------

    def params_doc(self) -> dict:
        return save_params(self.all_tensors())

    def load_params_doc(self, doc: dict):
        loaded = load_params(doc)
        own = self.all_tensors()
        missing = sorted(set(own) - set(loaded))
        extra = sorted(set(loaded) - set(own))
        if missing or extra:
            raise SpivgError(
                f"checkpoint parameters do not match model (missing {missing}, extra {extra})")
        for path, tensor in own.items():
            src = loaded[path]
            if src.shape != tensor.shape:
                raise SpivgError(
                    f"checkpoint parameter '{path}' has shape {src.shape}, "
                    f"expected {tensor.shape}")
            tensor.data = src.data
        return self
