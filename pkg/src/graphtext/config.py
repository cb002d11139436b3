"""One flat run configuration shared by every CLI subcommand.

The JSON config file holds the same field names as RunConfig; unknown
keys are rejected so typos fail loudly. Command-line flags override file
values, and the merged result is written next to the run's outputs so
any run can be reproduced from its own directory.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .data import DEFAULT_PROMPT, DataError
from .decoding import MODES, DecodeConfig
from .gnn import FAMILIES, SAGE_AGGREGATORS, GnnConfig
from .model import VARIATIONS, ModelConfig
from .training import FREEZE_MODES, TrainConfig


@dataclass
class RunConfig:
    # data handling
    prompt: str = DEFAULT_PROMPT
    vocab_min_count: int = 1
    max_sequence_length: int = 187
    max_target_length: int = 120
    # model shape
    d_model: int = 64
    num_heads: int = 4
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    feedforward_dim: int = 128
    variation: str = "GRASAME"
    gnn_family: str = "SAGE"
    sage_aggregator: str = "MEAN"
    gat_heads: int = 4
    tie_embeddings: bool = True
    # optimization
    epochs: int = 10
    batch_size: int = 10
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    lambda_gr: float = 0.08
    freeze_mode: str = "NONE"
    disable_gr_loss: bool = False
    unidirectional_edges: bool = False
    seed: int = 123
    eval_every: int = 1
    stop_token_accuracy: float | None = None
    stop_gr_accuracy: float | None = None
    # decoding
    decode_mode: str = "BEAM"
    beam_size: int = 3
    length_penalty: float = 1.0

    def __post_init__(self) -> None:
        self.variation = self.variation.upper()
        self.gnn_family = self.gnn_family.upper()
        self.sage_aggregator = self.sage_aggregator.upper()
        self.freeze_mode = self.freeze_mode.upper()
        self.decode_mode = self.decode_mode.upper()
        for value, allowed, label in (
                (self.variation, VARIATIONS, "variation"),
                (self.gnn_family, FAMILIES, "gnn_family"),
                (self.sage_aggregator, SAGE_AGGREGATORS, "sage_aggregator"),
                (self.freeze_mode, FREEZE_MODES, "freeze_mode"),
                (self.decode_mode, MODES, "decode_mode")):
            if value not in allowed:
                raise ValueError(f"{label} must be one of {allowed}")

    def model_config(self, vocab_size: int) -> ModelConfig:
        gnn = None
        if self.variation.upper() != "BASE":
            gnn = GnnConfig(family=self.gnn_family, in_dim=self.d_model,
                            out_dim=self.d_model, gat_heads=self.gat_heads,
                            sage_aggregator=self.sage_aggregator)
        return ModelConfig(
            vocab_size=vocab_size, d_model=self.d_model,
            num_heads=self.num_heads,
            num_encoder_layers=self.num_encoder_layers,
            num_decoder_layers=self.num_decoder_layers,
            feedforward_dim=self.feedforward_dim, variation=self.variation,
            gnn=gnn, max_sequence_length=self.max_sequence_length,
            max_target_length=self.max_target_length,
            tie_embeddings=self.tie_embeddings)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, beta1=self.beta1,
            beta2=self.beta2, adam_eps=self.adam_eps,
            clip_norm=self.clip_norm, lambda_gr=self.lambda_gr,
            freeze_mode=self.freeze_mode,
            disable_gr_loss=self.disable_gr_loss,
            unidirectional_edges=self.unidirectional_edges, seed=self.seed,
            eval_every=self.eval_every,
            stop_token_accuracy=self.stop_token_accuracy,
            stop_gr_accuracy=self.stop_gr_accuracy)

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(mode=self.decode_mode, beam_size=self.beam_size,
                            max_target_length=self.max_target_length,
                            length_penalty=self.length_penalty)


def _field_names() -> set[str]:
    return {f.name for f in dataclasses.fields(RunConfig)}


def load_config(path: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus overrides."""
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"config is not valid JSON: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise DataError("config file must hold a JSON object")
        unknown = sorted(set(raw) - _field_names())
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        values.update(raw)
    if overrides:
        for key, val in overrides.items():
            if key not in _field_names():
                raise DataError(f"unknown config key: {key}")
            if val is not None:
                values[key] = val
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad config value: {exc}") from None


def save_config(config: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
