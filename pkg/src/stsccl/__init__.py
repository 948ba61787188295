"""Contrastive spatiotemporal traffic forecasting at desk scale."""

from .augmentation import (AugmentationConfig, AugmentedViews, ViewGenerator, attr_mask, augment_views,
                           basic_augment, edge_mask, strong_augment, temporal_scale_fusion, view_generator_forward)
from .contrastive import (ContrastiveConfig, ContrastiveHeads, NegativeFilter, ProjectionHead,
                          basic_graph_contrastive_loss, build_negative_filter, js_similarity,
                          semantic_contextual_loss, sts_loss)
from .encoder_decoder import (Decoder, DynamicGraphGenerator, EncoderConfig, EncoderOutput, SpatialPE,
                              STSCMEncoder, di_gcn, gumbel_softmax, probsparse_attention, temporal_pe)
from .exceptions import ConfigError, DomainError, EmptyStreamError, LoadError, NumericalError
from .graph_data import (GraphSpec, TrafficSeries, WindowBatch, chronological_split, load_dataset, make_windows,
                         save_dataset, synth_traffic)
from .training import VARIANTS, LossBundle, Settings, TrainConfig, Trainer, ablation_variant, fit, prediction_loss

__version__ = "0.1.0"

__all__ = [
    "ablation_variant", "attr_mask", "augment_views", "AugmentationConfig", "AugmentedViews", "basic_augment",
    "basic_graph_contrastive_loss", "build_negative_filter", "chronological_split", "ConfigError",
    "ContrastiveConfig", "ContrastiveHeads", "Decoder", "di_gcn", "DomainError", "DynamicGraphGenerator",
    "edge_mask", "EmptyStreamError", "EncoderConfig", "EncoderOutput", "fit", "GraphSpec", "gumbel_softmax",
    "js_similarity", "load_dataset", "LoadError", "LossBundle", "make_windows", "NegativeFilter",
    "NumericalError", "prediction_loss", "probsparse_attention", "ProjectionHead", "save_dataset",
    "semantic_contextual_loss", "Settings", "SpatialPE", "strong_augment", "sts_loss", "STSCMEncoder",
    "synth_traffic", "temporal_pe", "temporal_scale_fusion", "TrafficSeries", "TrainConfig", "Trainer",
    "VARIANTS", "view_generator_forward", "ViewGenerator", "WindowBatch",
]
