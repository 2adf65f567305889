# Core module initialisation.
#
# This package contains the building blocks: the autodiff tensor engine and
# its layers, the V2I scene simulator and dataset I/O, labeling, the fusion
# network, training, metrics and mapping. Consumers should import the public
# functions from these submodules rather than reaching into private helpers.

from beamfuse.core.config import RunConfig, load_config
from beamfuse.core.dataset_io import load_dataset, write_dataset
from beamfuse.core.labeling import oracle_beam, se_drop
from beamfuse.core.metrics import evaluate, topk_accuracy
from beamfuse.core.model import FusionNet, build_model
from beamfuse.core.simulator import generate_sequence, generate_sequences
from beamfuse.core.training import fit, split_by_sequence

__all__ = [
    "RunConfig",
    "load_config",
    "load_dataset",
    "write_dataset",
    "oracle_beam",
    "se_drop",
    "evaluate",
    "topk_accuracy",
    "FusionNet",
    "build_model",
    "generate_sequence",
    "generate_sequences",
    "fit",
    "split_by_sequence",
]
