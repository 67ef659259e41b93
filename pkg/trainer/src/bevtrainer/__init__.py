"""Toy-scale trainer for the BEV proposal network.

Consumes exchange-format manifests produced by the pipeline's preprocess
command, trains the two-branch network, and writes prediction manifests that
the pipeline's decode and eval commands turn into scored proposals.
"""

from .config import NetworkConfig, TrainConfig
from .model import ProposalNetwork, build_network
from .train import TrainingAborted, load_checkpoint, train
from .infer import infer_directory

__version__ = "0.1.0"
