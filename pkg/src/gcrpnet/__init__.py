"""Salient object detection for remote-sensing images built on a small numpy autodiff engine.

Graph attention over skip features, block-local selective scans and
multi-granularity attention, each usable on its own.
"""

from .checkpoint import CheckpointError
from .data import DatasetSpec, IngestionError, load_sample, open_dataset, synth_dataset
from .graph import GATLayer, GridGraph, build_grid_graph, gat_coeffs, gat_forward
from .losses import LossWeights, bce_loss, iou_loss, total_loss
from .metrics import EvalReport, Evaluator, e_measure, f_measure, mae, s_measure
from .model import GCRPNet, ModelConfig, SaliencyOutputs
from .optim import AdamW, AdamWConfig, NumericalError, adamw_step
from .scan import BlockPartition, PartitionError, ScanOrder, cross_scan_orders, less2d_orders, resolution_to_grid
from .ssm import SSMParams, linear_recurrence, parallel_scan, selective_scan, zoh_discretize
from .tensor import ShapeError, Tensor, no_grad
from .training import TrainConfig, evaluate, infer, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
