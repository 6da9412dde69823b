"""ReDNet: dual position-attention semantic segmentation at desk scale."""

from .attention import PositionAttentionModule, attention_map, pam_forward
from .backbone import Backbone, BackboneConfig, build_backbone
from .metrics import ConfusionMatrix, mean_iou, per_class_iou
from .model import ModelConfig, NetworkConfig, ReDNet, predict, rednet_forward
from .taxonomy import TAXONOMY, ClassTaxonomy, merge_labels
from .tensor import Parameter, Tensor, check_gradients

__version__ = "0.1.0"
