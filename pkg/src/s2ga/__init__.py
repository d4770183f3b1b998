"""Zero-shot classification of region-based image features with layered, semantics-driven attention."""

from s2ga.sga import SgaConfig, SgaLayerParams, AttentionTrace, sga_forward
from s2ga.matcher import MatcherParams, ClassSemanticTable, LossBreakdown
from s2ga.model import S2GAModel, init_model
from s2ga.trainer import TrainConfig, TrainReport, train, grad_check
from s2ga.dataio import ZslDataset, SynthSpec, synth_generate, load_dataset, save_dataset

__version__ = "0.1.0"
