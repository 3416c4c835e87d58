"""camlink: multi-camera tracklet association on a dynamic graph.

Local tracklets from each camera become nodes of a growing graph,
structural + temporal self-attention turns their appearance features
into drift-robust embeddings, and global identities are assigned by
thresholded link prediction over connected components.  A deterministic
synthetic multi-camera simulator and CLEAR MOT / ID / MCTA metrics make
the whole pipeline testable end to end without any real video.
"""

__version__ = "0.1.0"

from .dyngraph import GraphHistory, TrackletNode
from .attention import EmbeddingNetwork, Model, ModelConfig, embed
from .linkpred import LinkClassifier, LinkDecision, associate, compute_auc, merge_fragments, score_pair
from .simulator import TrackingScenario, WorldConfig, generate
from .metrics import EvalInput, EvalReport, clear_mot, id_scores, mcta
from .training import TrainConfig, train
from .pipeline import OnlineTracker

__all__ = [
    "EmbeddingNetwork",
    "EvalInput",
    "EvalReport",
    "GraphHistory",
    "LinkClassifier",
    "LinkDecision",
    "Model",
    "ModelConfig",
    "OnlineTracker",
    "TrackingScenario",
    "TrackletNode",
    "TrainConfig",
    "WorldConfig",
    "associate",
    "clear_mot",
    "compute_auc",
    "embed",
    "generate",
    "id_scores",
    "mcta",
    "merge_fragments",
    "score_pair",
    "train",
]
