"""Per-category topic models for open-ended 3D object categorization.

The package is organized around five layers:

* :mod:`localhdp.corpus` -- sparse bag-of-words documents and file formats
* :mod:`localhdp.features` -- point-cloud keypoints, spin images, vocabulary
* :mod:`localhdp.hdp` -- one category's stick-breaking model and updates
* :mod:`localhdp.registry` -- the teach/ask/correct category store
* :mod:`localhdp.protocol` -- simulated-teacher and k-fold evaluations

:mod:`localhdp.snapshot` persists a registry, and :mod:`localhdp.cli`
exposes everything as commands.
"""

from .corpus import BowDocument, LabeledCorpus, load_corpus, save_corpus
from .errors import LocalHdpError
from .features import (
    Dictionary,
    FeatureParams,
    PointCloud,
    SpinImageDescriptor,
    build_dictionary,
    encode_bow,
    select_keypoints,
    spin_image,
)
from .hdp import (
    CategoryModel,
    DocumentVariational,
    Hyperparams,
    apply_update,
    category_bound,
    effective_topic_count,
    expected_topics,
    fit_document,
    infer_document,
    init_model,
    learning_rate,
    log_likelihood,
    natural_gradients,
)
from .protocol import (
    ExperimentTrace,
    Metrics,
    TeacherConfig,
    compute_metrics,
    run_offline,
    run_open_ended,
    window_accuracy,
)
from .registry import Registry
from .snapshot import load_snapshot, save_snapshot

__version__ = "0.1.0"

__all__ = [
    "BowDocument",
    "CategoryModel",
    "Dictionary",
    "DocumentVariational",
    "ExperimentTrace",
    "FeatureParams",
    "Hyperparams",
    "LabeledCorpus",
    "LocalHdpError",
    "Metrics",
    "PointCloud",
    "Registry",
    "SpinImageDescriptor",
    "TeacherConfig",
    "apply_update",
    "build_dictionary",
    "category_bound",
    "compute_metrics",
    "effective_topic_count",
    "encode_bow",
    "expected_topics",
    "fit_document",
    "infer_document",
    "init_model",
    "learning_rate",
    "load_corpus",
    "load_snapshot",
    "log_likelihood",
    "natural_gradients",
    "run_offline",
    "run_open_ended",
    "save_corpus",
    "save_snapshot",
    "select_keypoints",
    "spin_image",
    "window_accuracy",
]
