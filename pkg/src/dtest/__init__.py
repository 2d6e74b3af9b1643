"""Test-set adequacy toolkit for DNNs.

Measures black-box diversity (geometric diversity, multiset NCD, STD norm)
and white-box coverage of test input sets, estimates detected faults by
density-clustering mispredicted inputs, and runs controlled-diversity,
correlation, and timing experiments over feature/trace data.
"""

__version__ = "0.1.0"

from .matrix import FeatureMatrix, GramLogDet, dedup_rows, gram_log_det, min_max_normalize
from .diversity import DiversityScore, geometric_diversity, ncd_multiset, std_norm
from .stats import CorrelationResult, WilcoxonResult, spearman, wilcoxon_signed_rank

__all__ = [
    "__version__",
    "FeatureMatrix",
    "GramLogDet",
    "min_max_normalize",
    "dedup_rows",
    "gram_log_det",
    "DiversityScore",
    "geometric_diversity",
    "ncd_multiset",
    "std_norm",
    "CorrelationResult",
    "WilcoxonResult",
    "spearman",
    "wilcoxon_signed_rank",
]
