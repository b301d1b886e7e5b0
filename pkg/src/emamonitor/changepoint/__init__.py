from .bocpd import BocpdResult, NIGPrior, bocpd
from .cusum import (
    DECREASE,
    INCREASE,
    ChangePoint,
    Segment,
    cusum_iterate,
    cusum_locate,
    cusum_path,
    llr_gaussian_test,
    llr_threshold,
)
from .detectors import (
    DETECTORS,
    MonitorConfig,
    alert_decision,
    baseline_zero,
    bocpd_detect,
    cusum_single,
    cusum_windows,
    get_detector,
    monitor_sliding,
    robust_detect,
    running_median,
    hampel_filter,
    window_starts,
)
from .evaluation import DetectionEval, evaluate_detection, match_count, pool

__all__ = [
    "BocpdResult",
    "NIGPrior",
    "bocpd",
    "DECREASE",
    "INCREASE",
    "ChangePoint",
    "Segment",
    "cusum_iterate",
    "cusum_locate",
    "cusum_path",
    "llr_gaussian_test",
    "llr_threshold",
    "DETECTORS",
    "MonitorConfig",
    "alert_decision",
    "baseline_zero",
    "bocpd_detect",
    "cusum_single",
    "cusum_windows",
    "get_detector",
    "monitor_sliding",
    "robust_detect",
    "running_median",
    "hampel_filter",
    "window_starts",
    "DetectionEval",
    "evaluate_detection",
    "match_count",
    "pool",
]
