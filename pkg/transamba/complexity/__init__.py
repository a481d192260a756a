from .counters import (
    MODES,
    complexity_report,
    estimate_memory,
    layer_complexity,
    space_complexity,
    time_complexity,
)
from .bench import bench_memory, bench_time, fit_scaling
