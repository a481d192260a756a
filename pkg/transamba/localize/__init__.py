from .maps import c2p_aggregate, export_pgm, patch_cam, threshold_mask, upscale_normalize, volume_maps
from .metrics import Metrics, metrics, summarize, write_metrics, write_table
