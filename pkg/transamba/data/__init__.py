from .synthetic import SyntheticVolume, generate, slice_labels
from .volume_io import DatasetInfo, read_dataset, read_volume, write_dataset, write_volume
from .sampling import VolumeSample, infer_starts, merge_windows, sample_infer, sample_train
