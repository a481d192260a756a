from .mamba import BiSSMBlock, MambaBlock, selective_scan
from .transformer import TransformerBlock
from .cpm import CrossPlaneAttention, PatchMamba, deinterleave, interleave
from .encoder import Encoder, compute_pos_weight, gwrp, training_loss
