from .cldnn import CldnnConfig, CldnnLite
from .ctc import batch_ctc_loss, ctc_loss, greedy_decode
from .layers import GlobalLayerNorm, IstftConv, StftConv, TcnBlock
from .tcn import Enhancer, TcnConfig, TcnMaskNet

__all__ = [
    "CldnnConfig", "CldnnLite", "Enhancer", "GlobalLayerNorm", "IstftConv",
    "StftConv", "TcnBlock", "TcnConfig", "TcnMaskNet",
    "batch_ctc_loss", "ctc_loss", "greedy_decode",
]
