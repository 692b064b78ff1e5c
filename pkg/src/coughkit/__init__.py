"""coughkit: cough detection, segmentation, augmentation and transfer-head training."""
from .audio_io import Waveform, decode_wav, encode_wav, load_canonical, read_wav, write_wav
from .errors import CoughkitError

__version__ = "0.1.0"
__all__ = ["Waveform", "decode_wav", "encode_wav", "load_canonical", "read_wav", "write_wav",
           "CoughkitError", "__version__"]
