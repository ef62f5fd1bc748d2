"""freqtok: block-DCT frequency-channel tokenization toolkit.

Pipeline:  RGB -> YCbCr 4:2:0 -> block DCT (frequency-major channels)
-> channel scoring (probe net + channel-wise GradCAM) -> threshold
selection -> dense tensor -> token embedding.  Supporting analysis:
energy profiles, zig-zag ordering, reconstruction residuals.
"""

from .block_dct import (
    ChannelDesc,
    FrequencyTensor,
    decode,
    decode_rgb,
    dct2d_block,
    encode,
    encode_rgb,
    idct2d_block,
    zigzag_order,
)
from .colorspace import YcbcrImage, rgb_to_ycbcr, subsample_chroma, upsample_chroma, ycbcr_to_rgb
from .errors import FormatError, StateError, TrainingError
from .image_io import LabeledDataset, RgbImage, load_image, resize, save_image, synth_dataset
from .selection import (
    ChannelSelection,
    DenseTensor,
    apply_selection,
    select_by_threshold,
    select_square,
    zero_fill,
)
from .spectrum import EnergyProfile, channel_energy, density_gain, zigzag_profile
from .tokenizer import TokenGrid, coordinate_attention, dense_embed, patch_embed_rgb

__version__ = "0.1.0"
