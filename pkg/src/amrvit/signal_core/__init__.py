"""Signal synthesis, channel impairments and dataset handling."""

from amrvit.signal_core.channel import add_awgn, apply_channel, measured_snr_db, random_channel
from amrvit.signal_core.dataset import (
    TEST,
    TRAIN,
    UNASSIGNED,
    VAL,
    Dataset,
    SyntheticConfig,
    build_synthetic_dataset,
    label_mask,
    load_dataset,
    save_dataset,
    split_dataset,
    synth_frame,
)
from amrvit.signal_core.modulation import modulate_symbols, pulse_shape, rrc_taps
from amrvit.signal_core.rml import RML2018_CLASSES, load_rml, read_class_map, write_rml
from amrvit.signal_core.types import (
    CLASS_NAMES,
    NUM_CLASSES,
    ChannelParams,
    IQFrame,
    LabeledSample,
    ModulationScheme,
    rms_normalize,
)

__all__ = [
    "CLASS_NAMES", "NUM_CLASSES", "RML2018_CLASSES", "TEST", "TRAIN", "UNASSIGNED", "VAL",
    "ChannelParams", "Dataset", "IQFrame", "LabeledSample", "ModulationScheme", "SyntheticConfig",
    "add_awgn", "apply_channel", "build_synthetic_dataset", "label_mask", "load_dataset", "load_rml",
    "measured_snr_db", "modulate_symbols", "pulse_shape", "random_channel", "read_class_map",
    "rms_normalize", "rrc_taps", "save_dataset", "split_dataset", "synth_frame", "write_rml",
]
