"""Frozen-encoder feature extraction emitting onomaret embedding packs."""

from .audio import fit_to_window, load_wav_mono, prepare_clip, resample
from .dataset import DatasetError, DatasetItem, class_id_map, resolve_dataset, scan_dataset
from .encoders import ClapAudioEncoder, ClipImageEncoder
from .extract import ExtractionManifest, extract_audio, extract_images, run_extraction
from .packio import write_pack

__version__ = "0.1.0"
