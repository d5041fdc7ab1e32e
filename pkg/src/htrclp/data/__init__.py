"""Line datasets: charsets, synthetic hands, on-disk IO and splits."""
from .dataset import Charset, Dataset, LabeledLine, build_charset, nfkd, split
from .io import DatasetLoadError, load_dataset, read_pgm, save_dataset, write_pgm
from .synth import HANDS, HandParams, SynthError, SynthSpec, TextSource, render_line, synth_generate

__all__ = [
    "Charset", "Dataset", "DatasetLoadError", "HANDS", "HandParams", "LabeledLine", "SynthError",
    "SynthSpec", "TextSource", "build_charset", "load_dataset", "nfkd", "read_pgm", "render_line",
    "save_dataset", "split", "synth_generate", "write_pgm",
]
