"""nisslkit: dataset preparation, desk-scale contrastive training, and
evaluation for annotated brain histology sections."""

__version__ = "0.1.0"
