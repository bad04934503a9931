"""mmextract: frozen BERT/DINOv2 feature extraction into the embedding
container consumed by the fuselab trainer."""

__version__ = "0.1.0"
