"""Frozen pretrained encoders.

Text: a BERT-base-width model (768-d hidden); the embedding is the CLS-position
hidden state. Images: a DINOv2-small-width vision transformer (384-d); the
embedding is the CLS token of the last layer. Both run in inference mode, no
dropout, no fine-tuning, so extraction is deterministic.

Two construction paths per encoder:

* ``pretrained(name)`` loads published weights (needs the weights to be
  downloadable or cached);
* ``seeded_random(seed)`` builds the same architecture with seed-deterministic
  random weights and, for text, a built-in character-level WordPiece vocab.
  This is an offline stand-in with the exact output contract (dimensions,
  CLS extraction, preprocessing); embedding *quality* obviously needs the
  pretrained weights.
"""

from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .errors import InputError

TEXT_DIM = 768
IMAGE_DIM = 384
MAX_TEXT_TOKENS = 512

DEFAULT_TEXT_MODEL = "bert-base-uncased"
DEFAULT_IMAGE_MODEL = "facebook/dinov2-small"

# DINOv2 preprocessing: shortest side to 256, center crop 224, ImageNet stats
_RESIZE_TO = 256
_CROP = 224
_IMAGE_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_IMAGE_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def _char_vocab() -> dict:
    """Character-level WordPiece vocab covering printable ASCII."""
    specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    chars = [chr(c) for c in range(33, 127)]
    tokens = specials + chars + ["##" + c for c in chars]
    return {t: i for i, t in enumerate(tokens)}


class TextEncoder:
    def __init__(self, tokenizer, model):
        model.eval()
        self.tokenizer = tokenizer
        self.model = model
        limit = getattr(tokenizer, "model_max_length", MAX_TEXT_TOKENS) or MAX_TEXT_TOKENS
        self.max_length = int(min(limit, MAX_TEXT_TOKENS))

    @classmethod
    def pretrained(cls, name: str = DEFAULT_TEXT_MODEL) -> "TextEncoder":
        from transformers import AutoModel, AutoTokenizer
        return cls(AutoTokenizer.from_pretrained(name), AutoModel.from_pretrained(name))

    @classmethod
    def seeded_random(cls, seed: int = 0, layers: int = 2) -> "TextEncoder":
        from transformers import BertConfig, BertModel, BertTokenizer
        tokenizer = BertTokenizer(vocab=_char_vocab(), do_lower_case=True)
        torch.manual_seed(seed)
        config = BertConfig(vocab_size=tokenizer.vocab_size, num_hidden_layers=layers)
        return cls(tokenizer, BertModel(config))

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        """CLS hidden states, (n, 768) float32."""
        for i, text in enumerate(texts):
            if not text or not text.strip():
                raise InputError(f"text {i} is empty")
        batch = self.tokenizer(list(texts), padding=True, truncation=True,
                               max_length=self.max_length, return_tensors="pt")
        with torch.no_grad():
            hidden = self.model(**batch).last_hidden_state
        cls_vectors = hidden[:, 0, :].to(torch.float32).numpy()
        if cls_vectors.shape[1] != TEXT_DIM:
            raise InputError(
                f"text encoder produced width {cls_vectors.shape[1]}, expected {TEXT_DIM}")
        return cls_vectors

    def encode_one(self, text: str) -> np.ndarray:
        return self.encode([text])[0]


def load_image(path: str) -> Image.Image:
    from .errors import ImageError
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, ValueError) as exc:
        raise ImageError(f"cannot decode image {path!r}: {exc}") from exc


def preprocess_image(img: Image.Image) -> np.ndarray:
    """Resize shortest side, center-crop, normalize; (3, 224, 224) float32."""
    w, h = img.size
    scale = _RESIZE_TO / min(w, h)
    img = img.resize((max(_CROP, round(w * scale)), max(_CROP, round(h * scale))),
                     Image.Resampling.BICUBIC)
    w, h = img.size
    left = (w - _CROP) // 2
    top = (h - _CROP) // 2
    img = img.crop((left, top, left + _CROP, top + _CROP))
    pixels = np.asarray(img, dtype=np.float32) / 255.0
    pixels = (pixels - _IMAGE_MEAN) / _IMAGE_STD
    return pixels.transpose(2, 0, 1)


class ImageEncoder:
    def __init__(self, model):
        model.eval()
        self.model = model

    @classmethod
    def pretrained(cls, name: str = DEFAULT_IMAGE_MODEL) -> "ImageEncoder":
        from transformers import AutoModel
        return cls(AutoModel.from_pretrained(name))

    @classmethod
    def seeded_random(cls, seed: int = 0, layers: int = 2) -> "ImageEncoder":
        from transformers import Dinov2Config, Dinov2Model
        torch.manual_seed(seed)
        config = Dinov2Config(hidden_size=IMAGE_DIM, num_hidden_layers=layers,
                              num_attention_heads=6)
        return cls(Dinov2Model(config))

    def encode(self, images: Sequence[Image.Image]) -> np.ndarray:
        """CLS token of the last layer, (n, 384) float32."""
        pixels = np.stack([preprocess_image(img) for img in images])
        with torch.no_grad():
            hidden = self.model(pixel_values=torch.from_numpy(pixels)).last_hidden_state
        cls_vectors = hidden[:, 0, :].to(torch.float32).numpy()
        if cls_vectors.shape[1] != IMAGE_DIM:
            raise InputError(
                f"image encoder produced width {cls_vectors.shape[1]}, expected {IMAGE_DIM}")
        return cls_vectors

    def encode_path(self, path: str) -> np.ndarray:
        return self.encode([load_image(path)])[0]


def make_encoders(text_model: str, image_model: str, random_weights: bool,
                  seed: int):
    if random_weights:
        return TextEncoder.seeded_random(seed), ImageEncoder.seeded_random(seed)
    return TextEncoder.pretrained(text_model), ImageEncoder.pretrained(image_model)
