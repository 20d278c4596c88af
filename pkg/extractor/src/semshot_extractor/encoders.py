"""Encoder backends behind the extraction scripts.

Vision:
  - ``torchscript``: a user-supplied TorchScript checkpoint (e.g. an exported
    ResNet-12 or Swin-T backbone) run over preprocessed image batches.
  - ``projection``: a deterministic seeded random projection of the raw
    pixels. No weights needed; useful for dry runs and format tests.

Text:
  - ``transformers-bert``: a local BERT-style encoder directory; mean-pooled
    last hidden state (768-d for the standard base configuration).
  - ``transformers-clip``: a local CLIP checkpoint's text tower with its
    projection head (512-d for ViT-B/16).
  - ``hashing``: a deterministic signed character-trigram hashing featurizer
    at any dimension. No weights needed.

Heavy libraries are imported lazily so stub-based runs stay light.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .manifest import ManifestError, TextEncoderSpec, VisionEncoderSpec


class EncoderError(RuntimeError):
    pass


# --- vision -----------------------------------------------------------------


class ProjectionVisionEncoder:
    """Pixels -> seeded fixed random projection. Deterministic, weight-free."""

    def __init__(self, spec: VisionEncoderSpec):
        self.spec = spec
        pixels = 3 * spec.image_size * spec.image_size
        rng = np.random.default_rng(spec.seed)
        self._matrix = rng.normal(0.0, 1.0 / np.sqrt(pixels), size=(pixels, spec.dim))

    def encode(self, batch: np.ndarray) -> np.ndarray:
        flat = batch.reshape(batch.shape[0], -1)
        return (flat @ self._matrix).astype(np.float32)


class TorchScriptVisionEncoder:
    """Runs a TorchScript module over (N, 3, H, W) float batches."""

    def __init__(self, spec: VisionEncoderSpec):
        if not spec.path:
            raise ManifestError("torchscript vision encoder needs a checkpoint path")
        import torch

        self._torch = torch
        self._module = torch.jit.load(spec.path, map_location="cpu")
        self._module.eval()
        self.spec = spec

    def encode(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            out = self._module(torch.from_numpy(batch))
        out = out.detach().cpu().numpy()
        if out.ndim != 2:
            raise EncoderError(f"checkpoint returned shape {out.shape}, expected 2-D")
        return out.astype(np.float32)


def make_vision_encoder(spec: VisionEncoderSpec):
    if spec.kind == "projection":
        return ProjectionVisionEncoder(spec)
    if spec.kind == "torchscript":
        return TorchScriptVisionEncoder(spec)
    raise ManifestError(f"unknown vision encoder kind {spec.kind!r}")


# --- text -------------------------------------------------------------------


class HashingTextEncoder:
    """Signed character-trigram hashing into a fixed-width vector."""

    def __init__(self, spec: TextEncoderSpec):
        self.spec = spec

    def encode(self, text: str) -> np.ndarray:
        dim = self.spec.dim
        vec = np.zeros(dim, dtype=np.float64)
        padded = f"  {text.lower()}  "
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3]
            digest = hashlib.sha256(
                f"{self.spec.seed}:{gram}".encode("utf-8")
            ).digest()
            index = int.from_bytes(digest[:4], "little") % dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[index] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec.astype(np.float32)


class BertTextEncoder:
    """Mean-pooled last hidden state of a local BERT-style model directory."""

    def __init__(self, spec: TextEncoderSpec):
        if not spec.path:
            raise ManifestError("transformers-bert encoder needs a local model path")
        import torch
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self._tokenizer = AutoTokenizer.from_pretrained(spec.path)
        self._model = AutoModel.from_pretrained(spec.path)
        self._model.eval()
        self.spec = spec

    def encode(self, text: str) -> np.ndarray:
        torch = self._torch
        tokens = self._tokenizer(
            text, return_tensors="pt", truncation=True, max_length=128
        )
        with torch.no_grad():
            output = self._model(**tokens)
        hidden = output.last_hidden_state[0]
        mask = tokens["attention_mask"][0].unsqueeze(-1)
        pooled = (hidden * mask).sum(dim=0) / mask.sum()
        return pooled.cpu().numpy().astype(np.float32)


class ClipTextEncoder:
    """Projected text embedding of a local CLIP checkpoint's text tower."""

    def __init__(self, spec: TextEncoderSpec):
        if not spec.path:
            raise ManifestError("transformers-clip encoder needs a local model path")
        import torch
        from transformers import CLIPTextModelWithProjection, CLIPTokenizer

        self._torch = torch
        self._tokenizer = CLIPTokenizer.from_pretrained(spec.path)
        self._model = CLIPTextModelWithProjection.from_pretrained(spec.path)
        self._model.eval()
        self.spec = spec

    def encode(self, text: str) -> np.ndarray:
        torch = self._torch
        tokens = self._tokenizer(
            text, return_tensors="pt", truncation=True, max_length=77
        )
        with torch.no_grad():
            output = self._model(**tokens)
        return output.text_embeds[0].cpu().numpy().astype(np.float32)


def make_text_encoder(spec: TextEncoderSpec):
    if spec.kind == "hashing":
        return HashingTextEncoder(spec)
    if spec.kind == "transformers-bert":
        return BertTextEncoder(spec)
    if spec.kind == "transformers-clip":
        return ClipTextEncoder(spec)
    raise ManifestError(f"unknown text encoder kind {spec.kind!r}")
