"""Glyph rendering and the per-token visual/length tables behind the constraint losses.

Tokens are rasterized with a vendored sans-serif font (Urbanist, OFL-licensed)
onto a small grayscale canvas (1.0 = white). The default feature extractor
flattens the bitmap and L2-normalizes it, which keeps the table deterministic
and dependency-free; a pretrained convolutional backbone can be plugged in
behind the same interface.
"""

import importlib.resources
import json
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .vocab import Vocabulary

DEFAULT_CANVAS = (32, 32)  # H, W
DEFAULT_FONT_SIZE = 19
_MAGIC = b"CSVT"
_FORMAT_VERSION = 1


class FontError(RuntimeError):
    pass


def _vendored_font_path() -> str:
    return str(importlib.resources.files("charsub") / "fonts" / "Urbanist-Regular.ttf")


def resolve_font(spec: str | None = None, size: int = DEFAULT_FONT_SIZE):
    """Resolve a font name or path to a loaded face plus a stable font_id."""
    name = (spec or "default").strip()
    if name.lower() in ("default", "urbanist"):
        path = _vendored_font_path()
        return ImageFont.truetype(path, size), f"Urbanist:{size}"
    if name.lower() == "helvetica":
        for cand in ("Helvetica.ttf", "Helvetica.ttc", "helvetica.ttf"):
            try:
                return ImageFont.truetype(cand, size), f"Helvetica:{size}"
            except OSError:
                continue
        # honored only when installed; otherwise fall back to the vendored face
        return ImageFont.truetype(_vendored_font_path(), size), f"Urbanist:{size}"
    try:
        font = ImageFont.truetype(name, size)
    except OSError as exc:
        raise FontError(f"font unavailable: {name!r}") from exc
    stem = name.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return font, f"{stem}:{size}"


def render_glyph(token_text: str, font, canvas: tuple[int, int] = DEFAULT_CANVAS,
                 marker: str = "##") -> np.ndarray:
    """Raster the marker-stripped token onto the canvas; 1.0 is white.

    Horizontally centered with a fixed baseline at three quarters height, so
    stems of lookalike glyphs land on the same pixels across tokens.
    """
    h, w = canvas
    if h < 16 or w < 16:
        raise ValueError(f"canvas too small: {canvas}")
    text = token_text
    if marker and text.startswith(marker):
        text = text[len(marker):]
    if not text or text.isspace():
        return np.ones((h, w), dtype=np.float64)
    img = Image.new("L", (w, h), 255)
    draw = ImageDraw.Draw(img)
    draw.text((w / 2, round(h * 0.75)), text, font=font, fill=0, anchor="ms")
    return np.asarray(img, dtype=np.float64) / 255.0


class FlatExtractor:
    """Flattened-bitmap features; deterministic and dependency-free."""

    def __init__(self, canvas: tuple[int, int] = DEFAULT_CANVAS):
        self.canvas = canvas
        self.d_v = canvas[0] * canvas[1]
        self.extractor_id = f"flat-{canvas[0]}x{canvas[1]}-v1"

    def embed(self, bitmap: np.ndarray) -> np.ndarray:
        v = bitmap.reshape(-1).astype(np.float64)
        return v / np.linalg.norm(v)


class CnnExtractor:
    """Pretrained ResNet-50 features behind the same interface (optional backend)."""

    def __init__(self, canvas: tuple[int, int] = DEFAULT_CANVAS):
        try:
            import torch
            import torchvision
        except ImportError as exc:
            raise RuntimeError(
                "the cnn extractor needs torch and torchvision with pretrained "
                "weights available; install them or use the flat extractor"
            ) from exc
        self._torch = torch
        try:
            weights = torchvision.models.ResNet50_Weights.IMAGENET1K_V1
            model = torchvision.models.resnet50(weights=weights)
        except Exception as exc:
            raise RuntimeError(
                "the cnn extractor could not load pretrained ResNet-50 weights "
                f"({exc}); use the flat extractor instead"
            ) from exc
        model.fc = torch.nn.Identity()
        model.eval()
        self._model = model
        self.canvas = canvas
        self.d_v = 2048
        self.extractor_id = "cnn-resnet50-v1"

    def embed(self, bitmap: np.ndarray) -> np.ndarray:
        torch = self._torch
        img = Image.fromarray((bitmap * 255).astype(np.uint8)).resize((224, 224))
        x = np.asarray(img, dtype=np.float32) / 255.0
        x = np.stack([x, x, x])
        mean = np.array([0.485, 0.456, 0.406], dtype=np.float32).reshape(3, 1, 1)
        std = np.array([0.229, 0.224, 0.225], dtype=np.float32).reshape(3, 1, 1)
        with torch.no_grad():
            feat = self._model(torch.from_numpy((x - mean) / std).unsqueeze(0))
        v = feat.numpy().reshape(-1).astype(np.float64)
        return v / np.linalg.norm(v)


def get_extractor(name: str, canvas: tuple[int, int] = DEFAULT_CANVAS):
    if name == "flat":
        return FlatExtractor(canvas)
    if name == "cnn":
        return CnnExtractor(canvas)
    raise ValueError(f"unknown extractor {name!r}")


def visual_embed(bitmap: np.ndarray, extractor) -> np.ndarray:
    v = extractor.embed(bitmap)
    if not np.all(np.isfinite(v)):
        raise ValueError("extractor produced non-finite features")
    return v


@dataclass
class VisualTable:
    vectors: np.ndarray  # V x D_v, float32, rows L2-normalized
    extractor_id: str
    font_id: str
    d_v: int


@dataclass
class LengthTable:
    lengths: np.ndarray  # int32, marker-stripped character counts; specials are 0


def build_length_table(vocab: Vocabulary) -> LengthTable:
    lengths = np.array(
        [0 if vocab.special_mask[i] else len(vocab.core[i]) for i in range(vocab.size)],
        dtype=np.int32,
    )
    return LengthTable(lengths)


def _build_vectors(vocab: Vocabulary, font, extractor) -> np.ndarray:
    vectors = np.empty((vocab.size, extractor.d_v), dtype=np.float32)
    for i, tok in enumerate(vocab.tokens):
        if vocab.special_mask[i]:
            bmp = np.ones(extractor.canvas, dtype=np.float64)
        else:
            bmp = render_glyph(vocab.core[i], font, extractor.canvas, marker="")
        vectors[i] = visual_embed(bmp, extractor).astype(np.float32)
    return vectors


def save_tables(path, visual: VisualTable, length: LengthTable, vocab_sha256: str) -> None:
    header = {
        "vocab_sha256": vocab_sha256,
        "font_id": visual.font_id,
        "extractor_id": visual.extractor_id,
        "d_v": visual.d_v,
        "vocab_size": int(visual.vectors.shape[0]),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(visual.vectors, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(length.lengths, dtype="<i4").tobytes())


def load_tables(path) -> tuple[VisualTable, LengthTable, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("bad table cache magic")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported table cache version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        v = header["vocab_size"]
        d_v = header["d_v"]
        vec_bytes = fh.read(v * d_v * 4)
        len_bytes = fh.read(v * 4)
        if len(vec_bytes) != v * d_v * 4 or len(len_bytes) != v * 4:
            raise ValueError("truncated table cache")
    vectors = np.frombuffer(vec_bytes, dtype="<f4").reshape(v, d_v).copy()
    lengths = np.frombuffer(len_bytes, dtype="<i4").copy()
    visual = VisualTable(vectors, header["extractor_id"], header["font_id"], d_v)
    return visual, LengthTable(lengths), header


def build_visual_table(vocab: Vocabulary, font_spec: str | None = None,
                       extractor_name: str = "flat", cache_path=None,
                       font_size: int = DEFAULT_FONT_SIZE) -> VisualTable:
    """Build (or load from cache) the per-token visual table."""
    font, font_id = resolve_font(font_spec, font_size)
    extractor = get_extractor(extractor_name)
    if cache_path is not None:
        try:
            visual, _, header = load_tables(cache_path)
            if (header["vocab_sha256"] == vocab.sha256
                    and header["font_id"] == font_id
                    and header["extractor_id"] == extractor.extractor_id):
                return visual
        except (OSError, ValueError, KeyError):
            pass  # missing, stale, or corrupt: rebuild below
    vectors = _build_vectors(vocab, font, extractor)
    visual = VisualTable(vectors, extractor.extractor_id, font_id, extractor.d_v)
    if cache_path is not None:
        save_tables(cache_path, visual, build_length_table(vocab), vocab.sha256)
    return visual


@dataclass
class Tables:
    """Bundle handed to the attack: visual and length tables, either optional."""
    visual: VisualTable | None = None
    length: LengthTable | None = None


def build_tables(vocab: Vocabulary, font_spec: str | None = None,
                 extractor_name: str = "flat", cache_path=None,
                 font_size: int = DEFAULT_FONT_SIZE) -> Tables:
    visual = build_visual_table(vocab, font_spec, extractor_name, cache_path, font_size)
    return Tables(visual=visual, length=build_length_table(vocab))
