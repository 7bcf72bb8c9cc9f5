"""
Weights Service - S2E1 checkpoint format and indexed float32 block files

S2E1 layout:
    bytes 0-3   magic b"S2E1"
    bytes 4-7   little-endian u32 length N of the UTF-8 JSON model config
    N bytes     the JSON
    tensors     little-endian float32, row-major, in canonical order
No padding, no checksum.

Block files pair a JSON index (``name.json``) with a raw little-endian
float32 payload (``name.bin``); each index entry carries ``offset`` and
``len`` in float32 elements plus its ``shape``.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from vecedit.exceptions import (
    BadMagicError, ShapeError, ShapeMismatchError, TruncatedTensorError, WeightFormatError
)
from vecedit.services.model_types import ActivationTrace, ModelConfig, ModelWeights, SequenceTrace

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def dumps_canonical(data) -> str:
    """Deterministic JSON text used for every artifact."""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), allow_nan=False)


def format_float(value: float) -> str:
    """17 significant digits, enough to round-trip any float64."""
    return format(float(value), '.17g')


class WeightsService:
    """Service for reading and writing model artifacts."""

    MAGIC = b'S2E1'
    HEADER_BYTES = 8
    DTYPE = np.dtype('<f4')

    # ================== S2E1 ==================

    @classmethod
    def to_f32(cls, array: np.ndarray, name: str) -> np.ndarray:
        out = np.asarray(array, dtype=np.float64).astype(cls.DTYPE)
        if not np.all(np.isfinite(out)):
            raise ShapeError(f"tensor '{name}' does not fit in float32")
        return out

    @classmethod
    def encode_weights(cls, w: ModelWeights) -> bytes:
        """
        Serialize weights to S2E1 bytes.

        Args:
            w: Model weights

        Returns:
            Deterministic byte string
        """
        config_bytes = dumps_canonical(w.config.to_dict()).encode('utf-8')
        parts = [cls.MAGIC, struct.pack('<I', len(config_bytes)), config_bytes]
        for name, tensor in w.named_tensors():
            parts.append(np.ascontiguousarray(cls.to_f32(tensor, name)).tobytes(order='C'))
        return b''.join(parts)

    @classmethod
    def save_weights(cls, w: ModelWeights, path: PathLike) -> Path:
        """
        Write weights to an S2E1 file.

        Args:
            w: Model weights
            path: Destination file

        Returns:
            Path written
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(cls.encode_weights(w))
        logger.debug("saved weights to %s", path)
        return path

    @classmethod
    def decode_weights(cls, data: bytes) -> ModelWeights:
        """
        Parse S2E1 bytes, widening float32 payloads to float64.

        Args:
            data: File contents

        Returns:
            ModelWeights
        """
        if len(data) < len(cls.MAGIC) or data[:4] != cls.MAGIC:
            raise BadMagicError("bad magic")
        if len(data) < cls.HEADER_BYTES:
            raise WeightFormatError("truncated header: missing config length")
        (config_len,) = struct.unpack('<I', data[4:8])
        offset = cls.HEADER_BYTES
        if offset + config_len > len(data):
            raise WeightFormatError("truncated header: config JSON incomplete")
        try:
            config_dict = json.loads(data[offset:offset + config_len].decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise WeightFormatError(f"unreadable config JSON: {e}")
        config = ModelConfig.from_dict(config_dict)
        offset += config_len

        tensors = {}
        for name, shape in config.tensor_shapes():
            count = int(np.prod(shape))
            nbytes = count * cls.DTYPE.itemsize
            if offset + nbytes > len(data):
                raise TruncatedTensorError(name, nbytes, len(data) - offset)
            tensors[name] = np.frombuffer(data, dtype=cls.DTYPE, count=count,
                                          offset=offset).reshape(shape).astype(np.float64)
            offset += nbytes
        if offset != len(data):
            raise ShapeMismatchError(
                f"{len(data) - offset} trailing bytes: payload does not match the embedded config"
            )
        return ModelWeights.from_tensors(config, tensors)

    @classmethod
    def load_weights(cls, path: PathLike) -> ModelWeights:
        """
        Load an S2E1 weight file.

        Args:
            path: Source file

        Returns:
            ModelWeights
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Weight file not found: {path}")
        return cls.decode_weights(path.read_bytes())

    # ================== Indexed blocks ==================

    @classmethod
    def write_blocks(cls, path: PathLike, meta: Dict,
                     blocks: List[Tuple[Dict, np.ndarray]]) -> Path:
        """
        Write a JSON index plus raw float32 payload.

        Args:
            path: Index path; the payload goes next to it with a .bin suffix
            meta: Free-form JSON metadata stored under "meta"
            blocks: (index entry, array) pairs in write order

        Returns:
            Path of the JSON index
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        bin_path = path.with_suffix('.bin')
        entries = []
        payload = []
        offset = 0
        for key, array in blocks:
            array = np.asarray(array, dtype=np.float64)
            flat = cls.to_f32(array, str(key)).ravel(order='C')
            entries.append(dict(key, offset=offset, len=int(flat.size), shape=list(array.shape)))
            payload.append(flat.tobytes())
            offset += flat.size
        index = {'data': bin_path.name, 'dtype': 'float32-le', 'meta': meta, 'blocks': entries}
        path.write_text(dumps_canonical(index) + '\n', encoding='utf-8')
        bin_path.write_bytes(b''.join(payload))
        return path

    @classmethod
    def read_blocks(cls, path: PathLike) -> Tuple[Dict, List[Tuple[Dict, np.ndarray]]]:
        """
        Read a block file written by write_blocks.

        Args:
            path: JSON index path

        Returns:
            Tuple of (meta, [(index entry, float64 array)])
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Index file not found: {path}")
        index = json.loads(path.read_text(encoding='utf-8'))
        raw = (path.parent / index['data']).read_bytes()
        total = len(raw) // cls.DTYPE.itemsize
        blocks = []
        for entry in index['blocks']:
            start, count = int(entry['offset']), int(entry['len'])
            if start + count > total:
                raise TruncatedTensorError(str(entry), count * cls.DTYPE.itemsize,
                                           max(0, (total - start) * cls.DTYPE.itemsize))
            array = np.frombuffer(raw, dtype=cls.DTYPE, count=count,
                                  offset=start * cls.DTYPE.itemsize).astype(np.float64)
            blocks.append((entry, array.reshape(entry['shape'])))
        return index['meta'], blocks

    # ================== Traces ==================

    TRACE_FIELDS = ('attn_out', 'mlp_out', 'resid_attn', 'resid_mlp', 'head_inputs', 'neuron_inputs')

    @classmethod
    def save_trace(cls, trace: ActivationTrace, path: PathLike) -> Path:
        """Export an activation trace as JSON index + float32 blocks."""
        sequences = []
        blocks = []
        for seq_index, seq in enumerate(trace.sequences):
            sequences.append({
                'tokens': [int(t) for t in seq.tokens],
                'response_mask': [bool(m) for m in seq.response_mask],
            })
            if seq.embed is not None:
                blocks.append(({'sequence': seq_index, 'field': 'embed', 'layer': -1}, seq.embed))
            for field_name in cls.TRACE_FIELDS:
                for layer, array in sorted(getattr(seq, field_name).items()):
                    blocks.append(({'sequence': seq_index, 'field': field_name, 'layer': layer}, array))
        return cls.write_blocks(path, {'kind': 'activation_trace', 'sequences': sequences}, blocks)

    @classmethod
    def load_trace(cls, path: PathLike) -> ActivationTrace:
        """Load a trace written by save_trace (values are float32-rounded)."""
        meta, blocks = cls.read_blocks(path)
        sequences = [SequenceTrace(tokens=s['tokens'], response_mask=s['response_mask'])
                     for s in meta['sequences']]
        for entry, array in blocks:
            seq = sequences[entry['sequence']]
            if entry['field'] == 'embed':
                seq.embed = array
            else:
                getattr(seq, entry['field'])[entry['layer']] = array
        return ActivationTrace(sequences=sequences)
