"""
FRT1 tensor files and checkpoint archives

FRT1 layout: magic ``FRT1``, u8 dtype code (0=f32, 1=f64), u8 rank,
rank x u32 extents, then little-endian values in row-major order.
An archive is a zip of ``<name>.frt`` entries plus ``MANIFEST.txt``
(``name shape dtype`` per line) and optional free-form ``META.txt``.
"""
import io
import logging
import struct
import zipfile
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Tuple, Union

import numpy as np

from ..exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b'FRT1'
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {0: np.dtype('<f4'), 1: np.dtype('<f8')}
MANIFEST_NAME = 'MANIFEST.txt'
META_NAME = 'META.txt'
# fixed entry timestamp keeps archives byte-identical across runs
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)

PathLike = Union[str, Path]


def encode_frt(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in DTYPE_CODES:
        raise ValueError(f"FRT1 stores float32 or float64, got {array.dtype}")
    code = DTYPE_CODES[array.dtype]
    header = MAGIC + struct.pack('<BB', code, array.ndim)
    header += struct.pack(f'<{array.ndim}I', *array.shape)
    return header + np.ascontiguousarray(array, dtype=CODE_DTYPES[code]).tobytes()


def decode_frt(payload: bytes) -> np.ndarray:
    if len(payload) < 6 or payload[:4] != MAGIC:
        raise CheckpointError("not an FRT1 payload (bad magic)")
    code, rank = struct.unpack_from('<BB', payload, 4)
    if code not in CODE_DTYPES:
        raise CheckpointError(f"unknown FRT1 dtype code {code}")
    offset = 6 + 4 * rank
    if len(payload) < offset:
        raise CheckpointError("truncated FRT1 header")
    shape = struct.unpack_from(f'<{rank}I', payload, 6)
    dtype = CODE_DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) - offset != expected:
        raise CheckpointError(f"FRT1 payload holds {len(payload) - offset} bytes, shape {shape} needs {expected}")
    array = np.frombuffer(payload, dtype=dtype, offset=offset).reshape(shape)
    return array.astype(dtype.newbyteorder('='))


def write_frt(path: PathLike, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_frt(array))


def read_frt(path: PathLike) -> np.ndarray:
    try:
        payload = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"tensor file not found: {path}") from None
    return decode_frt(payload)


def _manifest(arrays: Dict[str, np.ndarray]) -> str:
    lines = []
    for name in sorted(arrays):
        array = arrays[name]
        shape = 'x'.join(str(n) for n in array.shape) or 'scalar'
        lines.append(f"{name} {shape} {np.dtype(array.dtype).name}")
    return '\n'.join(lines) + '\n'


def _add_entry(archive: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, data)


def save_archive(
    target: Union[PathLike, BinaryIO],
    arrays: Dict[str, np.ndarray],
    meta: Optional[str] = None,
) -> None:
    """Write named arrays as FRT1 entries in sorted name order"""
    with zipfile.ZipFile(target, 'w') as archive:
        _add_entry(archive, MANIFEST_NAME, _manifest(arrays).encode('utf-8'))
        if meta is not None:
            _add_entry(archive, META_NAME, meta.encode('utf-8'))
        for name in sorted(arrays):
            _add_entry(archive, f"{name}.frt", encode_frt(arrays[name]))
    logger.debug(f"Saved archive with {len(arrays)} tensors")


def load_archive(source: Union[PathLike, BinaryIO]) -> Tuple[Dict[str, np.ndarray], Optional[str]]:
    """Read an archive back into ``(arrays, meta)``; the manifest is cross-checked"""
    try:
        archive = zipfile.ZipFile(source, 'r')
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {source}") from None
    except zipfile.BadZipFile as e:
        raise CheckpointError(f"corrupt checkpoint archive: {e}") from e

    with archive:
        entries = set(archive.namelist())
        if MANIFEST_NAME not in entries:
            raise CheckpointError("checkpoint archive has no manifest")
        arrays: Dict[str, np.ndarray] = {}
        for line in archive.read(MANIFEST_NAME).decode('utf-8').splitlines():
            if not line.strip():
                continue
            name, shape_text, dtype_name = line.rsplit(' ', 2)
            entry = f"{name}.frt"
            if entry not in entries:
                raise CheckpointError(f"manifest lists {name} but the archive lacks {entry}")
            array = decode_frt(archive.read(entry))
            shape = () if shape_text == 'scalar' else tuple(int(n) for n in shape_text.split('x'))
            if array.shape != shape or array.dtype.name != dtype_name:
                raise CheckpointError(f"{name}: manifest says {shape_text} {dtype_name}, entry holds {array.shape} {array.dtype}")
            arrays[name] = array
        meta = archive.read(META_NAME).decode('utf-8') if META_NAME in entries else None
    return arrays, meta


def archive_bytes(arrays: Dict[str, np.ndarray], meta: Optional[str] = None) -> bytes:
    buffer = io.BytesIO()
    save_archive(buffer, arrays, meta)
    return buffer.getvalue()
