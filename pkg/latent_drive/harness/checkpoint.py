# harness/checkpoint.py
"""
Checkpoint container.

Little-endian layout:

    magic "HWCK" | u32 version | u32 config length | config text (UTF-8)
    u64 global step | u32 section count
    per section: u16 name length | name | u32 entry count
        per entry: u16 name length | name | u32 ndim | u32 dims... | f32 values

The whole file is parsed and checked against the target modules before any
parameter is overwritten, so a bad file never leaves a half-loaded model.
"""
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..constants import CHECKPOINT_MAGIC, CHECKPOINT_SECTIONS, CHECKPOINT_VERSION
from ..errors import CheckpointError, ConfigurationError
from ..utils import ensure_dir, log_error, log_info


@dataclass
class Checkpoint:
    config_text: str
    global_step: int
    sections: "OrderedDict[str, OrderedDict[str, np.ndarray]]" = field(default_factory=OrderedDict)


def _pack_name(name):
    raw = name.encode('utf-8')
    return struct.pack('<H', len(raw)) + raw


def encode_checkpoint(checkpoint):
    parts = [CHECKPOINT_MAGIC, struct.pack('<I', CHECKPOINT_VERSION)]
    config = checkpoint.config_text.encode('utf-8')
    parts += [struct.pack('<I', len(config)), config]
    parts += [struct.pack('<QI', checkpoint.global_step, len(checkpoint.sections))]
    for section, entries in checkpoint.sections.items():
        parts += [_pack_name(section), struct.pack('<I', len(entries))]
        for name, values in entries.items():
            values = np.asarray(values, dtype='<f4')
            parts += [_pack_name(name), struct.pack('<I', values.ndim)]
            parts += [struct.pack(f'<{values.ndim}I', *values.shape), values.tobytes()]
    return b''.join(parts)


class _Reader:

    def __init__(self, data, path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size):
        if self.offset + size > len(self.data):
            raise CheckpointError(f"Checkpoint {self.path} is truncated at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def name(self):
        (length,) = self.unpack('<H')
        try:
            return self.take(length).decode('utf-8')
        except UnicodeDecodeError:
            raise CheckpointError(f"Checkpoint {self.path} holds an undecodable name")


def decode_checkpoint(data, path='<bytes>'):
    reader = _Reader(data, path)
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: expected magic {CHECKPOINT_MAGIC!r}, found {magic!r}")
    (version,) = reader.unpack('<I')
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: expected format version {CHECKPOINT_VERSION}, found {version}")
    (config_length,) = reader.unpack('<I')
    try:
        config_text = reader.take(config_length).decode('utf-8')
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: config snapshot is not UTF-8")
    global_step, section_count = reader.unpack('<QI')
    sections = OrderedDict()
    for _ in range(section_count):
        section = reader.name()
        (entry_count,) = reader.unpack('<I')
        entries = OrderedDict()
        for _ in range(entry_count):
            name = reader.name()
            (ndim,) = reader.unpack('<I')
            shape = reader.unpack(f'<{ndim}I') if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            values = np.frombuffer(reader.take(4 * count), dtype='<f4').astype(np.float32).reshape(shape)
            entries[name] = values
        sections[section] = entries
    if reader.offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - reader.offset} trailing bytes after the last section")
    return Checkpoint(config_text=config_text, global_step=int(global_step), sections=sections)


def save_checkpoint(path, config, global_step, modules):
    """
    Write every module's parameters and the config snapshot.

    Args:
        path (str): Output file
        config (RunConfig): Snapshot stored as key = value text
        global_step (int): Number of world-model updates done
        modules (dict): section name -> ParamStore, in CHECKPOINT_SECTIONS order
    """
    sections = OrderedDict((name, modules[name].to_arrays()) for name in CHECKPOINT_SECTIONS if name in modules)
    data = encode_checkpoint(Checkpoint(config.to_text(), int(global_step), sections))
    ensure_dir(os.path.dirname(path))
    tmp_path = f"{path}.tmp"
    try:
        with open(tmp_path, 'wb') as handle:
            handle.write(data)
        os.replace(tmp_path, path)
    except OSError as e:
        log_error(f"Error writing checkpoint {path}: {str(e)}")
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}")
    log_info(f"Saved checkpoint {path} (step {global_step}, {len(data)} bytes)")


def read_checkpoint(path):
    """Parse a checkpoint file without applying it."""
    try:
        with open(path, 'rb') as handle:
            data = handle.read()
    except OSError as e:
        log_error(f"Error reading checkpoint {path}: {str(e)}")
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
    return decode_checkpoint(data, path)


def check_sections(checkpoint, modules):
    """Raise ConfigurationError naming the first section that does not fit its module."""
    for name, module in modules.items():
        if name not in checkpoint.sections:
            raise ConfigurationError(f"Checkpoint has no section '{name}'")
        arrays = checkpoint.sections[name]
        expected = OrderedDict((n, tuple(p.shape)) for n, p in module.named_parameters())
        if list(expected) != list(arrays):
            raise ConfigurationError(f"Section '{name}' parameter names do not match the model")
        for entry, shape in expected.items():
            if tuple(arrays[entry].shape) != shape:
                raise ConfigurationError(
                    f"Section '{name}' entry '{entry}' has shape {tuple(arrays[entry].shape)}, expected {shape}")


def apply_checkpoint(checkpoint, modules):
    """Validate every section against its module, then overwrite the modules."""
    check_sections(checkpoint, modules)
    for name, module in modules.items():
        module.load_arrays(checkpoint.sections[name], section=name)


def load_checkpoint(path, modules):
    """
    Parse, validate, then apply a checkpoint.

    Args:
        path (str): Checkpoint file
        modules (dict): section name -> ParamStore to overwrite

    Returns:
        Checkpoint: The parsed container
    """
    checkpoint = read_checkpoint(path)
    apply_checkpoint(checkpoint, modules)
    log_info(f"Loaded checkpoint {path} (step {checkpoint.global_step})")
    return checkpoint
