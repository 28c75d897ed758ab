#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import json
import logging
import os.path
import struct

from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

import numpy as np

from mmrisk.mm_config import TrainingConfig, version_string
from mmrisk.mm_data import FeaturePipeline
from mmrisk.mm_exceptions import CheckpointError
from mmrisk.mm_models import ModelGraph, ScenarioTag, build_model
from mmrisk.mm_numeric import SeededRng

MAGIC = b'MMRK'
FORMAT_VERSION = 1
CHECKSUM_MODULUS = 2 ** 32
# magic, format version, scenario index, metadata length
HEADER_FMT = '<4sHBI'
CHECKSUM_FMT = '<I'


@dataclass
class Checkpoint:
    model: ModelGraph
    pipeline: FeaturePipeline
    config: TrainingConfig
    seed: int
    version: str = ''

    def __repr__(self):
        return f"Checkpoint(scenario={self.model.scenario.value}, seed={self.seed}, version={self.version})"


def compute_checksum(partial: bytes) -> bytes:
    checksum = int(np.frombuffer(partial, dtype=np.uint8).sum(dtype=np.uint64)) % CHECKSUM_MODULUS
    return struct.pack(CHECKSUM_FMT, checksum)


def verify_checksum(blob: bytes) -> bool:
    if len(blob) < struct.calcsize(CHECKSUM_FMT):
        return False
    return compute_checksum(blob[:-4]) == blob[-4:]


def encode_block(name: str, value: np.ndarray) -> bytes:
    name_bytes = name.encode('utf-8')
    value = np.ascontiguousarray(value, dtype='<f8')
    header = struct.pack(f'<H{len(name_bytes)}sB', len(name_bytes), name_bytes, value.ndim)
    dims = struct.pack(f'<{value.ndim}I', *value.shape)
    return header + dims + value.tobytes()


def construct_checkpoint(scenario: ScenarioTag, meta: Dict[str, Any], blocks: Dict[str, np.ndarray]) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True).encode('utf-8')
    partial = struct.pack(HEADER_FMT, MAGIC, FORMAT_VERSION, scenario.index, len(meta_bytes)) + meta_bytes
    partial += struct.pack('<H', len(blocks))
    partial += b''.join(encode_block(name, value) for name, value in blocks.items())
    return partial + compute_checksum(partial)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def unpack(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.blob):
            raise CheckpointError(f"Checkpoint truncated at byte {self.offset}")
        values = struct.unpack_from(fmt, self.blob, self.offset)
        self.offset += size
        return values

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.blob):
            raise CheckpointError(f"Checkpoint truncated at byte {self.offset}")
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk


def parse_checkpoint(blob: bytes) -> Tuple[ScenarioTag, Dict[str, Any], Dict[str, np.ndarray]]:
    if len(blob) < struct.calcsize(HEADER_FMT) + 4:
        raise CheckpointError(f"Checkpoint too short: {len(blob)} bytes")
    reader = _Reader(blob[:-4])
    magic, version, scenario_index, meta_len = reader.unpack(HEADER_FMT)
    if magic != MAGIC:
        raise CheckpointError(f"Not an mmrisk checkpoint, magic is {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format version {version}, expected {FORMAT_VERSION}")
    if not verify_checksum(blob):
        raise CheckpointError("Checkpoint checksum INVALID!")
    try:
        scenario = ScenarioTag.from_index(scenario_index)
        meta = json.loads(reader.take(meta_len).decode('utf-8'))
    except (ValueError, UnicodeDecodeError) as err:
        raise CheckpointError(f"Checkpoint metadata is unreadable: {err}")
    n_blocks, = reader.unpack('<H')
    blocks = {}
    for _ in range(n_blocks):
        name_len, = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        ndim, = reader.unpack('<B')
        dims = reader.unpack(f'<{ndim}I')
        count = int(np.prod(dims, dtype=np.int64))
        blocks[name] = np.frombuffer(reader.take(8 * count), dtype='<f8').reshape(dims).astype(np.float64)
    if reader.offset != len(reader.blob):
        raise CheckpointError(f"{len(reader.blob) - reader.offset} unexpected trailing byte(s) in checkpoint")
    return scenario, meta, blocks


def save_checkpoint(path: str, model: ModelGraph, pipeline: FeaturePipeline, config: TrainingConfig, seed: int):
    meta = {
        'config': config.to_dict(),
        'seed': int(seed),
        'version': version_string(),
        'n_clinical': model.n_clinical,
        'vocab_size': pipeline.vocabulary.size,
    }
    meta.update(pipeline.to_dict())
    blob = construct_checkpoint(model.scenario, meta, model.parameters())
    with open(path, 'wb') as fd:
        fd.write(blob)
    logging.info(f"checkpoint for {model.scenario.value} written to {path} ({len(blob)} bytes)")


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint not found, check if ``{path}`` exists!")
    with open(path, 'rb') as fd:
        blob = fd.read()
    scenario, meta, blocks = parse_checkpoint(blob)
    try:
        config = TrainingConfig.from_dict(meta['config'])
        pipeline = FeaturePipeline.from_dict(meta)
        model = build_model(scenario, int(meta['vocab_size']), int(meta['n_clinical']), config,
                            SeededRng(int(meta['seed'])))
    except KeyError as err:
        raise CheckpointError(f"Checkpoint metadata lacks key {err}")
    params = model.parameters()
    missing: List[str] = [name for name in params if name not in blocks]
    if missing or len(blocks) != len(params):
        raise CheckpointError(f"Checkpoint blocks do not match the {scenario.value} graph, missing: {missing}")
    for name, value in params.items():
        if value.shape != blocks[name].shape:
            raise CheckpointError(f"Block `{name}` has shape {blocks[name].shape}, graph expects {value.shape}")
        value[...] = blocks[name]
    logging.info(f"checkpoint {path} loaded: {model}")
    return Checkpoint(model=model, pipeline=pipeline, config=config, seed=int(meta['seed']),
                      version=meta.get('version', ''))
