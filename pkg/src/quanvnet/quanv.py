"""Quanvolutional preprocessing layer.

A 28x28 image is tiled into non-overlapping 2x2 patches. Each patch is
angle-encoded onto 4 qubits (pixel (r, c) drives qubit 2r+c), pushed
through one fixed, seeded random circuit shared by the whole dataset, and
decoded into 4 per-qubit Pauli-Z statistics. The result is a 14x14x4
feature map.

The layer is a fixed transform: nothing here is trained. With ``shots=0``
features are exact expectations; with ``shots>0`` they are estimated from
a seeded multinomial draw, reproducing hardware-style sampling noise.
Shot seeds derive from (base seed, image index, patch index), so parallel
preprocessing is order-independent.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as data_mod
from .cache import CacheRecord, write_cache
from .errors import ConfigError, IngestError
from .qsim import (
    Circuit,
    circuit_unitary,
    estimate_p0_from_shots,
    estimate_z_from_shots,
    expectation_z,
    run_circuit,
    sample_shots,
)
from .rng import make_rng

PATCH = 2
GRID = 14  # 28 / PATCH
CHANNELS = 4

ENCODING_GATES = ("RY", "RX")
DECODE_MODES = ("Z_EXPECTATION", "PROBABILITY_OF_ZERO")

_ROTATION_POOL = ("RX", "RY", "RZ")
_CNOT_RING = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass(frozen=True)
class QuanvConfig:
    """Settings of the quanvolutional layer.

    ``shots=0`` means analytic expectation values (deterministic, used for
    CI); positive values sample that many measurements per patch.
    ``angle_scale`` is radians per unit pixel intensity, default pi so the
    encoding sweeps the full |0> -> |1> arc over [0, 1].
    """

    encoding_gate: str = "RY"
    shots: int = 0
    circuit_seed: int = 0
    circuit_depth: int = 1
    patch_size: int = PATCH
    stride: int = PATCH
    angle_scale: float = math.pi
    decode: str = "Z_EXPECTATION"

    def __post_init__(self):
        if self.encoding_gate not in ENCODING_GATES:
            raise ConfigError(f"encoding_gate must be one of {ENCODING_GATES}, got {self.encoding_gate!r}")
        if self.shots < 0:
            raise ConfigError(f"shots must be >= 0, got {self.shots}")
        if self.circuit_depth < 1:
            raise ConfigError(f"circuit_depth must be >= 1, got {self.circuit_depth}")
        if self.patch_size != PATCH or self.stride != PATCH:
            raise ConfigError("patch geometry is fixed at 2x2 patches with stride 2")
        if self.angle_scale <= 0:
            raise ConfigError(f"angle_scale must be positive, got {self.angle_scale}")
        if self.decode not in DECODE_MODES:
            raise ConfigError(f"decode must be one of {DECODE_MODES}, got {self.decode!r}")


def config_digest(config: QuanvConfig, **extra) -> bytes:
    """32-byte sha256 digest of the preprocessing configuration.

    Stored in the cache header so stale caches are detected before training.
    """
    payload = {"quanv": asdict(config), **extra}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).digest()


def generate_random_circuit(seed: int, depth: int) -> Circuit:
    """Fixed 4-qubit random circuit, fully determined by (seed, depth).

    Each layer draws, per qubit in order, one rotation gate uniformly from
    {RX, RY, RZ} then an angle uniformly from [0, 2pi), and closes with a
    CNOT ring 0->1->2->3->0.
    """
    if depth < 1:
        raise ConfigError(f"depth must be >= 1, got {depth}")
    rng = make_rng(seed, "rqc")
    circuit = Circuit(CHANNELS)
    for _ in range(depth):
        for q in range(CHANNELS):
            gate = _ROTATION_POOL[rng.integers(0, len(_ROTATION_POOL))]
            angle = rng.uniform(0.0, 2.0 * math.pi)
            circuit.add(gate, [q], (angle,))
        for control, target in _CNOT_RING:
            circuit.add("CNOT", [control, target])
    return circuit


def encode_patch(patch: np.ndarray, config: QuanvConfig) -> Circuit:
    """Angle-encoding circuit for one 2x2 patch: pixel (r, c) -> qubit 2r+c."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (PATCH, PATCH):
        raise ConfigError(f"patch must be 2x2, got shape {patch.shape}")
    if patch.min() < 0.0 or patch.max() > 1.0:
        raise ConfigError("patch pixel values must lie in [0, 1]")
    circuit = Circuit(CHANNELS)
    for r in range(PATCH):
        for c in range(PATCH):
            circuit.add(config.encoding_gate, [2 * r + c], (config.angle_scale * patch[r, c],))
    return circuit


def _decode_exact(z: float, mode: str) -> float:
    return z if mode == "Z_EXPECTATION" else (1.0 + z) / 2.0


def quanv_patch(
    patch: np.ndarray,
    circuit: Circuit,
    config: QuanvConfig,
    rng_seed=0,
) -> np.ndarray:
    """Transform one patch into 4 features.

    Runs the encoding then the random circuit from |0000> and decodes one
    Pauli-Z statistic per qubit: exact when ``config.shots == 0``, else
    estimated from ``config.shots`` sampled measurements.
    """
    if circuit.n_qubits != CHANNELS:
        raise ConfigError(f"random circuit must have {CHANNELS} qubits, got {circuit.n_qubits}")
    full = encode_patch(patch, config)
    full.ops.extend(circuit.ops)
    state = run_circuit(full)
    features = np.empty(CHANNELS, dtype=np.float64)
    if config.shots == 0:
        for q in range(CHANNELS):
            features[q] = _decode_exact(expectation_z(state, q), config.decode)
    else:
        counts = sample_shots(state, config.shots, rng_seed)
        estimator = estimate_z_from_shots if config.decode == "Z_EXPECTATION" else estimate_p0_from_shots
        for q in range(CHANNELS):
            features[q] = estimator(counts, q)
    return features


def _image_patches(image: np.ndarray) -> np.ndarray:
    """(28, 28) -> (196, 2, 2) row-major non-overlapping tiles."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (GRID * PATCH, GRID * PATCH):
        raise ConfigError(f"image must be 28x28, got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ConfigError("image pixel values must lie in [0, 1]")
    return image.reshape(GRID, PATCH, GRID, PATCH).transpose(0, 2, 1, 3).reshape(-1, PATCH, PATCH)


# Per-qubit Z masks over the 4-qubit basis: +1 where the bit is 0.
_Z_MASKS = np.array(
    [[1.0 - 2.0 * ((b >> q) & 1) for b in range(16)] for q in range(CHANNELS)]
).T  # shape (16, 4)


def _exact_feature_grid(patches: np.ndarray, config: QuanvConfig, circuit: Circuit) -> np.ndarray:
    """Vectorized exact-expectation path for all patches of one image.

    The shared circuit is folded into one 16x16 unitary; each encoded patch
    is a product state assembled directly from the rotation amplitudes.
    Results match the per-patch route through quanv_patch to float
    precision (asserted in tests).
    """
    half = 0.5 * config.angle_scale * patches  # (P, 2, 2)
    amp0 = np.cos(half)
    amp1 = np.sin(half).astype(complex)
    if config.encoding_gate == "RX":
        amp1 = -1j * amp1
    # qubit k = pixel (k // 2, k % 2); stack as (P, 2) amplitude pairs
    qubit_amps = [
        np.stack([amp0[:, k // 2, k % 2], amp1[:, k // 2, k % 2]], axis=1)
        for k in range(CHANNELS)
    ]
    states = np.einsum(
        "pa,pb,pc,pd->pabcd",
        qubit_amps[3], qubit_amps[2], qubit_amps[1], qubit_amps[0],
    ).reshape(-1, 16)
    states = states @ circuit_unitary(circuit).T
    probs = np.abs(states) ** 2
    z = probs @ _Z_MASKS  # (P, 4)
    if config.decode == "PROBABILITY_OF_ZERO":
        z = (1.0 + z) / 2.0
    return z


def quanv_image(
    image: np.ndarray,
    config: QuanvConfig,
    circuit: Circuit | None = None,
    base_seed: int | None = None,
    image_index: int = 0,
) -> np.ndarray:
    """Transform a 28x28 image into a (14, 14, 4) feature map.

    Tile (r, c) of the input produces the four channels at output position
    (r, c). ``base_seed``/``image_index`` only matter when shots > 0, where
    the shot RNG for each patch is seeded by (base_seed, image_index,
    patch_index).
    """
    if circuit is None:
        circuit = generate_random_circuit(config.circuit_seed, config.circuit_depth)
    patches = _image_patches(image)
    if config.shots == 0:
        features = _exact_feature_grid(patches, config, circuit)
    else:
        if base_seed is None:
            base_seed = config.circuit_seed
        features = np.empty((patches.shape[0], CHANNELS), dtype=np.float64)
        for p, patch in enumerate(patches):
            features[p] = quanv_patch(patch, circuit, config, rng_seed=(base_seed, image_index, p))
    return features.reshape(GRID, GRID, CHANNELS)


@dataclass
class PreprocessFailure:
    path: str
    reason: str


@dataclass
class PreprocessSummary:
    records: int
    per_class: dict[str, int]
    checksum: str
    config_digest: str
    failures: list[PreprocessFailure] = field(default_factory=list)


def _transform_entry(job) -> tuple[int, np.ndarray]:
    index, path, config, circuit, divisor, base_seed = job
    image = data_mod.load_model_input(path, divisor)
    return index, quanv_image(image, config, circuit, base_seed=base_seed, image_index=index)


def preprocess_dataset(
    entries,
    config: QuanvConfig,
    cache_path: str | os.PathLike,
    *,
    class_names: tuple[str, ...],
    divisor: float = 255.0,
    base_seed: int | None = None,
    jobs: int = 1,
) -> PreprocessSummary:
    """Quanvolve every manifest entry and persist the results as a cache file.

    Unreadable images are recorded and skipped; if any failed, no cache is
    written and an IngestError listing every bad path is raised.
    """
    circuit = generate_random_circuit(config.circuit_seed, config.circuit_depth)
    digest = config_digest(config, divisor=divisor, classes=list(class_names))
    if base_seed is None:
        base_seed = config.circuit_seed

    label_ids = {name: i for i, name in enumerate(class_names)}
    for e in entries:
        if e.label not in label_ids:
            raise ConfigError(f"label {e.label!r} not in class vocabulary {class_names}")

    jobs_list = [
        (i, e.path, config, circuit, divisor, base_seed) for i, e in enumerate(entries)
    ]
    results: dict[int, np.ndarray] = {}
    failures: list[PreprocessFailure] = []
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for job, outcome in zip(jobs_list, pool.map(_try_transform, jobs_list, chunksize=8)):
                index, feats, reason = outcome
                if reason is None:
                    results[index] = feats
                else:
                    failures.append(PreprocessFailure(job[1], reason))
    else:
        for job in jobs_list:
            index, feats, reason = _try_transform(job)
            if reason is None:
                results[index] = feats
            else:
                failures.append(PreprocessFailure(job[1], reason))

    if failures:
        listing = "; ".join(f"{f.path}: {f.reason}" for f in failures)
        raise IngestError(f"{len(failures)} image(s) could not be preprocessed: {listing}")

    records = [
        CacheRecord(label_ids[e.label], e.path, results[i].astype(np.float32))
        for i, e in enumerate(entries)
    ]
    checksum = write_cache(cache_path, records, digest, shape=(GRID, GRID, CHANNELS))
    per_class = {name: 0 for name in class_names}
    for e in entries:
        per_class[e.label] += 1
    return PreprocessSummary(len(records), per_class, checksum, digest.hex())


def _try_transform(job):
    try:
        index, feats = _transform_entry(job)
        return index, feats, None
    except IngestError as exc:
        return job[0], None, str(exc)
