"""Bundle and checkpoint directories.

A bundle directory holds ``bundle.json`` (calibration values, standardizer and the
settings used for training) plus one model container per component. A checkpoint
directory adds the threshold state, the update monitor and the runner position.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, ValidationError

from ..analysis.detectors.dynamic_detector import Hypernetwork, ShiftGenerator
from ..analysis.detectors.evidence_controller import EvidentialClassifier
from ..analysis.detectors.standardizer import Standardizer
from ..analysis.detectors.static_detector import Autoencoder
from ..analysis.thresholds import ThresholdSnapshot, ThresholdState, restore_state, snapshot_state
from ..exceptions import DriftwatchError, ModelFormatError
from ..nn.serialization import (
    FORMAT_NAME,
    FORMAT_VERSION,
    ModelContainer,
    array_from_record,
    array_to_record,
    mlp_from_record,
    mlp_to_record,
    read_container,
    write_container,
)
from .bundle import ModelBundle
from .scoring import MonitorSnapshot, UpdateMonitor, restore_monitor, snapshot_monitor

MANIFEST_FILE = "bundle.json"
COMPONENT_FILES = {"scd": "scd.json", "iec": "iec.json", "dsd": "dsd.json"}
THRESHOLD_FILE = "threshold_state.json"
MONITOR_FILE = "monitor.json"
RUNNER_FILE = "runner.json"
BUNDLE_SUBDIR = "bundle"


class BundleManifest(BaseModel):
    format: str = FORMAT_NAME
    format_version: int = FORMAT_VERSION
    version: int = Field(ge=1)
    historical_count: int = Field(ge=0)
    mu_p: float
    mu_e: float
    mu_t: float
    pivot_init: float
    bootstrap_threshold: float
    standardizer: Dict[str, List[float]]
    settings: Dict[str, Any] = Field(default_factory=dict)
    extras: Dict[str, Any] = Field(default_factory=dict)


class RunnerCheckpoint(BaseModel):
    """Stream position and pending work of a :class:`~src.services.stream_runner.StreamRunner`."""

    next_index: int = Field(ge=0)
    buffer: List[List[float]] = Field(default_factory=list)
    buffer_capacity: int = Field(ge=1)
    pending_trigger: Optional[int] = None
    pending_swap_at: Optional[int] = None
    pending_reason: Optional[str] = None
    pending_data: List[List[float]] = Field(default_factory=list)
    evidence_clamps: int = 0
    updates_succeeded: int = 0
    updates_failed: int = 0


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, allow_nan=False), encoding="utf-8")


def _read_json(path: Path) -> Dict[str, Any]:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"Cannot read {path}: {e}") from e


def _scd_container(scd: Autoencoder) -> ModelContainer:
    return ModelContainer(
        role="scd",
        networks={"encoder": mlp_to_record(scd.encoder), "decoder": mlp_to_record(scd.decoder)},
        extras={"latent_dim": scd.latent_dim},
    )


def _iec_container(iec: EvidentialClassifier) -> ModelContainer:
    return ModelContainer(role="iec", networks={"classifier": mlp_to_record(iec.net)})


def _dsd_container(dsd: Hypernetwork) -> ModelContainer:
    networks = {"shared": mlp_to_record(dsd.shared)}
    networks.update({f"head{n}": mlp_to_record(head) for n, head in enumerate(dsd.heads)})
    arrays = {}
    for n, gen in enumerate(dsd.generators):
        for part, array in zip(("w1", "b1", "w2", "b2", "b_bar"), gen.arrays()):
            arrays[f"gen{n}.{part}"] = array_to_record(array)
    if dsd.embeddings is not None:
        arrays["embeddings"] = array_to_record(dsd.embeddings)
    return ModelContainer(
        role="dsd",
        networks=networks,
        arrays=arrays,
        extras={
            "target_layers": list(dsd.target_layers),
            "target_shapes": [list(gen.target_shape) for gen in dsd.generators],
            "n_layers": dsd.n_layers,
            "embedding_mode": dsd.embedding_mode,
        },
    )


def _scd_from(container: ModelContainer) -> Autoencoder:
    try:
        encoder = mlp_from_record(container.networks["encoder"])
        decoder = mlp_from_record(container.networks["decoder"])
        return Autoencoder(encoder, decoder)
    except KeyError as e:
        raise ModelFormatError(f"SCD container lacks network {e}") from e


def _iec_from(container: ModelContainer) -> EvidentialClassifier:
    try:
        return EvidentialClassifier(mlp_from_record(container.networks["classifier"]))
    except KeyError as e:
        raise ModelFormatError("IEC container lacks the classifier network") from e


def _dsd_from(container: ModelContainer, scd: Autoencoder) -> Hypernetwork:
    """Rebuild the hypernetwork, checking its shape manifest against the autoencoder."""
    extras = container.extras
    try:
        target_layers = tuple(int(i) for i in extras["target_layers"])
        target_shapes = [tuple(int(s) for s in shape) for shape in extras["target_shapes"]]
        n_layers = int(extras["n_layers"])
        embedding_mode = str(extras["embedding_mode"])
        shared = mlp_from_record(container.networks["shared"])
        heads = tuple(mlp_from_record(container.networks[f"head{n}"]) for n in range(len(target_layers)))
        generators = tuple(
            ShiftGenerator.from_arrays(
                [array_from_record(container.arrays[f"gen{n}.{part}"]) for part in ("w1", "b1", "w2", "b2", "b_bar")]
            )
            for n in range(len(target_layers))
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"Incomplete DSD container: {e}") from e

    shapes = scd.weight_shapes()
    if n_layers != len(shapes):
        raise ModelFormatError(f"DSD was built for {n_layers} layers, the autoencoder has {len(shapes)}")
    for layer, shape, gen in zip(target_layers, target_shapes, generators):
        if layer >= len(shapes) or tuple(shapes[layer]) != shape or gen.target_shape != shape:
            raise ModelFormatError(f"DSD shape manifest does not match autoencoder layer {layer}")
    embeddings = array_from_record(container.arrays["embeddings"]) if "embeddings" in container.arrays else None
    try:
        return Hypernetwork(shared, heads, generators, target_layers, n_layers, embedding_mode, embeddings)
    except DriftwatchError as e:
        raise ModelFormatError(f"Invalid DSD container: {e}") from e


def save_bundle(bundle: ModelBundle, directory: Path, settings: Optional[Dict[str, Any]] = None) -> Path:
    """Write a bundle directory and return its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_container(directory / COMPONENT_FILES["scd"], _scd_container(bundle.scd))
    write_container(directory / COMPONENT_FILES["iec"], _iec_container(bundle.iec))
    write_container(directory / COMPONENT_FILES["dsd"], _dsd_container(bundle.dsd))
    manifest = BundleManifest(
        version=bundle.version,
        historical_count=bundle.historical_count,
        mu_p=bundle.mu_p,
        mu_e=bundle.mu_e,
        mu_t=bundle.mu_t,
        pivot_init=bundle.pivot_init,
        bootstrap_threshold=bundle.bootstrap_threshold,
        standardizer=bundle.standardizer.to_dict(),
        settings=settings or {},
        extras=bundle.extras,
    )
    _write_json(directory / MANIFEST_FILE, manifest.model_dump(mode="json"))
    logger.bind(component="pipeline", model_version=bundle.version).info("bundle written to {}", directory)
    return directory


def load_manifest(directory: Path) -> BundleManifest:
    payload = _read_json(Path(directory) / MANIFEST_FILE)
    if payload.get("format") != FORMAT_NAME or payload.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{directory} is not a {FORMAT_NAME} v{FORMAT_VERSION} bundle")
    try:
        return BundleManifest.model_validate(payload)
    except ValidationError as e:
        raise ModelFormatError(f"Malformed bundle manifest in {directory}: {e}") from e


def load_bundle(directory: Path) -> ModelBundle:
    """Read a bundle directory written by :func:`save_bundle`.

    Raises:
        ModelFormatError: On missing files, format/version/role mismatches or a DSD
            shape manifest that does not fit the autoencoder
    """
    directory = Path(directory)
    manifest = load_manifest(directory)
    scd = _scd_from(read_container(directory / COMPONENT_FILES["scd"], "scd"))
    iec = _iec_from(read_container(directory / COMPONENT_FILES["iec"], "iec"))
    dsd = _dsd_from(read_container(directory / COMPONENT_FILES["dsd"], "dsd"), scd)
    try:
        standardizer = Standardizer.from_dict(manifest.standardizer)
    except (KeyError, DriftwatchError) as e:
        raise ModelFormatError(f"Invalid standardizer in {directory}: {e}") from e
    if not (standardizer.dim == scd.input_dim == iec.input_dim == dsd.input_dim):
        raise ModelFormatError(
            f"Component input dimensions disagree: standardizer={standardizer.dim} scd={scd.input_dim} "
            f"iec={iec.input_dim} dsd={dsd.input_dim}"
        )
    return ModelBundle(
        scd=scd,
        iec=iec,
        dsd=dsd,
        standardizer=standardizer,
        mu_p=manifest.mu_p,
        mu_e=manifest.mu_e,
        mu_t=manifest.mu_t,
        pivot_init=manifest.pivot_init,
        bootstrap_threshold=manifest.bootstrap_threshold,
        version=manifest.version,
        historical_count=manifest.historical_count,
        extras=manifest.extras,
    )


def save_checkpoint(
    directory: Path,
    bundle: ModelBundle,
    state: ThresholdState,
    monitor: UpdateMonitor,
    runner: RunnerCheckpoint,
    settings: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write bundle, threshold state, monitor and runner position into ``directory``."""
    directory = Path(directory)
    save_bundle(bundle, directory / BUNDLE_SUBDIR, settings)
    _write_json(directory / THRESHOLD_FILE, snapshot_state(state).model_dump(mode="json"))
    _write_json(directory / MONITOR_FILE, snapshot_monitor(monitor).model_dump(mode="json"))
    _write_json(directory / RUNNER_FILE, runner.model_dump(mode="json"))
    logger.bind(component="pipeline").debug("checkpoint at index {} written to {}", runner.next_index, directory)
    return directory


def load_checkpoint(directory: Path) -> Tuple[ModelBundle, ThresholdState, UpdateMonitor, RunnerCheckpoint]:
    """Restore everything written by :func:`save_checkpoint`."""
    directory = Path(directory)
    bundle = load_bundle(directory / BUNDLE_SUBDIR)
    try:
        state = restore_state(ThresholdSnapshot.model_validate(_read_json(directory / THRESHOLD_FILE)))
        monitor = restore_monitor(MonitorSnapshot.model_validate(_read_json(directory / MONITOR_FILE)))
        runner = RunnerCheckpoint.model_validate(_read_json(directory / RUNNER_FILE))
    except ValidationError as e:
        raise ModelFormatError(f"Malformed checkpoint in {directory}: {e}") from e
    if any(len(row) != bundle.input_dim for row in runner.buffer + runner.pending_data):
        raise ModelFormatError(f"Checkpoint buffer rows do not match the bundle dimension {bundle.input_dim}")
    return bundle, state, monitor, runner


def rows_to_array(rows: List[List[float]], dim: int) -> np.ndarray:
    return np.array(rows, dtype=np.float64).reshape(len(rows), dim)
