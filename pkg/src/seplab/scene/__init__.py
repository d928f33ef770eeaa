"""Scene simulation: sources, rooms, reverberant mixing and dataset manifests."""

from seplab.scene.dataset import DatasetConfig, ManifestDataset, generate_dataset, read_manifest
from seplab.scene.mixing import (
    MixtureExample,
    RoomSpec,
    SceneSpec,
    mix_scene,
    sample_feasible_scene,
    sample_scene,
    scene_errors,
    simulate_example,
)
from seplab.scene.rir import decay_matched_absorption, decay_time, schroeder_decay_db, simulate_rir
from seplab.scene.signals import activity_mask, measure_overlap, synth_noise, synth_speechlike
