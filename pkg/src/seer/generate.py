"""Seeded dataset generation: episodes of simulated traffic windowed into records."""

from __future__ import annotations

import dataclasses
import logging
from typing import Callable, Iterator

from .dataset import SPLIT_CODES, SequenceRecord, record_stream
from .errors import DataError
from .road import RoadModel
from .world import SimFrame, World, WorldSettings

log = logging.getLogger(__name__)

MAX_EPISODES = 100_000
AGENT_STRIDE = 1000  # agent ids are episode * stride + agent


def episode_seed(seed: int, split: str, episode: int) -> int:
    """Episode seeds never collide across splits or base seeds differing by parity."""
    if not 0 <= episode < MAX_EPISODES:
        raise DataError(f"episode index {episode} out of range")
    return (int(seed) * len(SPLIT_CODES) + SPLIT_CODES.index(split)) * MAX_EPISODES + episode


def episode_frames(road: RoadModel, seed: int, settings: WorldSettings, episode: int = 0,
                   **world_kwargs) -> Iterator[SimFrame]:
    world = World(road, seed, settings, **world_kwargs)
    for frames in world.run():
        for f in frames:
            yield dataclasses.replace(f, agent_id=episode * AGENT_STRIDE + f.agent_id)


def generate_records(road: RoadModel, n: int, T: int, seed: int, split: str = "train", *,
                     settings: WorldSettings | None = None, variant: str = "A3", first_id: int = 0,
                     keep: Callable[[SequenceRecord], bool] | None = None,
                     **world_kwargs) -> list[SequenceRecord]:
    """Run episodes until ``n`` records are collected; fully determined by the arguments."""
    settings = settings or WorldSettings()
    out: list[SequenceRecord] = []
    episode = 0
    while len(out) < n:
        if episode >= MAX_EPISODES:
            raise DataError(f"could not collect {n} records in {MAX_EPISODES} episodes")
        ep_seed = episode_seed(seed, split, episode)
        frames = episode_frames(road, ep_seed, settings, episode, **world_kwargs)
        got = record_stream(frames, T, out.append, road, variant=variant, split=split,
                            first_id=first_id + len(out), limit=n - len(out), keep=keep)
        if got == 0 and episode > 10 and not out:
            raise DataError("episodes produce no records; check road length and duration")
        episode += 1
    log.info("%s: %d records from %d episodes", split, len(out), episode)
    return out
