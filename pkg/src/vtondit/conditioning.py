"""Builds the concatenated garment+person token sequence fed to the backbone.

Layout per frame is a channel stack [latent C | condition C | mask 1], so a
frame carries 2C+1 channels. Garment frames come first on the time axis,
person frames follow; a leading subset of person frames may be "prompt"
frames whose full content is exposed (mask all-zero), which is how clip
continuation is both trained and driven at inference.

Conventions: imagery lives in [-1, 1], masks are exactly {0, 1}. The latent
slot of garment frames always holds the clean garment image and is never
noised; person-frame latent slots hold the denoising target (training) or
the evolving sample (inference).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

GARMENT = "garment"
PERSON = "person"
PROMPT = "prompt"


@dataclass
class ConditionedSequence:
    frames: np.ndarray          # [G+T, 2C+1, H, W] float32
    pose: np.ndarray            # [G+T, P, H, W] float32, zero on garment frames
    roles: tuple[str, ...]      # one of garment/person/prompt per frame
    channels: int               # C, image channels per frame

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def garment_count(self) -> int:
        return sum(1 for r in self.roles if r == GARMENT)

    @property
    def person_count(self) -> int:
        return self.num_frames - self.garment_count

    @property
    def prompt_count(self) -> int:
        return sum(1 for r in self.roles if r == PROMPT)

    @property
    def person_slice(self) -> slice:
        return slice(self.garment_count, self.num_frames)

    def latents(self) -> np.ndarray:
        """Person-frame latent channels, view [T, C, H, W]."""
        return self.frames[self.person_slice, :self.channels]

    def copy(self) -> "ConditionedSequence":
        return ConditionedSequence(self.frames.copy(), self.pose.copy(),
                                   self.roles, self.channels)

    def with_person_latents(self, latents: np.ndarray) -> "ConditionedSequence":
        """New sequence whose person-frame latent slots hold `latents`."""
        frames = self.frames.copy()
        frames[self.person_slice, :self.channels] = latents
        return replace(self, frames=frames)


def _check_binary(mask: np.ndarray, where: str) -> None:
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ContractError(f"{where} expects a binary mask with values in {{0, 1}}")


def apply_agnostic_mask(person: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Occlude the person with the agnostic mask: person * (1 - mask)."""
    person = np.asarray(person)
    mask = np.asarray(mask)
    if mask.ndim != person.ndim or mask.shape[-2:] != person.shape[-2:] \
            or mask.shape[:-3] != person.shape[:-3] or mask.shape[-3] != 1:
        raise ShapeError(
            f"mask shape {mask.shape} does not broadcast over person shape {person.shape}")
    _check_binary(mask, "apply_agnostic_mask")
    return (person * (1.0 - mask)).astype(person.dtype)


def assemble_sequence(person: np.ndarray, mask: np.ndarray, pose: np.ndarray,
                      garment: np.ndarray, prompt_count: int = 0) -> ConditionedSequence:
    """Stack garment and person frames into one conditioned sequence.

    person:  [T, C, H, W] clean frames (the denoising target)
    mask:    [T, 1, H, W] binary agnostic masks
    pose:    [T, P, H, W] pose maps for the person frames
    garment: [C, H, W] or [G, C, H, W] garment image(s)
    prompt_count: first `prompt_count` person frames are exposed unmasked
    """
    person = np.asarray(person, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)
    pose = np.asarray(pose, dtype=np.float32)
    garment = np.asarray(garment, dtype=np.float32)
    if garment.ndim == 3:
        garment = garment[None]
    if person.ndim != 4 or garment.ndim != 4:
        raise ShapeError(f"bad input ranks: person {person.shape}, garment {garment.shape}")

    total, channels, height, width = person.shape
    if garment.shape[1:] != (channels, height, width):
        raise ShapeError(f"garment shape {garment.shape} mismatches person {person.shape}")
    if mask.shape != (total, 1, height, width):
        raise ShapeError(f"mask shape {mask.shape}, expected {(total, 1, height, width)}")
    if pose.shape[0] != total or pose.shape[2:] != (height, width):
        raise ShapeError(f"pose shape {pose.shape} mismatches person {person.shape}")
    if not 0 <= prompt_count <= total:
        raise ContractError(f"prompt_count {prompt_count} outside [0, {total}]")
    _check_binary(mask, "assemble_sequence")

    garment_count = garment.shape[0]
    masked = apply_agnostic_mask(person, mask)
    frames = np.zeros((garment_count + total, 2 * channels + 1, height, width),
                      dtype=np.float32)

    frames[:garment_count, :channels] = garment             # clean latent slot
    frames[:garment_count, channels:2 * channels] = garment  # condition slot
    # garment mask channel stays all-zero

    frames[garment_count:, :channels] = person
    frames[garment_count:, channels:2 * channels] = masked
    frames[garment_count:, 2 * channels] = mask[:, 0]
    if prompt_count:
        frames[garment_count:garment_count + prompt_count, channels:2 * channels] = \
            person[:prompt_count]
        frames[garment_count:garment_count + prompt_count, 2 * channels] = 0.0

    pose_stack = np.zeros((garment_count + total, pose.shape[1], height, width),
                          dtype=np.float32)
    pose_stack[garment_count:] = pose

    roles = (GARMENT,) * garment_count \
        + (PROMPT,) * prompt_count + (PERSON,) * (total - prompt_count)
    return ConditionedSequence(frames, pose_stack, roles, channels)


def split_sequence(seq: ConditionedSequence) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recover (person, mask, garment) from an assembled sequence."""
    g = seq.garment_count
    c = seq.channels
    person = seq.frames[g:, :c].copy()
    mask = seq.frames[g:, 2 * c:2 * c + 1].copy()
    for i, role in enumerate(seq.roles[g:]):
        if role == PROMPT:
            mask[i] = 0.0  # prompt masks were zeroed at assembly; nothing to restore
    garment = seq.frames[:g, :c].copy()
    return person, mask, garment


def drop_garment(seq: ConditionedSequence) -> ConditionedSequence:
    """Zero the garment frames' condition channels (CFG dropout / uncond branch)."""
    frames = seq.frames.copy()
    c = seq.channels
    for i, role in enumerate(seq.roles):
        if role == GARMENT:
            frames[i, c:2 * c] = 0.0
    return replace(seq, frames=frames)


def patchify(frames: np.ndarray, patch: int) -> tuple[np.ndarray, np.ndarray]:
    """Rearrange [F, ch, H, W] into per-patch rows plus (frame, row, col) positions.

    Lossless: tokens have ch * patch^2 entries each; unpatchify inverts exactly.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ShapeError(f"patchify expects [F, ch, H, W], got {frames.shape}")
    nframes, ch, height, width = frames.shape
    if height % patch or width % patch:
        raise ConfigError(f"extents {height}x{width} not divisible by patch size {patch}")
    rows, cols = height // patch, width // patch
    tokens = frames.reshape(nframes, ch, rows, patch, cols, patch) \
        .transpose(0, 2, 4, 1, 3, 5) \
        .reshape(nframes * rows * cols, ch * patch * patch)
    fi, ri, ci = np.meshgrid(np.arange(nframes), np.arange(rows), np.arange(cols),
                             indexing="ij")
    positions = np.stack([fi.reshape(-1), ri.reshape(-1), ci.reshape(-1)], axis=1)
    return np.ascontiguousarray(tokens), positions


def unpatchify(tokens: np.ndarray, nframes: int, ch: int, height: int, width: int,
               patch: int) -> np.ndarray:
    tokens = np.asarray(tokens)
    rows, cols = height // patch, width // patch
    if tokens.shape != (nframes * rows * cols, ch * patch * patch):
        raise ShapeError(f"token block {tokens.shape} mismatches frame grid "
                         f"{(nframes * rows * cols, ch * patch * patch)}")
    return tokens.reshape(nframes, rows, cols, ch, patch, patch) \
        .transpose(0, 3, 1, 4, 2, 5) \
        .reshape(nframes, ch, height, width)
