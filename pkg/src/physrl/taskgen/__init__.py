"""Self-supervised intuitive-physics task generators."""
from .aot import ClipRecord, Playback, balance_playback, clip_to_mcq, gen_aot_mcqs, reverse_clip
from .permanence import (
    EventKind,
    InvalidLog,
    PermanenceConfig,
    SceneEvent,
    SceneEventLog,
    gen_permanence_scene,
    label_permanence,
    log_problems,
    permanence_to_mcq,
)
from .puzzle import (
    Direction,
    DirectionTask,
    NotEnoughDistractors,
    PatchGrid,
    Position,
    PuzzleInstance,
    SameImageTask,
    WrongArity,
    gen_puzzle,
    split_into_patches,
    synthetic_grid,
)
