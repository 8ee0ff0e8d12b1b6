from .attack import AttackExperiment, CompareExperiment, MemorizationExperiment, ScatterExperiment
from .base import BaseExperiment
from .privacy import AccountExperiment, GpmExperiment, SensitivityExperiment
from .sweeps import SweepDpsgdExperiment, SweepGpmExperiment, SweepL2Experiment
from .training import DataExperiment, TrainExperiment

EXPERIMENTS: dict[str, type[BaseExperiment]] = {
    cls.name: cls for cls in (
        DataExperiment,
        TrainExperiment,
        AttackExperiment,
        SensitivityExperiment,
        GpmExperiment,
        AccountExperiment,
        SweepDpsgdExperiment,
        SweepGpmExperiment,
        SweepL2Experiment,
        MemorizationExperiment,
        ScatterExperiment,
        CompareExperiment,
    )
}
