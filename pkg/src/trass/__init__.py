"""Goal-bound trajectory prediction from reversed exploration, applied to planar block mating."""

from trass.bench import ExperimentSpec, ResultsTable, Variant, run_experiment, success_rate_with_se
from trass.blocks import BlockPair, BlockShape, enumerate_pairs, split_catalog
from trass.geometry import Polygon, Pose2
from trass.learn import (
    DynamicsEnsemble, DynamicsModel, TanhRegressor, TimeReversalModel, TrainConfig, load_checkpoint,
    save_checkpoint, train_dynamics, train_trm,
)
from trass.plan import CemConfig, OracleDynamics, PolicyKind, run_episode
from trass.sim import PushAction, SimConfig, WorldState, step

__version__ = "0.1.0"
