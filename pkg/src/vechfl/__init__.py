"""Multi-model hierarchical federated learning over vehicles, edge servers
and a cloud: timeline model, event simulator, PSO-GA/greedy scheduler and
baseline schedulers."""
from .config import (EdgeServerSpec, HyperParams, Schedule, SimParams, SystemConfig, TaskSpec,
                     TrainingSequence, VehicleSpec, load_config, validate_config)
from .mobility import ChannelParams, RoadNetwork

__version__ = "0.1.0"
