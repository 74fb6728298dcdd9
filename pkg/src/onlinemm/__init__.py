"""Online map matching as a Markov decision process, trained with Double DQN.

A streaming matcher assigns each incoming GPS point to a road segment,
k points at a time, carrying only two recurrent hidden vectors between
steps. Rule-based comparators (online HMM, MDP value iteration, greedy
nearest) and a synthetic world generator are included.
"""
from .baselines import (
    HmmConfig,
    MdpConfig,
    brute_force_best_path,
    greedy_nearest_match,
    hmm_online_match,
    mdp_value_iteration_match,
)
from .data import LabeledTrajectory, SynthConfig, downsample, load_trajectories, split, synth_generate
from .encoders import EncoderContext, GlobalReps, MatchingModel, ModelConfig
from .engine import OnlineMatcher, PrefixReencodingMatcher
from .evaluation import MatchReport, acct, latency_harness, lcsr
from .geo import GeoPoint, GridCell, GridSpec, grid_of, haversine_m, spec_from_bbox
from .omdp import RewardConfig, compute_reward, prepare_trajectory, select_action
from .pipeline import Workspace, build_context, prepare_workspace
from .rl import ReplayBuffer, TrainingConfig, info_nce, total_loss, train
from .roadnet import RoadSegment, build_link_graph, candidates, connectivity_delta
from .trajgraph import build_mapping, build_transition_graph, update_transition_graph

__version__ = "0.1.0"
