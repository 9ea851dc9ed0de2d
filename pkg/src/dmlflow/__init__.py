"""Building-block programs and a dataflow runtime for decentralised ML.

Programs are written in a small composition language (see `dsl`),
compiled into dataflow graphs (`graph`), and executed either in one
process (`runtime`) or split into deployment groups talking TCP
(`net`). `mlkit` holds the neural network and federated averaging
numerics, `schemes` the ready-made master-worker, peer-to-peer and
tree-inference setups, and `experiments` the config-driven runner.
"""

from . import bindings, dsl, experiments, graph, mlkit, net, runtime
from . import schemes, wire
from .dsl import (ParseError, PatternNotFoundError, Program, parse, render,
                  rewrite, validate)
from .experiments import (ExperimentConfig, energy_per_flop, load_experiment,
                          run_experiment)
from .graph import (ChannelSpec, CompileError, DataflowGraph, DeploymentPlan,
                    NodeSpec, PartitionError, channel_stats, compile,
                    load_manifest, partition, to_dot, write_manifest)
from .mlkit import (Dataset, Hyperparams, ModelParams, evaluate, fedavg,
                    load_idx, mlp_init, synthetic_dataset, train_epochs)
from .net import run_group
from .runtime import (DeadlockError, ExecutionTrace, NodeFailure, RunResult,
                      run_local)
from .schemes import (FederationConfig, FlRecorder, TreeConfig,
                      build_master_worker, build_p2p, build_tree,
                      fl_bindings, standard_assignment, tree_bindings)
from .wire import TensorMsg, decode_frame, encode_frame

__version__ = "0.1.0"
