"""Latent relational metric learning for implicit-feedback ranking, with
CML, BPR and generalized-MF baselines."""

from .baselines import BaselineParams, bpr_pair_loss, cml_score, mf_score
from .data import (Dataset, RawEvent, SplitDataset, build_dataset, leave_one_out_split,
                   load_events, sample_train_negative)
from .evaluation import MetricsReport, RankResult, evaluate, ndcg_at_10, rank_target
from .model import (ForwardCache, ModelParams, ParamGrads, attention, backward_pair,
                    forward_pair, joint_embedding, relation_vector, score)
from .optim import TrainConfig, adam_step, hinge_loss, project_unit_ball, train

__version__ = "0.1.0"
