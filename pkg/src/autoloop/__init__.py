"""AutoLoop: loop-closure-aware fine-tuning with a learned loop-loss curriculum.

Library layout:
    liegroup    SE(3)/se(3) operations, Jacobians, TUM trajectory I/O
    losses      pose / flow / loop losses with analytic right-tangent gradients
    agent       DDPG curriculum agent scheduling the loop-loss weight
    loopdb      offline loop-closure database: VLAD retrieval + RANSAC check
    scene       synthetic scenes with planted revisits and drifted odometry
    trainer     fine-tuning harness wiring losses, agent, and scene together
    evaluation  ATE with Umeyama alignment, median-of-5 protocol, cost model
"""

from .liegroup import (
    AngleNearPi,
    MalformedLine,
    Pose,
    Rotation,
    Twist,
    adjoint,
    exp_se3,
    log_se3,
    read_tum,
    se3_left_jacobian_inverse,
    se3_right_jacobian_inverse,
    twist_norm,
    write_tum,
)
from .losses import (
    HuberParam,
    LoopConstraint,
    LossBreakdown,
    LossWeights,
    flow_loss,
    huber,
    loop_loss,
    pose_loss,
    total_loss,
)
from .agent import AgentConfig, CurriculumState, DdpgAgent, ReplayBuffer, Transition
from .loopdb import DbParams, LoopDatabase, LoopPair, build_database
from .scene import PinholeCamera, SceneSpec, SyntheticScene, generate_scene
from .trainer import PoseModel, TrainerConfig, TrainLog, finetune
from .evaluation import AteReport, Trajectory, ate, precompute_cost, run_experiment

__version__ = "0.1.0"
