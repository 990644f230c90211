"""Hand configuration classification and MCP joint-angle regression from
forearm ultrasound frames, with a synthetic data generator."""

from .kinematics import (AngleStream, MarkerFrame, MarkerStream, McpAngles,
                         TriggerEvent, TriggerStream, align_to_frames,
                         angles_from_stream, mcp_angle)
from .synthgen import (CLASS_IDS, CONFIGURATIONS, Session, SessionSpec, Speed,
                       UltrasoundFrame, forward_model, generate_session,
                       read_session, trajectory, write_session)
from .preprocess import PreprocessConfig, preprocess_frame, preprocess_session
from .svc import SvcModel, confusion, predict_svc, train_svc
from .cnn import (AdamState, CnnModel, TrainConfig, adam_step, backward,
                  forward, mae_loss, micro_vgg, predict_angles, train_cnn)
from .metrics import ConfusionMatrix, RmseReport, accuracy, aggregate_rmse, rmse
from .pipeline import ModelBundle, load_bundle, run_pipeline

__all__ = [
    "AngleStream", "MarkerFrame", "MarkerStream", "McpAngles", "TriggerEvent",
    "TriggerStream", "align_to_frames", "angles_from_stream", "mcp_angle",
    "CLASS_IDS", "CONFIGURATIONS", "Session", "SessionSpec", "Speed",
    "UltrasoundFrame", "forward_model", "generate_session", "read_session",
    "trajectory", "write_session", "PreprocessConfig", "preprocess_frame",
    "preprocess_session", "SvcModel", "confusion", "predict_svc", "train_svc",
    "AdamState", "CnnModel", "TrainConfig", "adam_step", "backward", "forward",
    "mae_loss", "micro_vgg", "predict_angles", "train_cnn", "ConfusionMatrix",
    "RmseReport", "accuracy", "aggregate_rmse", "rmse", "ModelBundle",
    "load_bundle", "run_pipeline",
]

__version__ = "0.1.0"
