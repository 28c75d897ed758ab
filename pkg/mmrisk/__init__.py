from mmrisk.mm_config import TrainingConfig
from mmrisk.mm_data import Dataset, FeaturePipeline, PatientRecord, SignalSpec, build_dataset, load_clinical_csv, \
    load_reports_jsonl, synthesize_cohort
from mmrisk.mm_metrics import MetricsReport, auc, evaluate
from mmrisk.mm_models import Batch, ModelGraph, ScenarioTag, backward_batch, build_model, forward_batch, predict
from mmrisk.mm_training import cross_validate, kfold_split, train

name = "mmrisk"
version = "0.1.0"
