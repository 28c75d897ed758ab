#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import json
import logging
import math
import os
import os.path

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit

from mmrisk.mm_config import version_string
from mmrisk.mm_exceptions import ConfigurationError, IntegrityError, SchemaError
from mmrisk.mm_models import Batch
from mmrisk.mm_numeric import SeededRng
from mmrisk.mm_text import RawReport, Stemmer, Vocabulary, build_vocabulary, encode_many, preprocess

PATIENT_ID = 'patient_id'
LABEL = 'mace'
CLINICAL_FEATURES = ('age', 'sex', 'smoking', 'sbp', 'diabetes', 'hdl', 'total_cholesterol', 'mdrd',
                     'hx_chd', 'hx_stroke', 'hx_pad', 'hx_aaa', 'years_since_first_cvd')
CONTINUOUS_FEATURES = ('age', 'sbp', 'hdl', 'total_cholesterol', 'mdrd', 'years_since_first_cvd')
BINARY_FEATURES = tuple(f for f in CLINICAL_FEATURES if f not in CONTINUOUS_FEATURES)
LAB_FEATURES = ('sbp', 'hdl', 'total_cholesterol', 'mdrd')
REQUIRED_COLUMNS = (PATIENT_ID,) + CLINICAL_FEATURES + (LABEL,)

SEX_CODES = {'female': 1.0, 'f': 1.0, '1': 1.0, 'male': 0.0, 'm': 0.0, '0': 0.0}
TARGET_PREVALENCE = 0.2472


@dataclass
class PatientRecord:
    """
    One row of the clinical table. Missing values are None; sex is coded female=1, male=0.
    """
    patient_id: str
    age: Optional[float] = None
    sex: Optional[float] = None
    smoking: Optional[float] = None
    sbp: Optional[float] = None
    diabetes: Optional[float] = None
    hdl: Optional[float] = None
    total_cholesterol: Optional[float] = None
    mdrd: Optional[float] = None
    hx_chd: Optional[float] = None
    hx_stroke: Optional[float] = None
    hx_pad: Optional[float] = None
    hx_aaa: Optional[float] = None
    years_since_first_cvd: Optional[float] = None
    mace: Optional[int] = None

    def __repr__(self):
        missing = self.missing_fields()
        return f"PatientRecord(patient_id={self.patient_id}, mace={self.mace}, missing={list(missing)})"

    def missing_fields(self) -> Tuple[str, ...]:
        return tuple(name for name in CLINICAL_FEATURES if getattr(self, name) is None)

    def vector(self) -> np.ndarray:
        return np.array([np.nan if getattr(self, name) is None else getattr(self, name)
                         for name in CLINICAL_FEATURES], dtype=np.float64)


def _parse_column(column: pd.Series, name: str) -> np.ndarray:
    cells = column.str.strip()
    if name == 'sex':
        parsed = cells.str.lower().map(SEX_CODES)
        bad = parsed.isna() & (cells != '')
    else:
        parsed = pd.to_numeric(cells.where(cells != ''), errors='coerce')
        bad = (parsed.isna() & (cells != '')) | np.isinf(parsed.fillna(0.0))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaError(f"Malformed value `{column.iloc[row]}` in column `{name}` (data row {row + 1})")
    values = parsed.to_numpy(dtype=np.float64)
    if name in BINARY_FEATURES or name == LABEL:
        observed = values[~np.isnan(values)]
        if not np.all(np.isin(observed, (0.0, 1.0))):
            raise SchemaError(f"Binary column `{name}` holds values other than 0 / 1")
    return values


def load_clinical_csv(path: str) -> List[PatientRecord]:
    """
    Clinical table with one header row; columns are matched by exact name, extra columns are ignored
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Clinical CSV not found, check if ``{path}`` exists!")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing_columns = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing_columns:
        raise SchemaError(f"Clinical CSV {path} lacks required column(s): {missing_columns}")
    ids = df[PATIENT_ID].str.strip()
    if (ids == '').any():
        raise SchemaError(f"Empty patient_id in {path}")
    duplicated = ids[ids.duplicated()].unique().tolist()
    if duplicated:
        raise IntegrityError(f"Duplicate patient_id(s) in {path}: {duplicated[:5]}")
    parsed = {name: _parse_column(df[name], name) for name in CLINICAL_FEATURES + (LABEL,)}
    if np.isnan(parsed[LABEL]).any():
        row = int(np.flatnonzero(np.isnan(parsed[LABEL]))[0])
        raise SchemaError(f"Outcome `{LABEL}` missing for patient {ids.iloc[row]}")
    records = []
    for row, patient_id in enumerate(ids):
        values = {name: (None if np.isnan(parsed[name][row]) else float(parsed[name][row]))
                  for name in CLINICAL_FEATURES}
        records.append(PatientRecord(patient_id=patient_id, mace=int(parsed[LABEL][row]), **values))
    n_missing = sum(len(r.missing_fields()) for r in records)
    logging.info(f"loaded {len(records)} patient records from {path}, {n_missing} missing cell(s)")
    return records


def load_reports_jsonl(path: str) -> List[RawReport]:
    """
    One JSON object per line with keys `patient_id` and `text`
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Reports file not found, check if ``{path}`` exists!")
    if os.path.getsize(path) == 0:
        return []
    try:
        df = pd.read_json(path, lines=True, dtype=False, encoding='utf-8')
    except ValueError as err:
        raise SchemaError(f"Malformed JSON lines in {path}: {err}")
    for column in (PATIENT_ID, 'text'):
        if column not in df.columns:
            raise SchemaError(f"Reports file {path} lacks required key `{column}`")
    reports = []
    for row, (patient_id, text) in enumerate(zip(df[PATIENT_ID], df['text'])):
        if patient_id is None or (isinstance(patient_id, float) and math.isnan(patient_id)):
            raise SchemaError(f"Report on line {row + 1} of {path} has no patient_id")
        if text is None or (isinstance(text, float) and math.isnan(text)):
            text = ''
        if not isinstance(text, str):
            raise SchemaError(f"Report text on line {row + 1} of {path} is not a string")
        reports.append(RawReport(patient_id=str(patient_id), text=text))
    logging.info(f"loaded {len(reports)} reports from {path}")
    return reports


@dataclass
class JoinResult:
    records: List[PatientRecord]
    texts: List[str]
    orphan_reports: int = 0
    patients_without_report: int = 0
    duplicate_reports: int = 0

    def __repr__(self):
        return f"JoinResult(patients={len(self.records)}, orphan_reports={self.orphan_reports}, " \
               f"patients_without_report={self.patients_without_report}, " \
               f"duplicate_reports={self.duplicate_reports})"


def join(records: Sequence[PatientRecord], reports: Sequence[RawReport]) -> JoinResult:
    """
    Left join of reports onto patients by exact patient_id. Patients without a report get the empty
    text, a repeated report id keeps the last one.
    """
    by_id: Dict[str, str] = {}
    duplicates = 0
    for report in reports:
        if report.patient_id in by_id:
            duplicates += 1
            logging.warning(f"duplicate report for patient {report.patient_id}, keeping the last one")
        by_id[report.patient_id] = report.text
    patient_ids = {r.patient_id for r in records}
    texts = [by_id.get(r.patient_id, '') for r in records]
    result = JoinResult(records=list(records), texts=texts,
                        orphan_reports=sum(1 for pid in by_id if pid not in patient_ids),
                        patients_without_report=sum(1 for r in records if r.patient_id not in by_id),
                        duplicate_reports=duplicates)
    logging.info(f"{result}")
    return result


class Imputer:
    """
    Continuous features are filled with the training mean, binary features with the training mode
    (ties resolve to 0)
    """

    def __init__(self, fill_values: Optional[Dict[str, float]] = None):
        self.fill_values = dict(fill_values or {})

    def __repr__(self):
        return f"Imputer({', '.join(f'{k}={v:.4g}' for k, v in self.fill_values.items())})"

    @property
    def fitted(self) -> bool:
        return len(self.fill_values) == len(CLINICAL_FEATURES)

    def fit(self, X: np.ndarray) -> 'Imputer':
        X = np.asarray(X, dtype=np.float64)
        self.fill_values = {}
        for j, name in enumerate(CLINICAL_FEATURES):
            observed = X[~np.isnan(X[:, j]), j]
            if observed.size == 0:
                raise ConfigurationError(f"Feature `{name}` is missing for every training row, cannot impute")
            if name in CONTINUOUS_FEATURES:
                self.fill_values[name] = float(observed.mean())
            else:
                self.fill_values[name] = 1.0 if np.sum(observed == 1.0) > np.sum(observed == 0.0) else 0.0
        return self

    def transform(self, X: np.ndarray) -> Tuple[np.ndarray, Dict[str, int]]:
        if not self.fitted:
            raise ConfigurationError("Imputer used before fit!")
        X = np.array(X, dtype=np.float64, copy=True)
        summary = {}
        for j, name in enumerate(CLINICAL_FEATURES):
            missing = np.isnan(X[:, j])
            if missing.any():
                X[missing, j] = self.fill_values[name]
                summary[name] = int(missing.sum())
        return X, summary

    def to_dict(self) -> Dict[str, float]:
        return dict(self.fill_values)

    @staticmethod
    def from_dict(params: Dict[str, float]) -> 'Imputer':
        return Imputer({k: float(v) for k, v in params.items()})


def impute(X: np.ndarray, imputer: Optional[Imputer] = None) -> Tuple[np.ndarray, Imputer, Dict[str, int]]:
    """
    :param imputer: fitted on `X` itself when None (training rows); pass the training imputer for held-out rows
    :return: completed matrix, the imputer used, and the number of filled cells per feature
    """
    imputer = Imputer().fit(X) if imputer is None else imputer
    filled, summary = imputer.transform(X)
    if summary:
        logging.info(f"imputed cells: {summary}")
    return filled, imputer, summary


class Standardizer:
    """
    z-scores continuous features with training statistics; binary features pass through
    """

    def __init__(self, means: Optional[Dict[str, float]] = None, sds: Optional[Dict[str, float]] = None):
        self.means = dict(means or {})
        self.sds = dict(sds or {})

    def __repr__(self):
        return f"Standardizer(features={list(self.means)})"

    def fit(self, X: np.ndarray) -> 'Standardizer':
        X = np.asarray(X, dtype=np.float64)
        self.means, self.sds = {}, {}
        for name in CONTINUOUS_FEATURES:
            j = CLINICAL_FEATURES.index(name)
            sd = float(np.std(X[:, j]))
            if sd == 0.0:
                logging.warning(f"feature `{name}` is constant in the training rows, passed through unscaled")
                self.means[name], self.sds[name] = 0.0, 1.0
            else:
                self.means[name], self.sds[name] = float(np.mean(X[:, j])), sd
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if not self.means:
            raise ConfigurationError("Standardizer used before fit!")
        X = np.array(X, dtype=np.float64, copy=True)
        for name in CONTINUOUS_FEATURES:
            j = CLINICAL_FEATURES.index(name)
            X[:, j] = (X[:, j] - self.means[name]) / self.sds[name]
        return X

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {'means': dict(self.means), 'sds': dict(self.sds)}

    @staticmethod
    def from_dict(params: Dict[str, Dict[str, float]]) -> 'Standardizer':
        return Standardizer(params['means'], params['sds'])


def standardize(X: np.ndarray, standardizer: Optional[Standardizer] = None) -> Tuple[np.ndarray, Standardizer]:
    standardizer = Standardizer().fit(X) if standardizer is None else standardizer
    return standardizer.transform(X), standardizer


@dataclass
class Dataset:
    """
    Joined cohort: raw clinical matrix (NaN = missing), preprocessed report tokens and labels, one row per patient
    """
    patient_ids: List[str]
    clinical: np.ndarray
    tokens: List[List[str]]
    labels: np.ndarray

    def __post_init__(self):
        self.clinical = np.asarray(self.clinical, dtype=np.float64).reshape(-1, len(CLINICAL_FEATURES))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.patient_ids)
        if self.clinical.shape[0] != n or len(self.tokens) != n or self.labels.shape != (n,):
            raise SchemaError(f"Dataset parts are not aligned: {n} ids, {self.clinical.shape[0]} clinical rows, "
                              f"{len(self.tokens)} reports, {self.labels.shape[0]} labels")

    def __len__(self):
        return len(self.patient_ids)

    def __repr__(self):
        return f"Dataset(n={len(self)}, positives={self.positives}, " \
               f"empty_reports={sum(1 for t in self.tokens if not t)})"

    @property
    def positives(self) -> int:
        return int(self.labels.sum())

    def subset(self, rows: Sequence[int]) -> 'Dataset':
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(patient_ids=[self.patient_ids[i] for i in rows], clinical=self.clinical[rows],
                       tokens=[self.tokens[i] for i in rows], labels=self.labels[rows])

    def canonical(self) -> 'Dataset':
        """
        Rows ordered by patient id, so fold membership does not depend on file row order
        """
        return self.subset(sorted(range(len(self)), key=lambda i: self.patient_ids[i]))


def build_dataset(records: Sequence[PatientRecord], reports: Sequence[RawReport], stopwords: FrozenSet[str],
                  stemmer: Stemmer) -> Dataset:
    joined = join(records, reports)
    return Dataset(patient_ids=[r.patient_id for r in joined.records],
                   clinical=np.stack([r.vector() for r in joined.records]) if joined.records
                   else np.zeros((0, len(CLINICAL_FEATURES))),
                   tokens=[preprocess(text, stopwords, stemmer) for text in joined.texts],
                   labels=np.array([r.mace for r in joined.records], dtype=np.int64))


@dataclass
class FeaturePipeline:
    """
    Everything fitted on the training rows of a fold: vocabulary, imputer and standardizer
    """
    vocabulary: Vocabulary
    imputer: Imputer
    standardizer: Standardizer
    max_len: int

    def __repr__(self):
        return f"FeaturePipeline(vocabulary={self.vocabulary.size}, max_len={self.max_len})"

    @staticmethod
    def fit(train: Dataset, min_count: int = 1, max_len: int = 256) -> 'FeaturePipeline':
        filled, imputer, _ = impute(train.clinical)
        _, standardizer = standardize(filled)
        vocabulary = build_vocabulary(train.tokens, min_count=min_count)
        return FeaturePipeline(vocabulary=vocabulary, imputer=imputer, standardizer=standardizer, max_len=max_len)

    def clinical(self, ds: Dataset) -> np.ndarray:
        filled, _, _ = impute(ds.clinical, self.imputer)
        return self.standardizer.transform(filled)

    def batch(self, ds: Dataset) -> Batch:
        ids, lengths = encode_many(ds.tokens, self.vocabulary, self.max_len)
        return Batch(ids=ids, lengths=lengths, clinical=self.clinical(ds))

    def to_dict(self) -> Dict[str, Any]:
        return {'vocabulary': self.vocabulary.to_dict(), 'imputer': self.imputer.to_dict(),
                'standardizer': self.standardizer.to_dict(), 'max_len': self.max_len}

    @staticmethod
    def from_dict(params: Dict[str, Any]) -> 'FeaturePipeline':
        return FeaturePipeline(vocabulary=Vocabulary.from_dict(params['vocabulary']),
                               imputer=Imputer.from_dict(params['imputer']),
                               standardizer=Standardizer.from_dict(params['standardizer']),
                               max_len=int(params['max_len']))


# findings phrases of Dutch chest X-ray reports
RISK_PHRASES = (
    "Atherosclerose van de aorta",
    "Verkalkte aortaboog",
    "Cardiomegalie",
    "Tekenen van decompensatie",
    "Pleuravocht beiderzijds",
    "Vaatstuwing in beide longvelden",
    "Vergrote hartschaduw",
    "Status na sternotomie",
    "Verbreed mediastinum",
    "Verkalkingen in de aortaknop",
)
NEUTRAL_PHRASES = (
    "Geen infiltraten",
    "Normale hartgrootte",
    "Longvelden vrij",
    "Sinus costophrenicus beiderzijds vrij",
    "Geen pneumothorax",
    "Ongewijzigd t.o.v. vorige opname",
    "Thoraxfoto in 2 richtingen",
    "Hili niet afwijkend",
    "Skelet zonder afwijkingen",
    "Geen pleuravocht",
)

# per-sd (continuous) or per-flag (binary) contribution to the clinical risk score
CLINICAL_RISK_COEFFICIENTS = {
    'age': 0.6, 'sex': -0.3, 'smoking': 0.4, 'sbp': 0.25, 'diabetes': 0.5, 'hdl': -0.3,
    'total_cholesterol': 0.15, 'mdrd': -0.3, 'hx_chd': 0.4, 'hx_stroke': 0.4, 'hx_pad': 0.5,
    'hx_aaa': 0.5, 'years_since_first_cvd': 0.2,
}


@dataclass(frozen=True)
class SignalSpec:
    """
    How much of the outcome signal lives in the clinical features versus the report text
    """
    clinical_weight: float = 1.0
    text_weight: float = 1.0
    missing_rate: float = 0.02
    prevalence: float = TARGET_PREVALENCE
    signal_scale: float = 1.5

    def __post_init__(self):
        weights = (self.clinical_weight, self.text_weight, self.signal_scale)
        if not all(math.isfinite(w) and w >= 0.0 for w in weights):
            raise ConfigurationError(f"Signal weights must be finite and non-negative: {self}")
        if self.clinical_weight == 0.0 and self.text_weight == 0.0:
            raise ConfigurationError("At least one of clinical_weight and text_weight must be positive")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigurationError(f"missing_rate must be in [0, 1), got {self.missing_rate}")
        if not 0.0 < self.prevalence < 1.0:
            raise ConfigurationError(f"prevalence must be in (0, 1), got {self.prevalence}")

    @staticmethod
    def preset(name: str) -> 'SignalSpec':
        presets = {
            'balanced': SignalSpec(1.0, 1.0),
            'clinical-only': SignalSpec(1.0, 0.0),
            'text-only': SignalSpec(0.0, 1.0),
        }
        if name not in presets:
            raise ConfigurationError(f"Unknown signal preset `{name}`, choose one of: {sorted(presets)}")
        return presets[name]


@dataclass
class SyntheticCohort:
    records: List[PatientRecord]
    reports: List[RawReport]
    generator: Dict[str, Any] = field(default_factory=dict)

    def __repr__(self):
        return f"SyntheticCohort(n={len(self.records)}, positives={sum(r.mace for r in self.records)})"


def _draw_clinical(n: int, rng: SeededRng) -> Dict[str, np.ndarray]:
    def bernoulli(p):
        return (rng.random(n) < p).astype(np.float64)

    years = np.where(rng.random(n) < 0.5, 0.0, np.ceil(rng.generator.exponential(4.0 / math.log(2.0), size=n)))
    return {
        'age': np.clip(rng.normal(56.2, 12.5, n), 19.0, 95.0).round(1),
        'sex': bernoulli(0.344),
        'smoking': bernoulli(0.276),
        'sbp': np.clip(rng.normal(140.0, 21.0, n), 80.0, 240.0).round(0),
        'diabetes': bernoulli(0.1869),
        'hdl': np.clip(rng.normal(1.27, 0.38, n), 0.3, 4.0).round(2),
        'total_cholesterol': np.clip(rng.normal(5.14, 1.38, n), 1.5, 15.0).round(2),
        'mdrd': np.clip(rng.normal(80.0, 17.0, n), 5.0, 150.0).round(0),
        'hx_chd': bernoulli(0.3866),
        'hx_stroke': bernoulli(0.1920),
        'hx_pad': bernoulli(0.1126),
        'hx_aaa': bernoulli(0.0546),
        'years_since_first_cvd': years,
    }


def _clinical_score(columns: Dict[str, np.ndarray]) -> np.ndarray:
    score = np.zeros_like(columns['age'])
    for name, coefficient in CLINICAL_RISK_COEFFICIENTS.items():
        values = columns[name]
        if name in CONTINUOUS_FEATURES:
            sd = values.std()
            values = (values - values.mean()) / (sd if sd > 0 else 1.0)
        score += coefficient * values
    sd = score.std()
    return (score - score.mean()) / (sd if sd > 0 else 1.0)


def _draw_report(text_risk: float, rng: SeededRng) -> str:
    n_phrases = 3 + int(rng.generator.poisson(3.0))
    n_risk = int(rng.generator.binomial(n_phrases, float(expit(2.0 * text_risk - 1.0))))
    phrases = [RISK_PHRASES[i] for i in rng.generator.integers(0, len(RISK_PHRASES), size=n_risk)]
    phrases += [NEUTRAL_PHRASES[i] for i in rng.generator.integers(0, len(NEUTRAL_PHRASES), size=n_phrases - n_risk)]
    order = rng.permutation(len(phrases))
    day, month = int(rng.generator.integers(1, 29)), int(rng.generator.integers(1, 13))
    header = f"X-thorax PA/lat d.d. {day:02d}-{month:02d}-2015:"
    return ' '.join([header] + [f"{phrases[i]}." for i in order])


def tune_intercept(linear: np.ndarray, prevalence: float) -> float:
    """
    Intercept b with mean(sigmoid(b + linear)) == prevalence
    """
    return float(brentq(lambda b: float(np.mean(expit(b + linear))) - prevalence, -30.0, 30.0))


def synthesize_cohort(n: int, seed: int, signal: SignalSpec = SignalSpec()) -> SyntheticCohort:
    """
    Cohort with registry-like clinical marginals (features drawn independently), one report per patient
    and a logistic outcome over a clinical risk score and a latent text risk
    """
    if n < 10:
        raise ConfigurationError(f"Synthetic cohort needs n >= 10, got {n}")
    rng = SeededRng(seed)
    columns = _draw_clinical(n, rng)
    text_risk = rng.normal(0.0, 1.0, n)
    clinical_score = _clinical_score(columns)
    linear = signal.signal_scale * (signal.clinical_weight * clinical_score + signal.text_weight * text_risk)
    intercept = tune_intercept(linear, signal.prevalence)
    labels = (rng.random(n) < expit(intercept + linear)).astype(np.int64)
    texts = [_draw_report(u, rng) for u in text_risk]

    missing = {name: rng.random(n) < signal.missing_rate for name in LAB_FEATURES}
    width = len(str(n))
    records, reports = [], []
    for i in range(n):
        patient_id = f"P{i:0{width}d}"
        values = {}
        for name in CLINICAL_FEATURES:
            values[name] = None if name in missing and missing[name][i] else float(columns[name][i])
        records.append(PatientRecord(patient_id=patient_id, mace=int(labels[i]), **values))
        reports.append(RawReport(patient_id=patient_id, text=texts[i]))

    generator = {
        'seed': int(seed),
        'n': int(n),
        'signal': asdict(signal),
        'config': {'n': int(n), 'seed': int(seed), 'signal': asdict(signal)},
        'intercept': intercept,
        'observed_prevalence': float(labels.mean()),
        'clinical_risk_coefficients': dict(CLINICAL_RISK_COEFFICIENTS),
        'clinical_marginals': {
            'age': 'normal(56.2, 12.5) clipped to [19, 95]', 'sex': 'bernoulli(0.344), female=1',
            'smoking': 'bernoulli(0.276)', 'sbp': 'normal(140, 21) clipped to [80, 240]',
            'diabetes': 'bernoulli(0.1869)', 'hdl': 'normal(1.27, 0.38) clipped to [0.3, 4.0]',
            'total_cholesterol': 'normal(5.14, 1.38) clipped to [1.5, 15]',
            'mdrd': 'normal(80, 17) clipped to [5, 150]', 'hx_chd': 'bernoulli(0.3866)',
            'hx_stroke': 'bernoulli(0.1920)', 'hx_pad': 'bernoulli(0.1126)', 'hx_aaa': 'bernoulli(0.0546)',
            'years_since_first_cvd': '0 with p=0.5, else ceil(exponential(mean 5.77))',
        },
        'features_independent': True,
        'text_model': {
            'latent_risk': 'normal(0, 1), independent of clinical features',
            'phrases_per_report': '3 + poisson(3)',
            'risk_phrase_probability': 'sigmoid(2 * latent_risk - 1)',
            'risk_phrases': list(RISK_PHRASES),
            'neutral_phrases': list(NEUTRAL_PHRASES),
        },
        'outcome_model': 'mace ~ bernoulli(sigmoid(intercept + signal_scale * '
                         '(clinical_weight * clinical_score + text_weight * latent_risk)))',
        'missing_features': list(LAB_FEATURES),
    }
    cohort = SyntheticCohort(records=records, reports=reports, generator=generator)
    logging.info(f"synthesized {cohort}, intercept={intercept:.4f}")
    return cohort


def records_frame(records: Sequence[PatientRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        row = {name: getattr(record, name) for name in (f.name for f in fields(PatientRecord))}
        if row['sex'] is not None:
            row['sex'] = 'female' if row['sex'] == 1.0 else 'male'
        for name in BINARY_FEATURES + (LABEL,):
            if name != 'sex' and row[name] is not None:
                row[name] = int(row[name])
        rows.append(row)
    return pd.DataFrame(rows, columns=list(REQUIRED_COLUMNS)).astype(object)


def write_clinical_csv(records: Sequence[PatientRecord], path: str):
    records_frame(records).to_csv(path, index=False, na_rep='')


def write_reports_jsonl(reports: Sequence[RawReport], path: str):
    with open(path, 'w', encoding='utf-8') as fd:
        for report in reports:
            fd.write(json.dumps({PATIENT_ID: report.patient_id, 'text': report.text}, ensure_ascii=False) + '\n')


def write_tokens_jsonl(patient_ids: Sequence[str], tokens: Sequence[Sequence[str]], path: str):
    with open(path, 'w', encoding='utf-8') as fd:
        for patient_id, report_tokens in zip(patient_ids, tokens):
            fd.write(json.dumps({PATIENT_ID: patient_id, 'tokens': list(report_tokens)}, ensure_ascii=False) + '\n')


def write_cohort(cohort: SyntheticCohort, out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        'clinical': os.path.join(out_dir, 'clinical.csv'),
        'reports': os.path.join(out_dir, 'reports.jsonl'),
        'generator': os.path.join(out_dir, 'generator.json'),
    }
    write_clinical_csv(cohort.records, paths['clinical'])
    write_reports_jsonl(cohort.reports, paths['reports'])
    with open(paths['generator'], 'w') as fd:
        json.dump({**cohort.generator, 'version': version_string()}, fd, indent=2, sort_keys=True)
    logging.info(f"cohort written to {out_dir}")
    return paths
