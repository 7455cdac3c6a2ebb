"""Linear domain probe on frozen video features."""

from __future__ import annotations

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold, cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .evaluation import extract_features


def probe_accuracy(features, domains, folds=5, seed=0, C=1.0):
    """Held-out accuracy of a logistic-regression domain classifier (stratified k-fold)."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(domains, dtype=np.int64)
    clf = make_pipeline(StandardScaler(), LogisticRegression(C=C, max_iter=2000))
    cv = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return float(cross_val_score(clf, X, y, cv=cv).mean())


def domain_probe(model, source, target, max_frames=32, folds=5, seed=0):
    """Train a fresh probe to tell source from target tracklets using ``model``'s video features."""
    fs = extract_features(model, source, max_frames)
    ft = extract_features(model, target, max_frames)
    X = np.concatenate([fs, ft])
    y = np.concatenate([np.zeros(len(fs)), np.ones(len(ft))])
    return probe_accuracy(X, y, folds, seed)
