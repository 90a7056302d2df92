"""scikit-learn style detector wrapping the full scoring pipeline.

`fit` calibrates the clipping threshold and any baseline state (clip
level, weight mask, neighbor index) on ID activation maps; after that
the detector behaves like other outlier estimators: `score_samples`
returns higher-is-inlier scores, `decision_function` subtracts the
TPR-calibrated threshold, and `predict` maps to +1 (ID) / -1 (OOD).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin

from .baselines import BaselineKind, Knn, ReAct, ReActDice, Ash, Scale, Dice, fit_baseline, parse_baseline
from .channel_stats import ChannelStatisticKind, compute_stat_batch, gap_features
from .defaults import baseline_default, default_percentile
from .errors import ValidationError
from .feature_store import ClassifierHead
from .fusion import FusionMode, check_compatible, fuse_batch, fused_higher_is_id
from .metrics import threshold_lambda
from .scaling import calibrate_threshold_from_matrix, scale_factors
from .validation import check_activation_batch, check_head_arrays, check_logit_batch


class CatalystDetector(OutlierMixin, BaseEstimator):
    """Out-of-distribution detector over pre-pooling activation maps.

    Parameters
    ----------
    baseline : str, default="energy"
        Base scoring method: "msp", "energy", "react", "dice",
        "react_dice", "ash", "scale", or "knn".
    statistic : str, default="max"
        Channel statistic feeding the scale factor: "mean", "std",
        "max", "median", or "entropy".
    fusion : str or None, default="multiplicative"
        "multiplicative", "additive", "knn_divide", "standalone_scale",
        or None for the unfused baseline score.
    percentile : float or None, default=None
        Clipping percentile for the scale factor; None resolves the
        shipped default for `family`.
    family : str, default="cifar"
        Benchmark family used for default-percentile lookup.
    tpr_target : float, default=0.95
        ID retention rate used to place the decision threshold.
    react_percentile, dice_sparsity, ash_prune, scale_prune, knn_k
        Baseline hyperparameters at their standard operating points.

    Attributes
    ----------
    profile_ : CalibrationProfile
        The resolved clipping threshold.
    offset_ : float
        Decision threshold on oriented scores; `decision_function` is
        `score_samples - offset_`.
    """

    def __init__(
        self,
        baseline: str = "energy",
        statistic: str = "max",
        fusion: str | None = "multiplicative",
        percentile: float | None = None,
        family: str = "cifar",
        tpr_target: float = 0.95,
        react_percentile: float | None = None,
        dice_sparsity: float | None = None,
        ash_prune: float | None = None,
        scale_prune: float | None = None,
        knn_k: int | None = None,
    ):
        self.baseline = baseline
        self.statistic = statistic
        self.fusion = fusion
        self.percentile = percentile
        self.family = family
        self.tpr_target = tpr_target
        self.react_percentile = react_percentile
        self.dice_sparsity = dice_sparsity
        self.ash_prune = ash_prune
        self.scale_prune = scale_prune
        self.knn_k = knn_k

    # -- configuration resolution -----------------------------------------

    def _build_kind(self) -> BaselineKind:
        name = self.baseline.lower().replace("-", "_")
        # Published clip operating point: 90th percentile standalone,
        # 95th under scale-factor fusion.
        react_key = "react_percentile" if self.fusion is None else "react_percentile_fused"
        if name == "react":
            p = self.react_percentile if self.react_percentile is not None else baseline_default(react_key)
            return ReAct(clip_percentile=float(p))
        if name == "dice":
            p = self.dice_sparsity if self.dice_sparsity is not None else baseline_default("dice_sparsity")
            return Dice(sparsity_p=float(p))
        if name == "react_dice":
            cp = self.react_percentile if self.react_percentile is not None else baseline_default(react_key)
            sp = self.dice_sparsity if self.dice_sparsity is not None else baseline_default("dice_sparsity")
            return ReActDice(clip_percentile=float(cp), sparsity_p=float(sp))
        if name == "ash":
            p = self.ash_prune if self.ash_prune is not None else baseline_default("ash_prune")
            return Ash(prune_p=float(p))
        if name == "scale":
            p = self.scale_prune if self.scale_prune is not None else baseline_default("scale_prune")
            return Scale(prune_p=float(p))
        if name == "knn":
            k = self.knn_k if self.knn_k is not None else baseline_default("knn_k")
            return Knn(k=int(k))
        return parse_baseline(name)

    def _resolved_percentile(self) -> float:
        if self.percentile is not None:
            return float(self.percentile)
        return default_percentile(self.family, self.statistic, baseline=self.baseline)

    # -- estimator API ------------------------------------------------------

    def fit(self, X, y=None, logits=None, head=None):
        """Calibrate on ID activation maps.

        Parameters
        ----------
        X : array-like of shape (n_samples, n_channels, k, k)
            ID activation maps (post-ReLU).
        y : ignored
            Present for scikit-learn API compatibility.
        logits : array-like of shape (n_samples, n_classes), optional
            Dumped model outputs; required for the msp/energy baselines.
        head : ClassifierHead or (weights, bias) tuple, optional
            Final linear layer; required for feature-shaping baselines.
        """
        X = check_activation_batch(X)
        if head is not None and not isinstance(head, ClassifierHead):
            weights, bias = head
            weights, bias = check_head_arrays(weights, bias, n_channels=X.shape[1])
            head = ClassifierHead(weights=weights, bias=bias)
        if logits is not None:
            logits = check_logit_batch(logits, n_samples=X.shape[0])

        kind = self._build_kind()
        mode = None if self.fusion is None else FusionMode.parse(self.fusion)
        if mode is not None:
            check_compatible(mode, kind)

        stat_kind = ChannelStatisticKind.parse(self.statistic)
        stats = compute_stat_batch(X, stat_kind)
        self.profile_ = calibrate_threshold_from_matrix(
            stats, stat_kind, self._resolved_percentile(), source_label="fit"
        )

        features = gap_features(X)
        if logits is None and head is not None:
            logits = features @ head.weights.astype(np.float64) + head.bias.astype(np.float64)
        self.ood_kind_ = kind
        self.fitted_baseline_ = fit_baseline(kind, features, head)
        self.n_channels_ = int(X.shape[1])
        self.spatial_k_ = int(X.shape[2])

        train_scores = self._oriented_scores(X, logits)
        self.offset_ = threshold_lambda(train_scores, self.tpr_target, higher_is_id=True)
        return self

    def _raw_scores(self, X, logits):
        stat_kind = ChannelStatisticKind.parse(self.statistic)
        mode = None if self.fusion is None else FusionMode.parse(self.fusion)
        features = gap_features(X)
        if logits is None and self.fitted_baseline_.head is not None:
            head = self.fitted_baseline_.head
            logits = features @ head.weights.astype(np.float64) + head.bias.astype(np.float64)
        stats = compute_stat_batch(X, stat_kind)
        factors = scale_factors(stats, stat_kind, self.profile_)
        if mode is FusionMode.STANDALONE_SCALE:
            return factors, True
        base = self.fitted_baseline_.score_batch(features, logits)
        if mode is None:
            return base, self.ood_kind_.higher_is_id
        return fuse_batch(factors, base, mode), fused_higher_is_id(mode, self.ood_kind_)

    def _oriented_scores(self, X, logits):
        scores, higher_is_id = self._raw_scores(X, logits)
        return scores if higher_is_id else -scores

    def score_samples(self, X, logits=None):
        """Higher-is-inlier score per sample (inverted-polarity baselines are negated)."""
        self._check_fitted()
        X = check_activation_batch(X)
        if X.shape[1] != self.n_channels_ or X.shape[2] != self.spatial_k_:
            raise ValidationError(
                f"maps of shape {X.shape[1:]} do not match fitted shape "
                f"({self.n_channels_}, {self.spatial_k_}, {self.spatial_k_})"
            )
        if logits is not None:
            logits = check_logit_batch(logits, n_samples=X.shape[0])
        return self._oriented_scores(X, logits)

    def decision_function(self, X, logits=None):
        """Positive for samples the detector keeps as ID at the fitted TPR target."""
        return self.score_samples(X, logits=logits) - self.offset_

    def predict(self, X, logits=None):
        """+1 for ID, -1 for OOD."""
        return np.where(self.decision_function(X, logits=logits) >= 0, 1, -1)

    def _check_fitted(self):
        if not hasattr(self, "fitted_baseline_"):
            raise ValidationError("detector is not fitted; call fit(X, ...) first")
