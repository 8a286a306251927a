"""Online conformal policies: GMOCP, EGMOCP, MOCP, COMA and single-model ACI.

Every policy exposes ``step(probs, true_label) -> (PredictionSet, StepRecord)``
and keeps per-model calibration stores, adaptive miscoverage levels and
exponential weights. Randomness comes from named streams addressed by the
master seed, so two policies built with the same seed consume identical
draws in identical order.

Per-step draw order (fixed, relied upon by replay tests):
  1. one tie-break uniform per model,
  2. graph rows (N uniforms per selective node, GMOCP/EGMOCP only),
  3. one uniform for node selection (GMOCP/EGMOCP only),
  4. one uniform for model selection (not COMA/ACI),
  5. one uniform for the voting threshold (COMA only).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .adapt import AlphaState, pinball_loss, sfogd_update, sfogd_update_err
from .graph import FeedbackGraph, GraphParams, effective_subset, generate_graph, select_node
from .rng import categorical, stream_rng
from .scoring import (
    CalibrationStore,
    PredictionSet,
    ScoreParams,
    all_label_scores,
    all_model_scores,
    build_prediction_set,
    nonconformity_score,
    optimal_alpha_bar,
    prediction_set_size,
    quantile_threshold,
)

WEIGHT_FLOOR = 1e-300


@dataclass(frozen=True)
class PolicyConfig:
    n_models: int
    score: ScoreParams
    graph: GraphParams | None = None
    target_alpha: float = 0.1
    eta: float = 0.05
    epsilon: float = 0.5
    beta: float = 0.0
    coma_gamma: float = 0.01
    aci_lr: float = 0.05
    alpha_init: float | None = None
    shared_u: bool = False  # one tie-break uniform per step instead of per (step, model)
    track_alpha_bar: bool = False

    def __post_init__(self):
        if self.n_models < 1:
            raise ValueError(f"n_models must be >= 1, got {self.n_models}")
        if not 0 < self.target_alpha < 1:
            raise ValueError(f"target_alpha must be in (0, 1), got {self.target_alpha}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")

    @property
    def alpha0(self) -> float:
        return self.target_alpha if self.alpha_init is None else self.alpha_init


@dataclass
class ModelState:
    weight: float
    alpha: AlphaState
    calibration: CalibrationStore = field(default_factory=CalibrationStore)


@dataclass(frozen=True)
class StepRecord:
    """Everything the metrics layer needs about one timestep."""

    t: int
    chosen_model: int
    set_size: int
    err: int  # 1 if the true label was NOT covered
    node: int = -1
    subset: tuple = ()
    chosen_loss: float = 0.0
    losses: dict = field(default_factory=dict)  # model -> pinball loss (updated models)
    wall_nanos: int = 0
    alpha_bars: tuple | None = None  # all-model alpha_bar, only when tracked


class _BasePolicy:
    """Shared state handling for the multi-model policies."""

    name = "base"

    def __init__(self, cfg: PolicyConfig, master_seed: int):
        self.cfg = cfg
        self.master_seed = master_seed
        self.t = 0
        a0 = AlphaState(alpha=cfg.alpha0, eta=cfg.eta)
        self.models = [ModelState(weight=1.0, alpha=a0) for _ in range(cfg.n_models)]
        self._rng_u = stream_rng(master_seed, f"{self.name}/tiebreak")
        self._rng_model = stream_rng(master_seed, f"{self.name}/model")

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.models])

    def _rescale_weights(self) -> None:
        top = max(s.weight for s in self.models)
        if top < WEIGHT_FLOOR:
            for s in self.models:
                s.weight /= top

    def _draw_u(self) -> np.ndarray:
        """Per-model tie-break uniforms (a single shared draw when configured)."""
        if self.cfg.shared_u:
            return np.full(self.cfg.n_models, self._rng_u.random())
        return self._rng_u.random(self.cfg.n_models)

    def _alpha_bars(self, scores) -> tuple:
        """alpha_bar of every model against the pre-insertion stores."""
        return tuple(
            optimal_alpha_bar(s.calibration, scores[m]) for m, s in enumerate(self.models)
        )

    def step(self, probs, true_label: int):
        raise NotImplementedError


class GMOCPPolicy(_BasePolicy):
    """Graph-based multi-model online conformal prediction.

    With ``cfg.beta > 0`` the weight update also penalizes the set size each
    updated model would have produced at its current level (the efficient
    variant); ``beta == 0`` recovers the plain bandit-feedback update. Both
    consume the exact same random draws.
    """

    name = "gmocp"

    def __init__(self, cfg: PolicyConfig, master_seed: int):
        if cfg.graph is None:
            raise ValueError("GMOCP requires graph parameters")
        super().__init__(cfg, master_seed)
        self._rng_graph = stream_rng(master_seed, f"{self.name}/graph")
        self._rng_node = stream_rng(master_seed, f"{self.name}/node")
        # mixability scale: halve the importance-weighted loss per doubling of J
        self.loss_scale = 2.0 ** math.floor(math.log2(cfg.graph.n_selective))

    def step(self, probs, true_label: int):
        cfg = self.cfg
        start = time.perf_counter_ns()
        self.t += 1
        u_vec = self._draw_u()

        graph = generate_graph(self.weights, cfg.graph, self._rng_graph)
        node = select_node(graph, self._rng_node)
        subset = effective_subset(graph, node)

        draw = self._rng_model.random()
        if len(subset) == 1:
            chosen = subset[0]
        else:
            sub_w = np.array([self.models[m].weight for m in subset])
            cdf = np.cumsum(sub_w)
            idx = int(np.searchsorted(cdf, draw * cdf[-1], side="right"))
            chosen = subset[min(idx, len(subset) - 1)]

        cm = self.models[chosen]
        threshold = quantile_threshold(cm.calibration, cm.alpha.alpha)
        pred = build_prediction_set(probs[chosen], threshold, u_vec[chosen], cfg.score)
        err = int(true_label not in pred)

        scores = all_model_scores(probs, true_label, u_vec, cfg.score)
        alpha_bars = self._alpha_bars(scores) if cfg.track_alpha_bar else None

        losses = {}
        chosen_loss = 0.0
        for m in subset:
            st = self.models[m]
            a_bar = alpha_bars[m] if alpha_bars is not None else optimal_alpha_bar(
                st.calibration, scores[m]
            )
            loss = pinball_loss(a_bar, st.alpha.alpha, cfg.target_alpha)
            losses[m] = loss
            if m == chosen:
                chosen_loss = loss
            imp = loss / graph.inclusion_of(m)
            exponent = (1.0 - cfg.beta) * imp / self.loss_scale
            if cfg.beta > 0.0:
                if m == chosen:
                    size = pred.size
                else:
                    thr = quantile_threshold(st.calibration, st.alpha.alpha)
                    size = prediction_set_size(probs[m], thr, u_vec[m], cfg.score)
                exponent += cfg.beta * size
            st.weight *= math.exp(-cfg.epsilon * exponent)
            st.alpha = sfogd_update(st.alpha, a_bar, cfg.target_alpha)

        for m, st in enumerate(self.models):
            st.calibration.insert(scores[m])
        self._rescale_weights()

        record = StepRecord(
            t=self.t,
            chosen_model=chosen,
            set_size=pred.size,
            err=err,
            node=node,
            subset=subset,
            chosen_loss=chosen_loss,
            losses=losses,
            wall_nanos=time.perf_counter_ns() - start,
            alpha_bars=alpha_bars,
        )
        return pred, record


class MOCPPolicy(_BasePolicy):
    """Full-information multi-model baseline: no graph, every model updates."""

    name = "mocp"

    def step(self, probs, true_label: int):
        cfg = self.cfg
        start = time.perf_counter_ns()
        self.t += 1
        u_vec = self._draw_u()

        w = self.weights
        chosen = categorical(self._rng_model, w / w.sum())

        cm = self.models[chosen]
        threshold = quantile_threshold(cm.calibration, cm.alpha.alpha)
        pred = build_prediction_set(probs[chosen], threshold, u_vec[chosen], cfg.score)
        err = int(true_label not in pred)

        scores = all_model_scores(probs, true_label, u_vec, cfg.score)
        alpha_bars = self._alpha_bars(scores) if cfg.track_alpha_bar else None

        losses = {}
        chosen_loss = 0.0
        for m, st in enumerate(self.models):
            a_bar = alpha_bars[m] if alpha_bars is not None else optimal_alpha_bar(
                st.calibration, scores[m]
            )
            loss = pinball_loss(a_bar, st.alpha.alpha, cfg.target_alpha)
            losses[m] = loss
            if m == chosen:
                chosen_loss = loss
            st.weight *= math.exp(-cfg.epsilon * loss)
            st.alpha = sfogd_update(st.alpha, a_bar, cfg.target_alpha)
            st.calibration.insert(scores[m])
        self._rescale_weights()

        record = StepRecord(
            t=self.t,
            chosen_model=chosen,
            set_size=pred.size,
            err=err,
            subset=tuple(range(cfg.n_models)),
            chosen_loss=chosen_loss,
            losses=losses,
            wall_nanos=time.perf_counter_ns() - start,
            alpha_bars=alpha_bars,
        )
        return pred, record


def vote_set(membership: np.ndarray, weights_norm: np.ndarray, vote_u: float) -> frozenset:
    """Labels whose weighted vote exceeds the randomized majority threshold.

    membership is (M, K) boolean: model m includes label k.
    """
    tally = weights_norm @ membership
    return frozenset(int(k) for k in np.flatnonzero(tally > (1.0 + vote_u) / 2.0))


class COMAPolicy(_BasePolicy):
    """Weighted-majority vote over per-model sets at one shared adaptive level."""

    name = "coma"

    def __init__(self, cfg: PolicyConfig, master_seed: int):
        super().__init__(cfg, master_seed)
        self.alpha = AlphaState(alpha=cfg.alpha0, eta=cfg.eta)
        self._rng_vote = stream_rng(master_seed, f"{self.name}/vote")

    def step(self, probs, true_label: int):
        cfg = self.cfg
        start = time.perf_counter_ns()
        self.t += 1
        u_vec = self._draw_u()
        vote_u = float(self._rng_vote.random())

        k = cfg.score.n_labels
        membership = np.zeros((cfg.n_models, k), dtype=bool)
        for m, st in enumerate(self.models):
            thr = quantile_threshold(st.calibration, self.alpha.alpha)
            membership[m] = all_label_scores(probs[m], u_vec[m], cfg.score) <= thr

        w = self.weights
        labels = vote_set(membership, w / w.sum(), vote_u)
        pred = PredictionSet(labels, float("nan"))
        err = int(true_label not in pred)

        scores = all_model_scores(probs, true_label, u_vec, cfg.score)
        for m, st in enumerate(self.models):
            st.weight *= math.exp(-cfg.coma_gamma * int(membership[m].sum()))
            st.calibration.insert(scores[m])
        self._rescale_weights()
        self.alpha = sfogd_update_err(self.alpha, err, cfg.target_alpha)

        record = StepRecord(
            t=self.t,
            chosen_model=-1,
            set_size=pred.size,
            err=err,
            subset=tuple(range(cfg.n_models)),
            wall_nanos=time.perf_counter_ns() - start,
        )
        return pred, record


class ACIPolicy:
    """Single-model adaptive conformal inference with a fixed step size."""

    name = "aci"

    def __init__(self, cfg: PolicyConfig, master_seed: int):
        if cfg.n_models != 1:
            raise ValueError("ACI is single-model; set n_models=1")
        self.cfg = cfg
        self.t = 0
        self.alpha = cfg.alpha0
        self.calibration = CalibrationStore()
        self._rng_u = stream_rng(master_seed, "aci/tiebreak")

    def step(self, probs, true_label: int):
        cfg = self.cfg
        start = time.perf_counter_ns()
        self.t += 1
        u = float(self._rng_u.random())
        threshold = quantile_threshold(self.calibration, self.alpha)
        pred = build_prediction_set(probs[0], threshold, u, cfg.score)
        err = int(true_label not in pred)
        self.calibration.insert(nonconformity_score(probs[0], true_label, u, cfg.score))
        self.alpha += cfg.aci_lr * (cfg.target_alpha - err)

        record = StepRecord(
            t=self.t,
            chosen_model=0,
            set_size=pred.size,
            err=err,
            subset=(0,),
            wall_nanos=time.perf_counter_ns() - start,
        )
        return pred, record


POLICY_NAMES = ("gmocp", "egmocp", "mocp", "coma", "aci")


def make_policy(name: str, cfg: PolicyConfig, master_seed: int):
    """Instantiate a policy by CLI name. ``egmocp`` is GMOCP with beta > 0."""
    if name == "gmocp":
        if cfg.beta != 0.0:
            cfg = _replace_beta(cfg, 0.0)
        return GMOCPPolicy(cfg, master_seed)
    if name == "egmocp":
        if cfg.beta == 0.0:
            raise ValueError("egmocp requires beta > 0")
        return GMOCPPolicy(cfg, master_seed)
    if name == "mocp":
        return MOCPPolicy(cfg, master_seed)
    if name == "coma":
        return COMAPolicy(cfg, master_seed)
    if name == "aci":
        return ACIPolicy(cfg, master_seed)
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")


def _replace_beta(cfg: PolicyConfig, beta: float) -> PolicyConfig:
    from dataclasses import replace

    return replace(cfg, beta=beta)
