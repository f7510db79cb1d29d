"""Federated training loop: personalized multi-task FL, FedAvg and local baselines.

Methods
-------
A1  each community trains on its own data only (rounds x E2 local epochs).
A2  FedAvg: clients train the broadcast model and upload deltas; dropped
    clients are left out of the round's weighted average.
A3  multi-task FL with personalized models, similarity-based substitution of
    dropped clients' deltas and Laplace-noised uploads at a fixed per-round
    budget.
A4  as A3, but a round lost to a failure hands its budget to later rounds.

A3/A4 are evaluated on the personalized models, A2 on the global model and
A1 on the local models.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import availability, privacy
from .datasets import ClientDataset, normalize
from .metrics import ClientRecord, RoundReport, RunSummary, evaluate_client
from .nn import MLPShape, init_params, mse_loss, sgd_epochs
from .similarity import EXCLUDED, SUBSTITUTED, UPLOADED, SimilarityMatrix

log = logging.getLogger(__name__)

METHODS = ("A1", "A2", "A3", "A4")
LOCAL = "local"

# spawn-key tags for independent random streams
_SERVER_INIT, _CLIENT_INIT, _PERSONAL, _GLOBAL, _NOISE, _LOCAL = range(6)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class TrainConfig:
    rounds: int = 200
    epochs_personalized: int = 5
    epochs_local: int = 10
    lr_personalized: float = 0.01
    lr_local: float = 0.01
    reg_factor: float = 5e-4
    batch_size: int = 32
    method: str = "A4"
    dp_enabled: bool = False
    clip_threshold: float = 5.0
    epsilon_per_round: float = 1.0
    budget_strategy: str = "auto"
    dropout_ratio: float = 0.0
    dropout_mode: str = "uniform_count"
    master_seed: int = 0
    hidden_dim: int = 40

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        p = []
        if self.rounds < 1:
            p.append("rounds must be >= 1")
        if self.epochs_personalized < 1 or self.epochs_local < 1:
            p.append("epochs_personalized and epochs_local must be >= 1")
        if not self.lr_personalized > 0 or not self.lr_local > 0:
            p.append("learning rates must be > 0")
        if self.reg_factor < 0:
            p.append("reg_factor must be >= 0")
        if self.batch_size < 1:
            p.append("batch_size must be >= 1")
        if self.method not in METHODS:
            p.append(f"method must be one of {METHODS}")
        if self.dp_enabled and not self.clip_threshold > 0:
            p.append("clip_threshold must be > 0 when dp_enabled")
        if self.dp_enabled and not self.epsilon_per_round > 0:
            p.append("epsilon_per_round must be > 0 when dp_enabled")
        if self.budget_strategy not in ("auto",) + privacy.STRATEGIES:
            p.append(f"budget_strategy must be auto, fixed or dynamic")
        if not 0.0 <= self.dropout_ratio <= 1.0:
            p.append("dropout_ratio must lie in [0, 1]")
        if self.dropout_mode not in availability.DROPOUT_MODES:
            p.append(f"dropout_mode must be one of {availability.DROPOUT_MODES}")
        return p

    @property
    def personalized(self) -> bool:
        return self.method in ("A3", "A4")

    @property
    def substitution(self) -> bool:
        return self.method in ("A3", "A4")

    @property
    def strategy(self) -> str:
        if self.budget_strategy != "auto":
            return self.budget_strategy
        return "dynamic" if self.method == "A4" else "fixed"


@dataclass
class ClientState:
    client_id: int
    dataset: ClientDataset
    personalized: np.ndarray
    accountant: privacy.PrivacyAccountant | None = None
    local: np.ndarray | None = None
    diverged_rounds: int = 0

    @property
    def num_samples(self) -> int:
        return self.dataset.num_train


@dataclass
class ServerState:
    weights: np.ndarray
    similarity: SimilarityMatrix
    round_index: int = 0


@dataclass
class ExperimentResult:
    config: TrainConfig
    reports: list[RoundReport]
    models: dict[int, np.ndarray]
    server: ServerState | None = None
    clients: list[ClientState] = field(default_factory=list)

    def final_nrmse(self) -> tuple[float, ...]:
        return tuple(c.test_nrmse for c in self.reports[-1].clients)

    def summary(self) -> RunSummary:
        cfg = self.config
        eps = cfg.epsilon_per_round if cfg.dp_enabled else math.inf
        return RunSummary(cfg.method, cfg.dropout_ratio, eps, cfg.master_seed, self.final_nrmse(),
                          cfg.reg_factor, cfg.epochs_local)


# ------------------------------------------------------------- client side


def local_personalized_update(client: ClientState, w_global, shape, cfg: TrainConfig, rng) -> np.ndarray:
    """E1 epochs of proximal SGD on the personalized model, pulled toward ``w_global``."""
    ds = client.dataset
    client.personalized = sgd_epochs(
        client.personalized, shape, ds.train_x, ds.train_y,
        cfg.epochs_personalized, cfg.batch_size, cfg.lr_personalized, rng,
        mu=cfg.reg_factor, anchor=w_global,
    )
    return client.personalized


def local_global_update(w_global, client: ClientState, shape, cfg: TrainConfig, rng) -> np.ndarray:
    """E2 epochs of SGD from the broadcast model; returns the parameter delta."""
    ds = client.dataset
    with np.errstate(over="ignore", invalid="ignore"):
        w_local = sgd_epochs(w_global, shape, ds.train_x, ds.train_y,
                             cfg.epochs_local, cfg.batch_size, cfg.lr_local, rng)
        delta = w_local - w_global
    if not np.all(np.isfinite(delta)):
        # training from a heavily noised global model can blow up; upload no change
        log.debug("client %d: local training diverged, sending a zero update", client.client_id)
        client.diverged_rounds += 1
        return np.zeros_like(w_global)
    return delta


def privatize(delta, client: ClientState, cfg: TrainConfig, rng) -> tuple[np.ndarray, float]:
    """Clip and noise an upload at the client's current budget."""
    eps = client.accountant.epsilon_current
    noise = privacy.NoiseParams.for_client(cfg.clip_threshold, client.num_samples, eps)
    return privacy.add_noise(privacy.clip(delta, cfg.clip_threshold), noise, rng), eps


# ------------------------------------------------------------- server side


def aggregate(w_global: np.ndarray, deltas) -> np.ndarray:
    """w + sum_i (n_i / sum n) * delta_i over ``(client_id, delta, n_i)`` triples."""
    deltas = list(deltas)
    if not deltas:
        raise ValueError("nothing to aggregate")
    total = 0
    for _, _, n in deltas:
        if n <= 0:
            raise ValueError("sample counts must be positive")
        total += n
    step = np.zeros_like(w_global)
    for _, d, n in deltas:
        step += (n / total) * d
    return w_global + step


# ------------------------------------------------------------------ driver


def init_state(cfg: TrainConfig, datasets: list[ClientDataset], shape: MLPShape):
    server = ServerState(init_params(shape, _rng(cfg.master_seed, _SERVER_INIT)), SimilarityMatrix(len(datasets)))
    clients = []
    for i, ds in enumerate(datasets):
        acct = None
        if cfg.dp_enabled:
            acct = privacy.PrivacyAccountant(cfg.epsilon_per_round, cfg.rounds, cfg.strategy)
        clients.append(ClientState(i, ds, init_params(shape, _rng(cfg.master_seed, _CLIENT_INIT, i)), acct))
    return server, clients


def _record(client: ClientState, model, shape, available, provenance, eps) -> ClientRecord:
    ds = client.dataset
    return ClientRecord(
        client=client.client_id,
        available=available,
        provenance=provenance,
        test_nrmse=evaluate_client(model, shape, ds),
        train_loss=mse_loss(model, shape, ds.train_x, ds.train_y),
        epsilon=eps,
    )


def run_round(server: ServerState, clients: list[ClientState], cfg: TrainConfig, unavailable,
              shape: MLPShape, similarity_dump: Path | None = None) -> RoundReport:
    """One broadcast / train / upload / aggregate cycle for the FL methods."""
    r = server.round_index
    seed = cfg.master_seed
    w = server.weights
    received: dict[int, np.ndarray] = {}
    eps_used: dict[int, float | None] = {}

    for c in clients:
        i = c.client_id
        # the personalized task does not need the uplink, so dropped clients run it too
        if cfg.personalized:
            local_personalized_update(c, w, shape, cfg, _rng(seed, _PERSONAL, r, i))
        eps_used[i] = None
        if i in unavailable:
            if c.accountant is not None:
                c.accountant.consume(False)
            continue
        delta = local_global_update(w, c, shape, cfg, _rng(seed, _GLOBAL, r, i))
        if c.accountant is not None:
            delta, eps_used[i] = privatize(delta, c, cfg, _rng(seed, _NOISE, r, i))
            c.accountant.consume(True)
        received[i] = delta

    if cfg.substitution:
        server.similarity.update_average(received)
        if similarity_dump is not None:
            server.similarity.dump_csv(similarity_dump, r)
        filled = server.similarity.substitute(unavailable, received)
    else:
        filled = {i: (d, UPLOADED) for i, d in received.items()}
        filled.update({i: (None, EXCLUDED) for i in unavailable})

    included = [(i, d, clients[i].num_samples) for i, (d, _) in sorted(filled.items()) if d is not None]
    if included:
        server.weights = aggregate(w, included)
    server.round_index = r + 1

    report = RoundReport(r)
    for c in clients:
        model = c.personalized if cfg.personalized else server.weights
        avail = c.client_id not in unavailable
        report.clients.append(_record(c, model, shape, avail, filled[c.client_id][1], eps_used[c.client_id]))
    return report


def run_local(cfg: TrainConfig, clients: list[ClientState], shape: MLPShape) -> list[RoundReport]:
    """A1: every client trains alone; one report per E2-epoch block."""
    for c in clients:
        c.local = c.personalized.copy()
    reports = []
    for r in range(cfg.rounds):
        rep = RoundReport(r)
        for c in clients:
            ds = c.dataset
            c.local = sgd_epochs(c.local, shape, ds.train_x, ds.train_y, cfg.epochs_local,
                                 cfg.batch_size, cfg.lr_local, _rng(cfg.master_seed, _LOCAL, r, c.client_id))
            rep.clients.append(_record(c, c.local, shape, True, LOCAL, None))
        reports.append(rep)
    return reports


def run_experiment(
    cfg: TrainConfig,
    datasets: list[ClientDataset],
    *,
    similarity_dump: Path | None = None,
    on_round: Callable[[RoundReport], None] | None = None,
) -> ExperimentResult:
    """Train ``cfg.rounds`` rounds of ``cfg.method`` over the given communities.

    Datasets that have not been normalized yet are min-max scaled per client.
    """
    if not datasets:
        raise ValueError("no client datasets")
    datasets = [ds if ds.normalization is not None else normalize(ds) for ds in datasets]
    shape = MLPShape(datasets[0].train_x.shape[1], cfg.hidden_dim)
    server, clients = init_state(cfg, datasets, shape)

    if cfg.method == "A1":
        reports = run_local(cfg, clients, shape)
        if on_round:
            for rep in reports:
                on_round(rep)
        return ExperimentResult(cfg, reports, {c.client_id: c.local for c in clients}, None, clients)

    plan = availability.AvailabilityPlan.draw(cfg.rounds, len(clients), cfg.dropout_ratio,
                                             cfg.master_seed, cfg.dropout_mode)
    reports = []
    for r in range(cfg.rounds):
        rep = run_round(server, clients, cfg, plan.unavailable[r], shape, similarity_dump)
        reports.append(rep)
        if on_round:
            on_round(rep)
        log.debug("round %d mean nrmse %.4f", r, rep.global_test_nrmse_mean)

    diverged = sum(c.diverged_rounds for c in clients)
    if diverged:
        log.warning("%s seed %d: local training diverged in %d client-rounds; zero updates were sent",
                    cfg.method, cfg.master_seed, diverged)
    if cfg.personalized:
        models = {c.client_id: c.personalized for c in clients}
    else:
        models = {c.client_id: server.weights for c in clients}
    return ExperimentResult(cfg, reports, models, server, clients)
