"""Federated continual learning simulator.

Runs Elastic Transfer and the baseline families over a simulated network of
clients. Each task consists of ``R`` rounds; in every round the available
clients train locally for ``E`` epochs starting from the global model, share
their estimates with the other clients and are averaged into the next global
model. At each task boundary clients fold the finished task into a running
Fisher sum, share the refined estimate and lose the task's raw data.

Local families (STL, Local-*) skip communication and aggregation entirely.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import penalty as pen
from .numeric import (ACTIVATIONS, LabeledSet, MlpSpec, fisher_diagonal, init_model,
                      loss_and_grad, mse_loss)
from .scenario import Scenario

FAMILIES = (
    "Centralized", "STL", "LocalSGD", "LocalL2T", "LocalEWC", "LocalOnlineEWC",
    "FedAvgSGD", "FedProxSGD", "FedCurv", "FedAvgEWC", "FedProxEWC",
    "ElasticTransfer",
)
LOCAL_FAMILIES = frozenset({"STL", "LocalSGD", "LocalL2T", "LocalEWC", "LocalOnlineEWC"})
FEDERATED_FAMILIES = frozenset({"FedAvgSGD", "FedProxSGD", "FedCurv", "FedAvgEWC",
                                "FedProxEWC", "ElasticTransfer"})

# Which of (lambda1, lambda2, lambda3) each family reads. lambda1 weighs the
# client's own previous tasks, lambda2 other clients' previous tasks, lambda3
# the current-task term (peer rough estimates, or the FedProx proximal term).
USED_LAMBDAS = {
    "Centralized": (), "STL": (), "LocalSGD": (), "FedAvgSGD": (),
    "LocalL2T": (0,), "LocalEWC": (0,), "LocalOnlineEWC": (0,), "FedAvgEWC": (0,),
    "FedProxSGD": (2,), "FedCurv": (2,), "FedProxEWC": (0, 2),
    "ElasticTransfer": (0, 1, 2),
}


def default_lambdas(family: str) -> Tuple[float, float, float]:
    """0.5 for every weight the family reads; Elastic Transfer uses (0, 0.5, 0)."""
    if family == "ElasticTransfer":
        return (0.0, 0.5, 0.0)
    used = USED_LAMBDAS.get(family, ())
    return tuple(0.5 if i in used else 0.0 for i in range(3))


ROUGH_CONSUMERS = frozenset({"FedCurv", "ElasticTransfer"})
REFINED_CONSUMERS = frozenset({"ElasticTransfer"})

DROPOUT_POLICIES = ("none", "drop_one_uniform")


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


class DataLocalityError(RuntimeError):
    """Raw data of a consolidated task was requested."""


@dataclass(frozen=True)
class AlgorithmSpec:
    family: str = "ElasticTransfer"
    lambdas: Optional[Tuple[float, float, float]] = None
    lr: float = 5e-3
    batch_size: int = 32
    hidden: Tuple[int, ...] = (32, 32)
    activation: str = "relu"
    weighted_aggregation: bool = False

    def __post_init__(self):
        lams = default_lambdas(self.family) if self.lambdas is None else self.lambdas
        object.__setattr__(self, "lambdas", tuple(float(v) for v in lams))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if len(self.lambdas) != 3:
            raise ConfigError("lambdas must be a triple")
        used = USED_LAMBDAS[self.family]
        for i, lam in enumerate(self.lambdas):
            if not lam >= 0:
                raise ConfigError(f"lambda{i + 1} must be >= 0")
            if i not in used and lam != 0:
                raise ConfigError(f"{self.family} does not use lambda{i + 1}; set it to 0")
        if not self.lr >= 0:
            raise ConfigError("lr must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")

    def model_spec(self, input_dim: int) -> MlpSpec:
        return MlpSpec((input_dim, *self.hidden, 1), self.activation)


@dataclass(frozen=True)
class RoundSchedule:
    rounds: int = 25
    epochs: int = 5
    dropout: str = "drop_one_uniform"
    seed: int = 0

    def validate(self) -> None:
        if self.rounds < 1 or self.epochs < 1:
            raise ConfigError("rounds and epochs must be >= 1")
        if self.dropout not in DROPOUT_POLICIES:
            raise ConfigError(f"dropout must be one of {DROPOUT_POLICIES}")


# --- data custody -------------------------------------------------------------

@dataclass(frozen=True)
class AuditEvent:
    client: int
    task: int
    action: str        # "load", "read", "destroy", "denied"
    purpose: str = ""


class LocalStore:
    """A client's on-device raw data for the current task.

    Every access is appended to the shared audit log. Destroyed data cannot
    be read back: the store keeps no reference to it.
    """

    def __init__(self, client: int, audit: List[AuditEvent]):
        self.client = client
        self._audit = audit
        self._task: Optional[int] = None
        self._data: Optional[LabeledSet] = None
        self._destroyed = set()

    @property
    def task(self) -> Optional[int]:
        return self._task

    def load(self, task: int, data: LabeledSet) -> None:
        if task in self._destroyed:
            raise DataLocalityError(f"task {task} data was already destroyed")
        self._task, self._data = task, data
        self._audit.append(AuditEvent(self.client, task, "load"))

    def read(self, task: int, purpose: str) -> LabeledSet:
        if self._data is None or task != self._task:
            self._audit.append(AuditEvent(self.client, task, "denied", purpose))
            raise DataLocalityError(
                f"client {self.client} holds no raw data for task {task}")
        self._audit.append(AuditEvent(self.client, task, "read", purpose))
        return self._data

    def destroy(self) -> None:
        if self._data is None:
            return
        self._audit.append(AuditEvent(self.client, self._task, "destroy"))
        self._destroyed.add(self._task)
        self._data = None


def audit_violations(audit: Sequence[AuditEvent]) -> List[AuditEvent]:
    """Reads (successful or denied) of a (client, task) after its destruction."""
    destroyed = set()
    bad = []
    for ev in audit:
        key = (ev.client, ev.task)
        if ev.action == "destroy":
            destroyed.add(key)
        elif ev.action in ("read", "denied") and key in destroyed:
            bad.append(ev)
    return bad


# --- client state ---------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    theta: np.ndarray
    fisher: np.ndarray
    stamp: Tuple[int, int]     # (task, round) at which the sender produced it


@dataclass
class ClientState:
    client_id: int
    current_model: np.ndarray
    online_fisher: np.ndarray
    recentered_map: Optional[np.ndarray] = None
    task_history: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    refined_inbox: Dict[int, Estimate] = field(default_factory=dict)
    rough_inbox: Dict[int, Estimate] = field(default_factory=dict)
    store: Optional[LocalStore] = None
    completed_tasks: int = 0

    @property
    def own_refined(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        if self.recentered_map is None:
            return None
        return self.recentered_map, self.online_fisher


def new_client(client_id: int, theta0: np.ndarray, audit: List[AuditEvent]) -> ClientState:
    return ClientState(client_id, theta0.copy(), np.zeros_like(theta0),
                       store=LocalStore(client_id, audit))


# --- protocol steps ------------------------------------------------------------

def select_clients(clients: Sequence[int], dropout: str, round_seed) -> List[int]:
    """Clients available this round, in ascending id order."""
    clients = sorted(clients)
    if not clients:
        raise ConfigError("no clients to select from")
    if dropout == "none" or len(clients) == 1:
        return clients
    if dropout != "drop_one_uniform":
        raise ConfigError(f"unknown dropout policy {dropout!r}")
    drop = int(np.random.default_rng(round_seed).integers(len(clients)))
    return clients[:drop] + clients[drop + 1:]


def aggregate(updates: Union[Mapping[int, np.ndarray], Sequence[np.ndarray]],
              weights: Optional[Mapping[int, float]] = None) -> np.ndarray:
    """Mean of the client updates, summed in ascending client-id order.

    A plain sequence is treated as ``{position: update}``. With ``weights``
    the mean is weighted (dataset-size FedAvg).
    """
    if not isinstance(updates, Mapping):
        updates = dict(enumerate(updates))
    if not updates:
        raise ValueError("cannot aggregate an empty update set")
    ids = sorted(updates)
    size = np.asarray(updates[ids[0]]).shape
    acc = np.zeros(size)
    if weights is None:
        for i in ids:
            u = np.asarray(updates[i], dtype=np.float64)
            if u.shape != size:
                raise ValueError("updates differ in length")
            acc = acc + u
        return acc / len(ids)
    total = 0.0
    for i in ids:
        u = np.asarray(updates[i], dtype=np.float64)
        if u.shape != size:
            raise ValueError("updates differ in length")
        acc = acc + weights[i] * u
        total += weights[i]
    return acc / total


def build_penalty(client: ClientState, theta_global: np.ndarray,
                  algo: AlgorithmSpec) -> pen.PenaltySet:
    l1, l2, l3 = algo.lambdas
    fam = algo.family
    if fam in ("LocalEWC", "FedAvgEWC"):
        return pen.make_ewc_anchors(client.task_history, l1)
    if fam == "LocalL2T":
        return pen.make_l2_transfer_anchors([t for t, _ in client.task_history], l1)
    if fam == "LocalOnlineEWC":
        return pen.make_online_ewc_anchor(client.own_refined, l1)
    if fam == "FedProxSGD":
        return pen.make_proximal_anchor(theta_global, l3)
    if fam == "FedProxEWC":
        return (pen.make_ewc_anchors(client.task_history, l1)
                + pen.make_proximal_anchor(theta_global, l3))
    if fam == "FedCurv":
        rough = [(e.theta, e.fisher) for _, e in sorted(client.rough_inbox.items())]
        return pen.make_fedcurv_anchors(rough, l3)
    if fam == "ElasticTransfer":
        refined = [(e.theta, e.fisher) for _, e in sorted(client.refined_inbox.items())]
        rough = [(e.theta, e.fisher) for _, e in sorted(client.rough_inbox.items())]
        return pen.make_elastic_transfer_anchors(client.own_refined, refined, rough,
                                                 l1, l2, l3)
    return pen.PenaltySet()


@dataclass(frozen=True)
class LocalResult:
    theta: np.ndarray
    fisher: np.ndarray
    train_loss: float
    penalty: float
    n_anchors: int


def train_local(client: ClientState, theta_global: np.ndarray, epochs: int,
                algo: AlgorithmSpec, model: MlpSpec, task: int,
                seed_key: Sequence[int]) -> LocalResult:
    """Mini-batch SGD on MSE plus the family's penalty, starting at ``theta_global``.

    Epoch ``e`` shuffles with ``default_rng([*seed_key, e])``; the last short
    batch is kept. Returns the final parameters and their empirical Fisher on
    the client's training split.
    """
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if client.store is None:
        raise DataLocalityError(f"client {client.client_id} has no data store")
    data = client.store.read(task, "train_local")
    ps = build_penalty(client, theta_global, algo)
    compiled = pen.CompiledPenalty(ps, theta_global.shape[0])
    X, y = data.features, data.labels
    n = len(data)
    bs = algo.batch_size
    lr = algo.lr
    theta = np.array(theta_global, dtype=np.float64, copy=True)
    for e in range(epochs):
        perm = np.random.default_rng([*seed_key, e]).permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            loss, g = loss_and_grad(model, theta, X[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss on client {client.client_id}, task {task}, "
                    f"epoch {e}, batch at {start} (family {algo.family}, "
                    f"lr={lr}, lambdas={algo.lambdas})")
            if compiled.active:
                g = g + compiled.grad(theta)
            theta = theta - lr * g
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(
            f"non-finite parameters on client {client.client_id}, task {task} "
            f"(family {algo.family}, lr={lr}, lambdas={algo.lambdas})")
    fisher = fisher_diagonal(model, theta, data)
    loss = mse_loss(model, theta, data)
    if not np.isfinite(loss) or not np.all(np.isfinite(fisher)):
        raise DivergenceError(f"non-finite loss/Fisher on client {client.client_id}")
    return LocalResult(theta, fisher, loss, pen.penalty_value(theta, ps), len(ps))


def consolidate_task(client: ClientState, task: int, model: MlpSpec) -> ClientState:
    """Fold the finished task into the running Fisher sum and drop its raw data."""
    data = client.store.read(task, "consolidate")
    theta = client.current_model.copy()
    fisher = fisher_diagonal(model, theta, data)
    client.online_fisher = client.online_fisher + fisher
    client.recentered_map = theta
    client.task_history.append((theta, fisher))
    client.completed_tasks += 1
    client.store.destroy()
    return client


def broadcast_refined(clients: Mapping[int, ClientState], stamp: Tuple[int, int]) -> int:
    """Deliver every client's (recentered map, running Fisher) to all others.

    Returns the number of point-to-point deliveries.
    """
    sent = 0
    for sid, sender in sorted(clients.items()):
        if sender.recentered_map is None:
            continue
        est = Estimate(sender.recentered_map.copy(), sender.online_fisher.copy(), stamp)
        for rid, receiver in sorted(clients.items()):
            if rid != sid:
                receiver.refined_inbox[sid] = est
                sent += 1
    return sent


def broadcast_rough(clients: Mapping[int, ClientState],
                    results: Mapping[int, LocalResult], stamp: Tuple[int, int]) -> int:
    """Replace the inbox entries of this round's senders; others stay as they were."""
    sent = 0
    for sid in sorted(results):
        r = results[sid]
        est = Estimate(r.theta.copy(), r.fisher.copy(), stamp)
        for rid, receiver in sorted(clients.items()):
            if rid != sid:
                receiver.rough_inbox[sid] = est
                sent += 1
    return sent


# --- experiment loop -----------------------------------------------------------

@dataclass(frozen=True)
class LogRecord:
    task: int
    round: int
    client: int
    train_loss: float
    penalty: float


@dataclass
class TrainLog:
    records: List[LogRecord] = field(default_factory=list)
    events: List[tuple] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["task,round,client,train_loss,penalty"]
        lines.extend(f"{r.task},{r.round},{r.client},{r.train_loss!r},{r.penalty!r}"
                     for r in self.records)
        return "\n".join(lines) + "\n"


@dataclass
class MessageCount:
    """Logical transfers under a peer-to-peer mesh and a server-relayed star."""

    p2p: int = 0
    star: int = 0


@dataclass
class ExperimentResult:
    log: TrainLog
    P: np.ndarray
    messages: MessageCount
    audit: List[AuditEvent]
    n_params: int
    clients: Dict[int, ClientState]
    theta_global: Optional[np.ndarray] = None


def derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, np.uint64)[0])


def _evaluate_global(model, theta, scenario: Scenario) -> np.ndarray:
    return np.array([mse_loss(model, theta, scenario.pooled_test(j))
                     for j in range(scenario.n_tasks)])


def run_experiment(config) -> ExperimentResult:
    """Run one configured experiment; ``config`` is an ``ExperimentConfig``."""
    algo = config.algorithm
    schedule = config.schedule
    algo.validate()
    schedule.validate()
    scenario = config.build_scenario()
    return simulate(scenario, algo, schedule)


def simulate(scenario: Scenario, algo: AlgorithmSpec, schedule: RoundSchedule) -> ExperimentResult:
    algo.validate()
    schedule.validate()
    model = algo.model_spec(scenario.feature_dim)
    seed = schedule.seed
    theta0 = init_model(model, derive_seed(seed, 0))
    if algo.family == "Centralized":
        return _run_centralized(scenario, algo, schedule, model, theta0)
    if algo.family in LOCAL_FAMILIES:
        return _run_local(scenario, algo, schedule, model, theta0)
    return _run_federated(scenario, algo, schedule, model, theta0)


def _begin_task(clients, scenario, t, model, log):
    for cid, client in sorted(clients.items()):
        if t > 0:
            consolidate_task(client, t - 1, model)
            log.events.append(("consolidate", t, cid))
        client.store.load(t, scenario.cell(cid, t).train)


def _run_federated(scenario, algo, schedule, model, theta0) -> ExperimentResult:
    C, T = scenario.n_clients, scenario.n_tasks
    audit: List[AuditEvent] = []
    clients = {c: new_client(c, theta0, audit) for c in range(C)}
    log = TrainLog()
    msgs = MessageCount()
    P = np.zeros((T, T))
    theta_g = theta0.copy()
    weights = None
    for t in range(T):
        log.events.append(("task_start", t))
        _begin_task(clients, scenario, t, model, log)
        if t > 0 and algo.family in REFINED_CONSUMERS:
            sent = broadcast_refined(clients, (t, 0))
            msgs.p2p += sent
            msgs.star += 2 * C
            log.events.append(("broadcast_refined", t, tuple(sorted(clients))))
        if algo.weighted_aggregation:
            weights = {c: float(len(scenario.cell(c, t).train)) for c in clients}
        for r in range(schedule.rounds):
            chosen = select_clients(list(clients), schedule.dropout,
                                    [schedule.seed, 1, t, r])
            log.events.append(("select", t, r, tuple(chosen)))
            results = {}
            for c in chosen:
                res = train_local(clients[c], theta_g, schedule.epochs, algo, model, t,
                                  (schedule.seed, 2, c, t, r))
                clients[c].current_model = res.theta
                results[c] = res
                log.records.append(LogRecord(t, r, c, res.train_loss, res.penalty))
                log.events.append(("train", t, r, c, res.n_anchors))
            if algo.family in ROUGH_CONSUMERS:
                msgs.p2p += broadcast_rough(clients, results, (t, r))
                msgs.star += len(chosen) + C
                log.events.append(("broadcast_rough", t, r, tuple(sorted(results)),
                                   {cid: {s: e.stamp for s, e in sorted(cl.rough_inbox.items())}
                                    for cid, cl in sorted(clients.items())}))
            theta_g = aggregate({c: res.theta for c, res in results.items()},
                                None if weights is None else {c: weights[c] for c in results})
            msgs.p2p += len(chosen) * (C - 1)
            msgs.star += len(chosen) + C
            log.events.append(("aggregate", t, r, len(results)))
        P[t] = _evaluate_global(model, theta_g, scenario)
        log.events.append(("evaluate", t))
    for client in clients.values():
        client.store.destroy()
    return ExperimentResult(log, P, msgs, audit, model.n_params, clients, theta_g)


def _run_local(scenario, algo, schedule, model, theta0) -> ExperimentResult:
    C, T = scenario.n_clients, scenario.n_tasks
    audit: List[AuditEvent] = []
    clients = {c: new_client(c, theta0, audit) for c in range(C)}
    log = TrainLog()
    per_client = np.zeros((C, T, T))
    for t in range(T):
        log.events.append(("task_start", t))
        _begin_task(clients, scenario, t, model, log)
        if algo.family == "STL":
            for c, client in clients.items():
                client.current_model = init_model(model, derive_seed(schedule.seed, 3, c, t))
        for r in range(schedule.rounds):
            for c in sorted(clients):
                client = clients[c]
                res = train_local(client, client.current_model, schedule.epochs, algo,
                                  model, t, (schedule.seed, 2, c, t, r))
                client.current_model = res.theta
                log.records.append(LogRecord(t, r, c, res.train_loss, res.penalty))
                log.events.append(("train", t, r, c, res.n_anchors))
        for c, client in clients.items():
            per_client[c, t] = _evaluate_global(model, client.current_model, scenario)
        log.events.append(("evaluate", t))
    for client in clients.values():
        client.store.destroy()
    P = per_client.mean(axis=0)
    return ExperimentResult(log, P, MessageCount(), audit, model.n_params, clients)


def _run_centralized(scenario, algo, schedule, model, theta0) -> ExperimentResult:
    """One model on the pooled training data of every cell; all rows of P coincide."""
    T = scenario.n_tasks
    audit: List[AuditEvent] = []
    server = new_client(-1, theta0, audit)
    server.store.load(0, scenario.pooled_train())
    log = TrainLog()
    theta = theta0
    for r in range(schedule.rounds):
        res = train_local(server, theta, schedule.epochs, algo, model, 0,
                          (schedule.seed, 4, r))
        theta = res.theta
        log.records.append(LogRecord(0, r, -1, res.train_loss, res.penalty))
    server.current_model = theta
    server.store.destroy()
    row = _evaluate_global(model, theta, scenario)
    P = np.tile(row, (T, 1))
    return ExperimentResult(log, P, MessageCount(), audit, model.n_params,
                            {-1: server}, theta)
