"""Synchronous parameter-server round protocol.

Each round the server broadcasts the current iterate, every scheduled worker
computes a gradient and runs its message policy, the server aggregates what
arrived (reconstructing suppressed information from its own state variable
where the policy has one), takes a step, and the trace records objective
error, gradient norm, and the exact cumulative transmitted bits.

The loop is sequential and deterministic: messages are aggregated in worker
index order, and all randomness flows through one seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gdsec import kernels
from gdsec.compressors import (
    KIND_DENSE,
    KIND_NONE,
    KIND_QUANTIZED,
    KIND_SPARSE,
    NOTHING,
    QuantizedVector,
    WireMessage,
    WorkerState,
    cgd_worker_round,
    dequantize,
    quantize,
    topj_worker_round,
)
from gdsec.core import BitLedger, DimensionMismatch, HyperParams, SparseDelta
from gdsec.encoding import message_bits
from gdsec.objectives import Objective

DIVERGENCE_FACTOR = 1e6


def step_size_schedule(kind: str, gamma0: float, lam: float, k: int) -> float:
    """Step size at iteration counter ``k`` (0 at the first round).

    ``constant`` ignores ``lam`` and ``k``; ``decreasing`` follows
    ``gamma0 / (1 + gamma0 * lam * k)``.
    """
    if gamma0 <= 0:
        raise ValueError("gamma0 must be positive")
    if kind == "constant":
        return gamma0
    if kind == "decreasing":
        if lam < 0:
            raise ValueError("decay weight must be nonnegative")
        return gamma0 / (1.0 + gamma0 * lam * k)
    raise ValueError(f"unknown step-size kind {kind!r}")


@dataclass(frozen=True)
class StepSize:
    kind: str = "constant"
    gamma0: float = 1.0
    lam: float = 0.0

    def at(self, k: int) -> float:
        return step_size_schedule(self.kind, self.gamma0, self.lam, k)


@dataclass(frozen=True)
class Schedule:
    """Which workers participate each round.

    ``full`` schedules everyone. ``round_robin`` splits the workers into
    ``ceil(1/fraction)`` fixed cohorts (striped by index) and rotates through
    them cyclically, one cohort per round.
    """

    policy: str = "full"
    fraction: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.policy not in ("full", "round_robin"):
            raise ValueError(f"unknown schedule policy {self.policy!r}")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")

    def workers(self, k: int, n_workers: int) -> np.ndarray:
        if self.policy == "full" or self.fraction == 1.0:
            return np.arange(n_workers)
        ncoh = math.ceil(1.0 / self.fraction)
        cohort = (k - 1) % ncoh
        return np.arange(n_workers)[np.arange(n_workers) % ncoh == cohort]


@dataclass
class ServerState:
    """Server-side iterate pair and mirrored state variable."""

    theta: np.ndarray
    theta_prev: np.ndarray
    h: np.ndarray
    k: int = 1


def _accumulate(dsum: np.ndarray, msg: WireMessage) -> None:
    if msg.kind == KIND_SPARSE:
        dsum[msg.payload.idx] += msg.payload.val
    elif msg.kind == KIND_DENSE:
        dsum += msg.payload
    elif msg.kind == KIND_QUANTIZED:
        dsum += dequantize(msg.payload)


def server_step(s: ServerState, messages, hp: HyperParams) -> ServerState:
    """One aggregation-and-update step of the state-variable server rule.

    Messages absent this round contribute zero. The server applies
    ``theta <- theta - alpha * (h + sum)`` and then advances its state
    variable by ``beta * sum``, mirroring what each worker did locally.
    """
    d = s.theta.shape[0]
    dsum = np.zeros(d)
    for msg in messages:
        if msg.kind != KIND_NONE and _payload_dim(msg) != d:
            raise DimensionMismatch("message dimension does not match server")
        _accumulate(dsum, msg)
    theta_next = s.theta - hp.alpha * (s.h + dsum)
    return ServerState(theta_next, s.theta.copy(), s.h + hp.beta * dsum, s.k + 1)


def _payload_dim(msg: WireMessage) -> int:
    if msg.kind == KIND_SPARSE:
        return msg.payload.dim
    if msg.kind == KIND_DENSE:
        return msg.payload.shape[0]
    return msg.payload.dim


class Strategy:
    """Message policy plus the matching server aggregation rule."""

    name = "base"

    def prepare(self, dim: int, hp: HyperParams, rng: np.random.Generator) -> None:
        self.dim = dim
        self.hp = hp

    def active_workers(self, k, scheduled, rng):
        return scheduled

    def round(self, active, grads, theta, theta_prev, rng, collect_residual=False):
        """Run one round for the active workers.

        ``grads`` is a (len(active), dim) matrix aligned with ``active``.
        Returns ``(messages, direction, residual)`` where messages is a list
        of (worker, WireMessage), direction is the vector the server scales
        by the step size, and residual is the aggregate compression residual
        (only policies with error memory report one).
        """
        raise NotImplementedError

    coord_tx: Optional[np.ndarray] = None


class GDStrategy(Strategy):
    """Every worker transmits its dense gradient; the server sums them."""

    name = "gd"

    def round(self, active, grads, theta, theta_prev, rng, collect_residual=False):
        msgs = [(m, WireMessage(KIND_DENSE, grads[i])) for i, m in enumerate(active)]
        return msgs, grads.sum(axis=0), None


class GDSECStrategy(Strategy):
    """Sparsified gradient differences with state variables and (optionally)
    error correction; optionally quantizes the surviving components.

    The per-worker logic matches ``compressors.gdsec_worker_round`` exactly;
    it is inlined here so one round touches each worker row once.
    """

    def __init__(
        self,
        error_correction: bool = True,
        quantize_s: int | None = None,
        track_coordinates: bool = True,
    ):
        self.error_correction = error_correction
        self.quantize_s = quantize_s
        self.track_coordinates = track_coordinates

    @property
    def name(self):
        if self.quantize_s is not None:
            return "qgdsec"
        return "gdsec" if self.error_correction else "gdsec_no_ec"

    def prepare(self, dim, hp, rng):
        super().prepare(dim, hp, rng)
        if hp.xi.shape[0] != dim:
            raise DimensionMismatch("need one threshold per coordinate")
        M = hp.n_workers
        self.H = np.zeros((M, dim))
        self.E = np.zeros((M, dim))
        self.h_server = np.zeros(dim)
        self.coord_tx = np.zeros((M, dim), dtype=np.int64)
        self._xi_over_m = hp.xi / M

    def round(self, active, grads, theta, theta_prev, rng, collect_residual=False):
        d = self.dim
        beta = self.hp.beta
        sub = np.asarray(active)
        full = sub.size == self.hp.n_workers
        limits = self._xi_over_m * np.abs(theta - theta_prev)
        delta = grads - (self.H if full else self.H[sub])
        if self.error_correction:
            delta += self.E if full else self.E[sub]
        e_before = self.E[sub].copy() if (collect_residual and self.error_correction) else None

        dsum = np.zeros(d)
        msgs = []
        if self.quantize_s is None:
            for i, m in enumerate(sub):
                idx, val = kernels.gdsec_worker_update(
                    delta[i], limits, self.H[m], self.E[m], dsum,
                    beta, self.error_correction,
                )
                if idx.size:
                    msgs.append((m, WireMessage(KIND_SPARSE, SparseDelta.trusted(idx, val, d))))
                    if self.track_coordinates:
                        self.coord_tx[m, idx] += 1
                else:
                    msgs.append((m, NOTHING))
        else:
            for i, m in enumerate(sub):
                idx, val = kernels.select_above_threshold(delta[i], limits)
                sent = np.zeros(d)
                if idx.size:
                    sent[idx] = val
                    q = quantize(sent, self.quantize_s, rng)
                    sent = dequantize(q)
                    msgs.append((m, WireMessage(KIND_QUANTIZED, q)))
                    self.coord_tx[m, idx] += 1
                else:
                    msgs.append((m, NOTHING))
                self.H[m] += beta * sent
                dsum += sent
                if self.error_correction:
                    self.E[m] = delta[i] - sent

        residual = None
        if collect_residual:
            if self.error_correction:
                residual = (e_before - self.E[sub]).sum(axis=0)
            else:
                residual = dsum - delta.sum(axis=0)
        direction = self.h_server + dsum
        self.h_server = self.h_server + beta * dsum
        return msgs, direction, residual


class TopJStrategy(Strategy):
    """Fixed-size magnitude selection with error feedback at each worker."""

    name = "topj"

    def __init__(self, j: int):
        self.j = j

    def prepare(self, dim, hp, rng):
        super().prepare(dim, hp, rng)
        self.states = [WorkerState.fresh(dim) for _ in range(hp.n_workers)]

    def round(self, active, grads, theta, theta_prev, rng, collect_residual=False):
        dsum = np.zeros(self.dim)
        msgs = []
        for i, m in enumerate(active):
            msg, _ = topj_worker_round(self.states[m], grads[i], self.j)
            msgs.append((m, msg))
            _accumulate(dsum, msg)
        return msgs, dsum, None


class CGDStrategy(Strategy):
    """Whole-vector censoring; the server reuses the last received gradient
    from every silent worker."""

    name = "cgd"

    def __init__(self, xi_tilde: float):
        self.xi_tilde = xi_tilde

    def prepare(self, dim, hp, rng):
        super().prepare(dim, hp, rng)
        self.states = [WorkerState.fresh(dim) for _ in range(hp.n_workers)]
        self.received = np.zeros((hp.n_workers, dim))

    def round(self, active, grads, theta, theta_prev, rng, collect_residual=False):
        msgs = []
        for i, m in enumerate(active):
            msg, _ = cgd_worker_round(
                self.states[m], grads[i], theta, theta_prev,
                self.xi_tilde, self.hp.n_workers,
            )
            msgs.append((m, msg))
            if msg.kind != KIND_NONE:
                self.received[m] = msg.payload.densify()
        return msgs, self.received.sum(axis=0), None


class QGDStrategy(Strategy):
    """Unbiased quantization of the full gradient, every round."""

    name = "qgd"

    def __init__(self, s: int):
        self.s = s

    def round(self, active, grads, theta, theta_prev, rng, collect_residual=False):
        dsum = np.zeros(self.dim)
        msgs = []
        for i, m in enumerate(active):
            q = quantize(grads[i], self.s, rng)
            if q.norm == 0.0:
                msgs.append((m, NOTHING))  # nothing meaningful to send
            else:
                msgs.append((m, WireMessage(KIND_QUANTIZED, q)))
                dsum += dequantize(q)
        return msgs, dsum, None


class NoUnifIAGStrategy(Strategy):
    """One worker per round, drawn with probability proportional to its
    smoothness constant, refreshes its slot in the server's gradient table.

    The first round schedules everyone so the table starts from real
    gradients. Incompatible with partial-participation schedules.
    """

    name = "nounif_iag"

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("weights must form a probability vector")

    def prepare(self, dim, hp, rng):
        super().prepare(dim, hp, rng)
        if self.weights.shape[0] != hp.n_workers:
            raise ValueError("one weight per worker required")
        self.table = np.zeros((hp.n_workers, dim))

    def active_workers(self, k, scheduled, rng):
        if len(scheduled) != self.hp.n_workers:
            raise ValueError("nonuniform selection requires full participation")
        if k == 1:
            return scheduled
        return np.array([rng.choice(self.hp.n_workers, p=self.weights)])

    def round(self, active, grads, theta, theta_prev, rng, collect_residual=False):
        msgs = []
        for i, m in enumerate(active):
            self.table[m] = grads[i]
            msgs.append((m, WireMessage(KIND_DENSE, grads[i])))
        return msgs, self.table.sum(axis=0), None


@dataclass(frozen=True)
class RoundTrace:
    """One row of the per-iteration record."""

    k: int
    objective_error: float
    grad_norm_sq: float
    d1_sq: float
    d2_sq: float
    cum_bits: tuple
    cum_bits_total: int
    transmissions_total: int
    ec_residual_norm_sq: float = float("nan")


@dataclass
class ExperimentResult:
    """Columnar trace of one run plus end-of-run summaries."""

    k: np.ndarray
    f_err: np.ndarray
    grad_norm_sq: np.ndarray
    d1_sq: np.ndarray
    d2_sq: np.ndarray
    ec_residual_norm_sq: np.ndarray
    cum_bits: np.ndarray  # (rounds, n_workers)
    transmissions_total: np.ndarray
    diverged: bool
    f_star: float
    tx_per_worker: np.ndarray
    coord_tx: Optional[np.ndarray] = None
    iterates: Optional[list] = None

    @property
    def n_rounds(self) -> int:
        return int(self.k.size)

    @property
    def n_workers(self) -> int:
        return int(self.cum_bits.shape[1])

    @property
    def cum_bits_total(self) -> np.ndarray:
        return self.cum_bits.sum(axis=1)

    @property
    def ledger(self) -> BitLedger:
        if self.n_rounds == 0:
            return BitLedger.zeros(self.n_workers)
        return BitLedger(self.cum_bits[-1], self.tx_per_worker)

    def rows(self):
        totals = self.cum_bits_total
        for i in range(self.n_rounds):
            yield RoundTrace(
                k=int(self.k[i]),
                objective_error=float(self.f_err[i]),
                grad_norm_sq=float(self.grad_norm_sq[i]),
                d1_sq=float(self.d1_sq[i]),
                d2_sq=float(self.d2_sq[i]),
                cum_bits=tuple(int(b) for b in self.cum_bits[i]),
                cum_bits_total=int(totals[i]),
                transmissions_total=int(self.transmissions_total[i]),
                ec_residual_norm_sq=float(self.ec_residual_norm_sq[i]),
            )

    def first_reach(self, target_error: float):
        """First round at which the objective error is at most the target,
        with the total bits spent by then; None when never reached."""
        hits = np.nonzero(self.f_err <= target_error)[0]
        if hits.size == 0:
            return None
        i = int(hits[0])
        return int(self.k[i]), int(self.cum_bits_total[i])


def run_experiment(
    objective: Objective,
    strategy: Strategy,
    schedule: Schedule,
    hp: HyperParams,
    f_star: float,
    seed: int,
    *,
    step: StepSize | None = None,
    batch_size: int | None = None,
    theta0: np.ndarray | None = None,
    record_iterates: bool = False,
    collect_residual: bool = False,
    stop_below: float | None = None,
) -> ExperimentResult:
    """Run the full round loop and return the per-iteration trace.

    Deterministic given the seed. On NaN/Inf or a 1e6-fold objective blow-up
    the trace is truncated at the last healthy round and flagged diverged.
    """
    if objective.n_workers != hp.n_workers:
        raise ValueError("objective and hyperparameters disagree on worker count")
    d = objective.dim
    M = hp.n_workers
    K = hp.n_rounds
    rng = np.random.default_rng(seed)
    if step is None:
        step = StepSize("constant", hp.alpha)

    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=np.float64)
    # theta_prev starts equal to theta so the first round's movement-based
    # thresholds are zero and every worker transmits in full.
    theta_prev = theta.copy()
    strategy.prepare(d, hp, rng)

    f_err = np.empty(K)
    grad_norm_sq = np.empty(K)
    d1_sq = np.empty(K)
    d2_sq = np.empty(K)
    ec_res = np.full(K, np.nan)
    cum_bits = np.empty((K, M), dtype=np.int64)
    tx_total = np.empty(K, dtype=np.int64)
    pw_bits = np.zeros(M, dtype=np.int64)
    pw_tx = np.zeros(M, dtype=np.int64)
    iterates = [] if record_iterates else None

    diverged = False
    f_limit = None
    prev_d1 = 0.0
    rounds_done = 0
    is_full = schedule.policy == "full" or schedule.fraction == 1.0
    all_workers = np.arange(M)

    for k in range(1, K + 1):
        scheduled = all_workers if is_full else schedule.workers(k, M)
        active = strategy.active_workers(k, scheduled, rng)
        f_k, grads, full_grad = objective.round_eval(theta, active, batch_size, rng)
        if f_limit is None:
            f_limit = DIVERGENCE_FACTOR * max(abs(f_k), 1.0)
        if not np.isfinite(f_k) or f_k > f_limit:
            diverged = True
            break

        msgs, direction, residual = strategy.round(
            active, grads, theta, theta_prev, rng, collect_residual
        )
        for m, msg in msgs:
            nbits = message_bits(msg)
            pw_bits[m] += nbits
            if msg.kind != KIND_NONE:
                pw_tx[m] += 1

        i = k - 1
        diff = theta - theta_prev
        cur_d1 = float(diff @ diff)
        f_err[i] = f_k - f_star
        grad_norm_sq[i] = float(full_grad @ full_grad)
        d1_sq[i] = cur_d1
        d2_sq[i] = prev_d1
        if residual is not None:
            ec_res[i] = float(residual @ residual)
        cum_bits[i] = pw_bits
        tx_total[i] = pw_tx.sum()
        if record_iterates:
            iterates.append(theta.copy())

        theta_next = theta - step.at(k - 1) * direction
        rounds_done = k
        if not np.all(np.isfinite(theta_next)):
            diverged = True
            break
        theta_prev = theta
        theta = theta_next
        prev_d1 = cur_d1
        if stop_below is not None and f_err[i] <= stop_below:
            break

    n = rounds_done
    return ExperimentResult(
        k=np.arange(1, n + 1),
        f_err=f_err[:n],
        grad_norm_sq=grad_norm_sq[:n],
        d1_sq=d1_sq[:n],
        d2_sq=d2_sq[:n],
        ec_residual_norm_sq=ec_res[:n],
        cum_bits=cum_bits[:n].copy(),
        transmissions_total=tx_total[:n],
        diverged=diverged,
        f_star=f_star,
        tx_per_worker=pw_tx,
        coord_tx=getattr(strategy, "coord_tx", None),
        iterates=iterates,
    )


def estimate_f_star(objective: Objective, rounds: int = 10000, alpha: float | None = None) -> float:
    """Reference optimal value for the objective-error axis.

    Solves the regularized normal equations in closed form for the quadratic
    L2 family; otherwise runs plain gradient descent for ``rounds`` steps at
    ``alpha`` (default 1/L) and returns the smallest value observed. For
    nonsmooth or nonconvex families this is a reference point, not a
    certified optimum.
    """
    spec = objective.spec
    if spec.family == "ridge_linear":
        X = np.vstack([ds.features for ds in objective.datasets])
        y = np.concatenate([ds.labels for ds in objective.datasets])
        N = objective.n_total
        A = X.T @ X / N + spec.lam * np.eye(objective.dim)
        theta_star = np.linalg.solve(A, X.T @ y / N)
        return objective.value(theta_star)
    if alpha is None:
        alpha = 1.0 / objective.smoothness().L_global
    theta = np.zeros(objective.dim)
    best = objective.value(theta)
    for _ in range(rounds):
        theta = theta - alpha * objective.full_gradient(theta)
        if not np.all(np.isfinite(theta)):
            raise FloatingPointError("reference run diverged")
        best = min(best, objective.value(theta))
    return best


def write_trace_csv(result: ExperimentResult, path) -> None:
    """Write the trace in the documented CSV schema.

    Floats are written with shortest round-trip repr, so identical runs
    produce byte-identical files.
    """
    M = result.n_workers
    header = (
        ["k", "objective_error", "grad_norm_sq", "cum_bits_total"]
        + [f"cum_bits_w{m}" for m in range(M)]
        + ["transmissions_total"]
    )
    totals = result.cum_bits_total
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(result.n_rounds):
            cells = [
                str(int(result.k[i])),
                repr(float(result.f_err[i])),
                repr(float(result.grad_norm_sq[i])),
                str(int(totals[i])),
            ]
            cells += [str(int(b)) for b in result.cum_bits[i]]
            cells.append(str(int(result.transmissions_total[i])))
            fh.write(",".join(cells) + "\n")
