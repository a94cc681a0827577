"""Stochastic restoration-prior gradient descent and its convergence auditor.

Each iteration selects a degradation operator H, degrades the current
iterate (s = H x + n with fresh noise every iteration), and steps along

    ghat = ∇g(x) + (tau / sigma²) Hᵀ H (x - R(s, H)).

RNG protocol (load-bearing for reproducibility): the run seed feeds a
SeedSequence whose first two children drive operator selection and noise,
in that order. Selection strategies therefore never perturb the noise
stream, so a one-member ensemble under iid selection is bit-identical to a
fixed-index run at the same seed.

The auditor checks the biased-SGD bound

    mean_k E||∇f(x^{k-1})||² <= (2 / (gamma t)) (f(x⁰) - f*) + gamma L nu² + eps²

with L from the fidelity norm plus the regularizer curvature bound, nu²
from variance probes along the trajectory, and eps from bias probes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .objective import (
    ClosedFormUnavailable,
    Regularizer,
    SingleGaussianForms,
    fidelity,
    fidelity_grad,
    fidelity_lipschitz,
    gaussian_objective_minimum,
    regularizer_curvature_bound,
    variance_probe,
)
from .operators import sample_degradation
from .restoration import measure_bias

TRACE_HEADER = "k,op_index,step_sq,grad_hat_norm,grad_true_norm,f_value,psnr"

# Closed-form per-iteration diagnostics are built automatically only for
# single-Gaussian priors up to this dimension (dense curvature matrices).
_AUTO_DIAG_DIM = 64


class DivergenceError(RuntimeError):
    """Iterates left the finite range; carries the last finite iterate."""

    def __init__(self, iteration, last_iterate):
        self.iteration = int(iteration)
        self.last_iterate = last_iterate
        super().__init__(
            f"non-finite iterate at iteration {iteration}; "
            "reduce the step size (last finite iterate attached)"
        )


@dataclass
class SolverConfig:
    gamma: float
    tau: float
    iterations: int
    selection: str = "iid-by-weights"  # iid-by-weights | cyclic | fixed
    fixed_index: int = 0
    batch: int = 1
    seed: int = 0
    x0: object = "adjoint"  # "zeros" | "adjoint" | explicit vector
    record_iterates: bool = False

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.selection not in ("iid-by-weights", "cyclic", "fixed"):
            raise ValueError(f"unknown selection strategy {self.selection!r}")
        if self.batch > 1 and self.selection != "iid-by-weights":
            raise ValueError("batch > 1 requires iid-by-weights selection")


@dataclass
class Trace:
    op_index: np.ndarray
    step_sq: np.ndarray
    grad_hat_norm: np.ndarray
    grad_true_norm: np.ndarray | None
    f_value: np.ndarray | None
    psnr: np.ndarray | None
    f_initial: float | None
    x_final: np.ndarray
    iterates: np.ndarray | None = None

    def __len__(self):
        return len(self.op_index)

    def to_csv(self, path_or_file):
        if hasattr(path_or_file, "write"):
            self._write(path_or_file)
        else:
            with open(path_or_file, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh):
        fh.write(TRACE_HEADER + "\n")
        for i in range(len(self)):
            cells = [
                str(i + 1),
                str(int(self.op_index[i])),
                _fmt(self.step_sq[i]),
                _fmt(self.grad_hat_norm[i]),
                _fmt(self.grad_true_norm[i]) if self.grad_true_norm is not None else "",
                _fmt(self.f_value[i]) if self.f_value is not None else "",
                _fmt(self.psnr[i]) if self.psnr is not None else "",
            ]
            fh.write(",".join(cells) + "\n")

    def csv_text(self):
        buf = io.StringIO()
        self._write(buf)
        return buf.getvalue()


def _fmt(v):
    return repr(float(v))


def solver_streams(seed):
    """(selection_rng, noise_rng) exactly as the solver derives them."""
    sel_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(sel_seq), np.random.default_rng(noise_seq)


def select_operator(selection, ens, k, rng, fixed_index=0):
    """Index of the operator used at (0-based) iteration k."""
    if selection == "iid-by-weights":
        idx, _ = sample_degradation(ens, rng)
        return idx
    if selection == "cyclic":
        return k % ens.size
    if selection == "fixed":
        return int(fixed_index)
    raise ValueError(f"unknown selection strategy {selection!r}")


def _initial_point(cfg, problem):
    if isinstance(cfg.x0, str):
        if cfg.x0 == "zeros":
            return np.zeros(problem.A.in_dim)
        if cfg.x0 == "adjoint":
            return problem.A.adjoint_apply(problem.y)
        raise ValueError(f"unknown x0 spec {cfg.x0!r}")
    x0 = np.asarray(cfg.x0, dtype=float)
    if x0.shape != (problem.A.in_dim,):
        raise ValueError(f"x0 must have length {problem.A.in_dim}")
    return x0.copy()


def _auto_diagnostics(problem, reg):
    """(f_fn, grad_fn) closed forms when the prior is a single small Gaussian."""
    if reg.prior.n_components != 1 or reg.prior.dim > _AUTO_DIAG_DIM:
        return None, None
    try:
        forms = SingleGaussianForms(reg)
    except ClosedFormUnavailable:
        return None, None
    f_fn = lambda x: fidelity(problem, x) + forms.value(x)
    grad_fn = lambda x: fidelity_grad(problem, x) + forms.grad(x)
    return f_fn, grad_fn


def run(problem, reg, restorer, cfg, *, psnr_fn=None, f_fn="auto", grad_fn="auto"):
    """Execute the iteration; returns (final iterate, Trace).

    ``f_fn``/``grad_fn`` are optional callables for per-iteration objective
    values and true-gradient norms; "auto" installs the single-Gaussian
    closed forms when available, otherwise those trace columns stay empty.
    """
    ens = reg.ens
    if restorer.base_sigma != ens.sigma:
        raise ValueError(
            f"restorer noise level {restorer.base_sigma} does not match "
            f"ensemble sigma {ens.sigma}"
        )
    if cfg.tau != reg.tau:
        raise ValueError("solver tau must match the regularizer tau")
    if cfg.selection == "fixed" and not 0 <= cfg.fixed_index < ens.size:
        raise ValueError(f"fixed index {cfg.fixed_index} out of range")

    if f_fn == "auto" or grad_fn == "auto":
        auto_f, auto_g = _auto_diagnostics(problem, reg)
        if f_fn == "auto":
            f_fn = auto_f
        if grad_fn == "auto":
            grad_fn = auto_g

    sel_rng, noise_rng = solver_streams(cfg.seed)
    scale = reg.tau / (ens.sigma * ens.sigma)
    t = cfg.iterations
    x = _initial_point(cfg, problem)

    op_index = np.zeros(t, dtype=int)
    step_sq = np.zeros(t)
    grad_hat_norm = np.zeros(t)
    grad_true_norm = np.zeros(t) if grad_fn else None
    f_value = np.zeros(t) if f_fn else None
    psnr_vals = np.zeros(t) if psnr_fn else None
    iterates = np.zeros((t + 1, x.size)) if cfg.record_iterates else None
    if iterates is not None:
        iterates[0] = x
    f_initial = float(f_fn(x)) if f_fn else None

    for k in range(t):
        if grad_true_norm is not None:
            grad_true_norm[k] = np.linalg.norm(grad_fn(x))
        # overflow en route to the divergence check is expected and handled
        with np.errstate(over="ignore", invalid="ignore"):
            if cfg.batch == 1:
                idx = select_operator(cfg.selection, ens, k, sel_rng, cfg.fixed_index)
                H = ens.members[idx]
                s = H.apply(x) + ens.sigma * noise_rng.standard_normal(H.out_dim)
                term = scale * H.gram_apply(x - restorer.restore(s, H))
            else:
                draws = sel_rng.choice(ens.size, size=cfg.batch, p=ens.weights)
                idx = int(draws[0])  # trace records the first draw of the batch
                terms = np.empty((cfg.batch, x.size))
                for i, j in enumerate(draws):
                    H = ens.members[int(j)]
                    s = H.apply(x) + ens.sigma * noise_rng.standard_normal(H.out_dim)
                    terms[i] = scale * H.gram_apply(x - restorer.restore(s, H))
                term = np.mean(terms, axis=0)
            ghat = fidelity_grad(problem, x) + term
            x_new = x - cfg.gamma * ghat
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(k + 1, x)

        op_index[k] = idx
        diff = x_new - x
        step_sq[k] = float(np.dot(diff, diff))
        grad_hat_norm[k] = float(np.linalg.norm(ghat))
        with np.errstate(over="ignore"):
            if f_value is not None:
                f_value[k] = float(f_fn(x_new))
            if psnr_vals is not None:
                psnr_vals[k] = float(psnr_fn(x_new))
        x = x_new
        if iterates is not None:
            iterates[k + 1] = x

    trace = Trace(
        op_index=op_index,
        step_sq=step_sq,
        grad_hat_norm=grad_hat_norm,
        grad_true_norm=grad_true_norm,
        f_value=f_value,
        psnr=psnr_vals,
        f_initial=f_initial,
        x_final=x,
        iterates=iterates,
    )
    return x, trace


# -- convergence audit ---------------------------------------------------------


class AuditError(ValueError):
    """The audit lacks the probes or trace columns it needs."""


@dataclass
class AuditProbes:
    """Probe configuration for the audit's nu² and eps estimates."""

    points: list | None = None  # explicit probe points; default: trajectory
    per_run_points: int = 4
    max_points: int = 32
    mc_variance: int = 40_000
    mc_bias: int = 20_000
    seed: int = 0


@dataclass
class AuditReport:
    L_hat: float
    nu2_hat: float
    epsilon_hat: float
    lhs: float
    rhs: float
    passed: bool
    f_star_hat: float
    f_initial: float
    gamma: float
    iterations: int
    n_runs: int
    slack: float
    term_transient: float
    term_variance: float
    term_bias: float
    curvature_kind: str
    f_star_kind: str
    notes: list = field(default_factory=list)

    def to_text(self):
        lines = [
            f"L_hat: {self.L_hat!r}",
            f"nu2_hat: {self.nu2_hat!r}",
            f"epsilon_hat: {self.epsilon_hat!r}",
            f"lhs: {self.lhs!r}",
            f"rhs: {self.rhs!r}",
            f"pass: {str(self.passed).lower()}",
            f"f_star_hat: {self.f_star_hat!r} ({self.f_star_kind})",
            f"f_initial: {self.f_initial!r}",
            f"gamma: {self.gamma!r}",
            f"iterations: {self.iterations}",
            f"runs: {self.n_runs}",
            f"slack: {self.slack!r}",
            f"term_transient: {self.term_transient!r}",
            f"term_variance: {self.term_variance!r}",
            f"term_bias: {self.term_bias!r}",
            f"curvature_bound: {self.curvature_kind}",
        ]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def to_json_dict(self):
        return {
            "L_hat": self.L_hat,
            "nu2_hat": self.nu2_hat,
            "epsilon_hat": self.epsilon_hat,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "pass": self.passed,
            "f_star_hat": self.f_star_hat,
            "f_star_kind": self.f_star_kind,
            "f_initial": self.f_initial,
            "gamma": self.gamma,
            "iterations": self.iterations,
            "runs": self.n_runs,
            "slack": self.slack,
            "terms": {
                "transient": self.term_transient,
                "variance": self.term_variance,
                "bias": self.term_bias,
            },
            "curvature_bound": self.curvature_kind,
            "notes": list(self.notes),
        }


def _trajectory_probes(runs, probes):
    pts = []
    for _, _, _, _, trace in runs:
        if trace.iterates is None:
            continue
        count = min(probes.per_run_points, len(trace.iterates))
        idx = np.linspace(0, len(trace.iterates) - 1, count).astype(int)
        pts.extend(trace.iterates[i] for i in idx)
    if len(pts) > probes.max_points:
        stride = np.linspace(0, len(pts) - 1, probes.max_points).astype(int)
        pts = [pts[i] for i in stride]
    return pts


def audit_convergence(runs, probes=None, slack=0.05):
    """Check the averaged-gradient bound over a family of identical-config runs.

    ``runs`` is a list of (problem, regularizer, restorer, cfg, trace) tuples
    differing only in seed. All traces must carry true-gradient norms (the
    single-Gaussian closed form provides them automatically).
    """
    if not runs:
        raise AuditError("audit requires at least one run")
    probes = probes or AuditProbes()
    problem, reg, restorer, cfg0, _ = runs[0]
    for p, r, rest, cfg, _ in runs[1:]:
        if p is not problem or r is not reg or rest is not restorer:
            raise AuditError("all runs must share (problem, regularizer, restorer)")
        if cfg.gamma != cfg0.gamma or cfg.iterations != cfg0.iterations:
            raise AuditError("all runs must share gamma and iteration count")

    traces = [t for *_, t in runs]
    if any(t.grad_true_norm is None for t in traces):
        raise AuditError("audit needs grad_true_norm in every trace")
    if any(t.f_initial is None for t in traces):
        raise AuditError("audit needs f values (f_initial) in every trace")

    notes = []
    lhs = float(np.mean([np.mean(t.grad_true_norm ** 2) for t in traces]))

    l_fid = fidelity_lipschitz(problem)
    l_reg, curvature_kind = regularizer_curvature_bound(reg)
    l_hat = l_fid + l_reg
    if curvature_kind == "upper-bound":
        notes.append("regularizer curvature is the (tau/sigma^2)·max||HᵀH|| upper bound")

    points = probes.points if probes.points is not None else _trajectory_probes(
        runs, probes
    )
    points = [np.asarray(p, dtype=float) for p in points]
    if not points:
        raise AuditError(
            "no probe points: pass AuditProbes(points=...) or record iterates"
        )

    rng = np.random.default_rng(np.random.SeedSequence(probes.seed))
    nu2_hat = max(
        variance_probe(problem, reg, restorer, p, probes.mc_variance, rng)
        for p in points
    )
    bias_report = measure_bias(
        restorer, reg.prior, reg.ens, points[: min(len(points), 10)],
        reg.tau, probes.mc_bias, rng,
    )
    eps_hat = bias_report.epsilon_hat
    notes.append(bias_report.note)

    f_initial = float(traces[0].f_initial)
    if reg.prior.n_components == 1:
        try:
            _, f_star = gaussian_objective_minimum(problem, reg)
            f_star_kind = "exact"
        except ClosedFormUnavailable:
            f_star, f_star_kind = None, ""
    else:
        f_star, f_star_kind = None, ""
    if f_star is None:
        candidates = [f_initial]
        for t in traces:
            if t.f_value is not None:
                candidates.append(float(np.min(t.f_value)))
        f_star = min(candidates)
        f_star_kind = "best-observed"
        notes.append(
            "f* replaced by the best observed f, which shrinks the transient "
            "term; the check is conservative"
        )

    gamma, t_iters = cfg0.gamma, cfg0.iterations
    term_transient = 2.0 / (gamma * t_iters) * (f_initial - f_star)
    term_variance = gamma * l_hat * nu2_hat
    term_bias = eps_hat ** 2
    rhs = term_transient + term_variance + term_bias
    passed = bool(lhs <= rhs * (1.0 + slack))

    return AuditReport(
        L_hat=float(l_hat),
        nu2_hat=float(nu2_hat),
        epsilon_hat=float(eps_hat),
        lhs=lhs,
        rhs=float(rhs),
        passed=passed,
        f_star_hat=float(f_star),
        f_initial=f_initial,
        gamma=float(gamma),
        iterations=int(t_iters),
        n_runs=len(runs),
        slack=float(slack),
        term_transient=float(term_transient),
        term_variance=float(term_variance),
        term_bias=float(term_bias),
        curvature_kind=curvature_kind,
        f_star_kind=f_star_kind,
        notes=notes,
    )
