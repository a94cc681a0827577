"""Experiment configuration: a versioned JSON document plus builders that
turn recipe dictionaries into operators, priors, ensembles and restorers.

Everything a run needs is reconstructible from the config alone: random
masks and generated priors embed their own seeds. Validation builds the full
object graph and cross-checks every dimension before any computation runs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import arrayio
from .operators import (
    CircularConvolution,
    Composition,
    ConvexCombination,
    CoordinateMask,
    DegradationEnsemble,
    DenseMatrix,
    DiscreteFourier,
    FoldDownsample,
    Identity,
    Scale,
    masked_fourier,
    random_row_mask,
    uniform_row_mask,
)
from .priors import GmmPrior
from .restoration import Biased, ConstantOffset, ExactMmse, Gain, Smoothing
from .solver import SolverConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    version: int
    name: str
    seed: int
    seeds: list
    output_dir: str
    problem: dict
    prior: dict
    ensemble: dict
    restorer: dict
    solver: dict
    image: dict | None = None
    metrics: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {d.get('version')!r}")
        required = ("name", "seed", "seeds", "output_dir", "problem", "prior",
                    "ensemble", "restorer", "solver")
        missing = [k for k in required if k not in d]
        if missing:
            raise ConfigError(f"missing config keys: {missing}")
        known = set(required) | {"version", "image", "metrics"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(
            version=int(d["version"]),
            name=str(d["name"]),
            seed=int(d["seed"]),
            seeds=[int(s) for s in d["seeds"]],
            output_dir=str(d["output_dir"]),
            problem=d["problem"],
            prior=d["prior"],
            ensemble=d["ensemble"],
            restorer=d["restorer"],
            solver=d["solver"],
            image=d.get("image"),
            metrics=d.get("metrics", {}),
        )

    def to_dict(self):
        d = asdict(self)
        if d["image"] is None:
            d.pop("image")
        return d

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())


# -- operator recipes ------------------------------------------------------------


def _mask_rows(shape, spec):
    if "rows" in spec:
        idx = np.asarray(spec["rows"], dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= shape[0]):
            raise ConfigError(
                f"mask rows out of range [0, {shape[0]}): {spec['rows']!r}"
            )
        rows = np.zeros(shape[0], dtype=bool)
        rows[idx] = True
        return rows
    kind = spec.get("type")
    if kind == "uniform-rows":
        return uniform_row_mask(
            shape[0],
            int(spec["accel"]),
            offset=int(spec.get("offset", 0)),
            acs_lines=int(spec.get("acs_lines", 0)),
        )
    if kind == "random-rows":
        rng = np.random.default_rng(int(spec["seed"]))
        return random_row_mask(
            shape[0], int(spec["accel"]), int(spec.get("acs_lines", 0)), rng
        )
    raise ConfigError(f"unknown mask recipe {spec!r}")


def build_operator(spec):
    """Construct a LinearOperator from its recipe dictionary."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"operator spec needs a 'kind': {spec!r}")
    kind = spec["kind"]
    try:
        if kind == "identity":
            return Identity(int(spec["dim"]))
        if kind == "scale":
            return Scale(int(spec["dim"]), float(spec["factor"]))
        if kind == "coordinate-mask":
            return CoordinateMask(int(spec["dim"]), spec["keep"])
        if kind == "dense-matrix":
            return DenseMatrix(spec["matrix"])
        if kind == "discrete-fourier":
            return DiscreteFourier(spec["shape"])
        if kind == "circular-convolution":
            return CircularConvolution(int(spec["dim"]), spec["kernel"])
        if kind == "fold-downsample":
            return FoldDownsample(int(spec["dim"]), int(spec["factor"]))
        if kind == "composition":
            return Composition([build_operator(s) for s in spec["stages"]])
        if kind == "convex-combo":
            return ConvexCombination(float(spec["alpha"]), build_operator(spec["inner"]))
        if kind == "masked-fourier":
            shape = tuple(int(s) for s in spec["shape"])
            return masked_fourier(shape, _mask_rows(shape, spec["mask"]))
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad operator spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown operator kind {kind!r}")


# -- prior recipes ----------------------------------------------------------------


def smooth_random_field(shape, rng, decay=1.5):
    """Random complex field with a power-law radial spectrum, peak-normalized."""
    h, w = shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.sqrt(fy ** 2 + fx ** 2)
    envelope = 1.0 / (1.0 + (radius / (1.0 / max(h, w))) ** decay)
    spectrum = envelope * (
        rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    )
    field = np.fft.ifft2(spectrum)
    return field / np.max(np.abs(field))


def build_prior(spec):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"prior spec needs a 'type': {spec!r}")
    kind = spec["type"]
    if kind == "explicit":
        means = spec["means"]
        if isinstance(means, dict) and "file" in means:
            arr = arrayio.read_array(means["file"])
            means = np.atleast_2d(arr)
        return GmmPrior(spec["weights"], means, spec["covariances"])
    if kind == "gmm-recipe":
        rng = np.random.default_rng(int(spec["seed"]))
        k = int(spec["components"])
        cov_scale = float(spec["cov_scale"])
        if "shape" in spec:  # complex image prior, interleaved storage
            shape = tuple(int(s) for s in spec["shape"])
            decay = float(spec.get("smoothness", 1.5))
            means = []
            for _ in range(k):
                field = smooth_random_field(shape, rng, decay=decay)
                re = field.real.ravel()
                im = field.imag.ravel()
                mean = np.empty(2 * re.size)
                mean[0::2] = re
                mean[1::2] = im
                means.append(mean)
            means = np.stack(means)
        else:
            dim = int(spec["dim"])
            mean_scale = float(spec.get("mean_scale", 1.0))
            means = mean_scale * rng.standard_normal((k, dim))
        weights = np.full(k, 1.0 / k)
        covs = [np.asarray(cov_scale ** 2) for _ in range(k)]
        return GmmPrior(weights, means, covs)
    raise ConfigError(f"unknown prior type {kind!r}")


# -- ensemble / restorer / solver recipes ------------------------------------------


def build_ensemble(spec):
    try:
        members = [build_operator(s) for s in spec["members"]]
        return DegradationEnsemble(
            members, sigma=float(spec["sigma"]), weights=spec.get("weights")
        )
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad ensemble spec: {exc}") from exc


def build_restorer(spec, prior, sigma):
    kind = spec.get("type")
    if kind == "exact-mmse":
        return ExactMmse(prior, sigma)
    if kind == "biased":
        inner = build_restorer(spec["inner"], prior, sigma)
        pspec = spec["perturbation"]
        pkind = pspec.get("type")
        if pkind == "constant-offset":
            offset = pspec["offset"]
            if np.isscalar(offset):
                offset = np.full(prior.dim, float(offset))
            return Biased(inner, ConstantOffset(offset))
        if pkind == "gain":
            return Biased(inner, Gain(float(pspec["lam"])))
        if pkind == "smoothing":
            return Biased(inner, Smoothing(int(pspec["strength"])))
        raise ConfigError(f"unknown perturbation type {pkind!r}")
    raise ConfigError(f"unknown restorer type {kind!r}")


def build_solver_config(spec, tau, seed):
    sel = spec.get("selection", {"strategy": "iid-by-weights"})
    if isinstance(sel, str):
        sel = {"strategy": sel}
    x0 = spec.get("x0", "adjoint")
    if isinstance(x0, list):
        x0 = np.asarray(x0, dtype=float)
    try:
        return SolverConfig(
            gamma=float(spec["gamma"]),
            tau=float(tau),
            iterations=int(spec["iterations"]),
            selection=sel["strategy"],
            fixed_index=int(sel.get("index", 0)),
            batch=int(spec.get("batch", 1)),
            seed=int(seed),
            x0=x0,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad solver spec: {exc}") from exc


# -- full experiment assembly --------------------------------------------------


@dataclass
class BuiltExperiment:
    cfg: ExperimentConfig
    A: object
    prior: GmmPrior
    ensemble: DegradationEnsemble
    restorer: object
    tau: float
    noise_sigma: float
    ground_truth: dict
    image_shape: tuple | None
    image_complex: bool


def build_experiment(cfg):
    """Build and cross-validate every component named by the config."""
    try:
        A = build_operator(cfg.problem["operator"])
        prior = build_prior(cfg.prior)
        ensemble = build_ensemble(cfg.ensemble)
        tau = float(cfg.solver["tau"])
        restorer = build_restorer(cfg.restorer, prior, ensemble.sigma)
        gt = cfg.problem.get("ground_truth", {"source": "prior"})
        noise_sigma = float(cfg.problem.get("noise_sigma", 0.0))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"incomplete config: {exc}") from exc

    if A.in_dim != prior.dim:
        raise ConfigError(
            f"measurement operator in_dim {A.in_dim} != prior dim {prior.dim}"
        )
    if ensemble.in_dim != prior.dim:
        raise ConfigError(
            f"ensemble in_dim {ensemble.in_dim} != prior dim {prior.dim}"
        )
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")
    if gt.get("source") == "file":
        path = gt.get("path")
        if not path:
            raise ConfigError("ground_truth.source=file needs a path")
        arr = arrayio.read_array(path)
        if arr.size != prior.dim:
            raise ConfigError(
                f"ground truth file has {arr.size} values, prior dim is {prior.dim}"
            )
    elif gt.get("source", "prior") != "prior":
        raise ConfigError(f"unknown ground truth source {gt.get('source')!r}")

    image_shape = None
    image_complex = False
    if cfg.image:
        image_shape = tuple(int(s) for s in cfg.image["shape"])
        image_complex = bool(cfg.image.get("complex", False))
        expected = int(np.prod(image_shape)) * (2 if image_complex else 1)
        if expected != prior.dim:
            raise ConfigError(
                f"image spec implies vectors of length {expected}, prior dim is "
                f"{prior.dim}"
            )

    # instantiating the per-seed SolverConfig also validates the solver block
    build_solver_config(cfg.solver, tau, cfg.seed)

    return BuiltExperiment(
        cfg=cfg,
        A=A,
        prior=prior,
        ensemble=ensemble,
        restorer=restorer,
        tau=tau,
        noise_sigma=noise_sigma,
        ground_truth=gt,
        image_shape=image_shape,
        image_complex=image_complex,
    )
