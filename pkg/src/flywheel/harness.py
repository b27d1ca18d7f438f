"""Experiment orchestration: warm-up, flywheel cycles, ablations, artifacts.

One cycle runs, in order:

1. main E-step (cleanness posterior from ``g``)
2. auxiliary E-step (true-class posterior from the pre-training ``f``)
3. train ``f`` on soft targets, estimate T and T_c, update eps, resample labels
4. update gamma, train ``g`` on the resampled labels with the regularizer

Training code only ever sees ``data.hide_truth()``; true labels are used
for metrics alone.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import aux_em, main_em
from .aux_em import AuxCycleConfig
from .core import MixtureState, NoisyDataset, NumericalAbort, clamp_gamma
from .datagen import (GeneratorSpec, NoiseSpec, generate, ground_truth_T,
                      ground_truth_Tc, inject, load_dataset)
from .main_em import MainCycleConfig
from .metrics import (CycleMetrics, refurbishment_accuracy, selection_auc,
                      t_estimation_error, test_accuracy)
from .model import (Classifier, OptimizerConfig, OptState, init_classifier,
                    predict_proba, run_epoch, save_checkpoint, weighted_ce)

log = logging.getLogger(__name__)

ABLATIONS = ("no_cr", "no_aux", "eps_fixed")
VARIANTS = ("full",) + ABLATIONS
OUTPUT_ROOT_ENV = "FLYWHEEL_OUTPUT_ROOT"
PARTIAL_MARKER = "PARTIAL_RUN"


class ConfigError(ValueError):
    """Invalid experiment configuration; reported before any compute."""


@dataclass(frozen=True)
class DataConfig:
    kind: str = "gaussian_blobs"
    n_classes: int = 4
    n_samples: int = 4000
    n_test: int = 1000
    dim: int = 2
    separation: float = 4.0
    path: Optional[str] = None
    test_path: Optional[str] = None


@dataclass(frozen=True)
class NetworkConfig:
    arch: str = "linear"
    hidden: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = DataConfig()
    noise: NoiseSpec = NoiseSpec()
    network: NetworkConfig = NetworkConfig()
    main: MainCycleConfig = MainCycleConfig()
    aux: AuxCycleConfig = AuxCycleConfig()
    opt_main: OptimizerConfig = OptimizerConfig()
    opt_aux: OptimizerConfig = OptimizerConfig()
    warmup_epochs: int = 10
    cycles: int = 50
    seed: int = 0
    output_dir: Optional[str] = None
    ablations: tuple = ()
    plots: bool = False


_SECTIONS = {
    "data": DataConfig, "noise": NoiseSpec, "network": NetworkConfig,
    "main": MainCycleConfig, "aux": AuxCycleConfig,
    "opt_main": OptimizerConfig, "opt_aux": OptimizerConfig,
}


def _parse_scalar(text: str):
    return yaml.safe_load(text)


def set_path(d: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted key such as ``noise.rate``."""
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"{dotted}: {k} is not a section")
    cur[keys[-1]] = value


def config_from_dict(raw: dict, overrides=()) -> ExperimentConfig:
    """Build and validate a config from nested dicts plus ``key=value`` overrides."""
    raw = copy.deepcopy(raw or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        set_path(raw, key.strip(), _parse_scalar(text))
    top_fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - top_fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    try:
        for name, cls in _SECTIONS.items():
            section = raw.pop(name, None) or {}
            if not isinstance(section, dict):
                raise ConfigError(f"{name} must be a mapping")
            allowed = {f.name for f in dataclasses.fields(cls)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
            kwargs[name] = cls(**section)
        if "ablations" in raw:
            raw["ablations"] = tuple(raw["ablations"] or ())
        kwargs.update(raw)
        cfg = ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return resolve_ablations(cfg)


def resolve_ablations(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check bounds and make the ablation switches and cycle configs agree."""
    if cfg.warmup_epochs < 1:
        raise ConfigError("warmup_epochs must be at least 1")
    if cfg.cycles < 1:
        raise ConfigError("cycles must be at least 1")
    abl = set(cfg.ablations)
    bad = abl - set(ABLATIONS)
    if bad:
        raise ConfigError(f"unknown ablations {sorted(bad)}; choose from {ABLATIONS}")
    if cfg.main.mode == "reweight":
        abl.add("no_aux")
    if cfg.main.epsilon_mode == "fixed_uniform":
        abl.add("eps_fixed")
    main = cfg.main
    if "no_aux" in abl:
        main = dataclasses.replace(main, mode="reweight")
    if "no_cr" in abl:
        main = dataclasses.replace(main, lambda_cr=0.0)
    if "eps_fixed" in abl:
        main = dataclasses.replace(main, epsilon_mode="fixed_uniform")
    d = cfg.data
    if d.path is None:
        try:
            GeneratorSpec(d.kind, d.n_classes, d.n_samples, d.dim, d.separation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if d.n_test < 1:
            raise ConfigError("n_test must be positive")
        if cfg.opt_main.batch_size > d.n_samples or cfg.opt_aux.batch_size > d.n_samples:
            raise ConfigError("batch_size exceeds the number of training samples")
    if cfg.network.arch not in ("linear", "mlp"):
        raise ConfigError(f"unknown network arch {cfg.network.arch!r}")
    if cfg.network.arch == "mlp" and cfg.network.hidden < 1:
        raise ConfigError("mlp network needs hidden >= 1")
    return dataclasses.replace(cfg, main=main,
                               ablations=tuple(a for a in ABLATIONS if a in abl))


def load_config(path=None, overrides=()) -> ExperimentConfig:
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, overrides)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["ablations"] = list(cfg.ablations)
    if d["noise"]["mapping"] is not None:
        d["noise"]["mapping"] = [int(m) for m in d["noise"]["mapping"]]
    return d


def default_output_dir(name="run") -> str:
    return str(Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name)


# ---------------------------------------------------------------- state


@dataclass
class Streams:
    """Independent random streams derived from the experiment seed."""

    seed: int

    def __post_init__(self):
        kids = np.random.SeedSequence(self.seed).spawn(9)
        as_int = [int(k.generate_state(1)[0]) for k in kids]
        self.train_data, self.test_data, self.init_g, self.init_f = as_int[:4]
        self.noise = np.random.default_rng(kids[4])
        self.warmup = np.random.default_rng(kids[5])
        self.main = np.random.default_rng(kids[6])
        self.aux = np.random.default_rng(kids[7])
        self.aug = np.random.default_rng(kids[8])


@dataclass
class FlywheelState:
    g: Classifier
    f: Classifier
    mix: MixtureState
    opt_g: OptState
    opt_f: OptState
    streams: Streams
    scale: np.ndarray
    cycle: int = 0
    resampled: Optional[np.ndarray] = None


def prepare_data(cfg: ExperimentConfig, streams: Streams):
    """Return ``(train, test)``; train carries injected noise and true labels."""
    d = cfg.data
    if d.path is not None:
        train = load_dataset(d.path, d.n_classes)
        test = load_dataset(d.test_path, train.K) if d.test_path else None
        if train.true_labels is not None and np.array_equal(train.true_labels,
                                                            train.noisy_labels):
            train = inject(train, cfg.noise, streams.noise)
        return train, test
    spec = GeneratorSpec(d.kind, d.n_classes, d.n_samples, d.dim, d.separation,
                         streams.train_data)
    train = inject(generate(spec), cfg.noise, streams.noise)
    test = generate(dataclasses.replace(spec, n_samples=d.n_test, seed=streams.test_data))
    return train, test


def _ce_epoch(c, X, labels, opt, state, rng):
    T = np.zeros((labels.size, c.n_classes))
    T[np.arange(labels.size), labels] = 1.0

    def batch_loss(net, idx):
        return weighted_ce(net, X[idx], T[idx])

    return run_epoch(c, labels.size, batch_loss, opt, state, rng)


def warmup(g: Classifier, f: Classifier, data: NoisyDataset, cfg: ExperimentConfig,
           streams: Optional[Streams] = None, opt_g: Optional[OptState] = None,
           opt_f: Optional[OptState] = None):
    """Plain cross-entropy on the observed labels for both networks.

    gamma starts at the training accuracy of ``f`` against the observed
    labels (clamped); every eps starts at 1/K. Optimizer states passed in
    are advanced in place so momentum carries into the cycles.

    Returns ``(g, f, MixtureState)``.
    """
    streams = Streams(cfg.seed) if streams is None else streams
    opt_g = OptState() if opt_g is None else opt_g
    opt_f = OptState() if opt_f is None else opt_f
    X, y = data.features, data.noisy_labels
    for _ in range(cfg.warmup_epochs):
        g, _ = _ce_epoch(g, X, y, cfg.opt_main, opt_g, streams.warmup)
        f, _ = _ce_epoch(f, X, y, cfg.opt_aux, opt_f, streams.warmup)
    return g, f, MixtureState.uniform(initial_gamma(f, data), data.N, data.K)


def initial_gamma(f: Classifier, data: NoisyDataset) -> float:
    """Training accuracy of ``f`` against the observed labels, clamped."""
    pred = np.argmax(predict_proba(f, data.features), axis=1)
    return clamp_gamma(float(np.mean(pred == data.noisy_labels)))


def start(cfg: ExperimentConfig, data: NoisyDataset, streams: Optional[Streams] = None
          ) -> FlywheelState:
    """Fresh networks, warm-up, and the state the first cycle starts from."""
    if data.true_labels is not None:
        raise ValueError("training data must not carry true labels")
    streams = Streams(cfg.seed) if streams is None else streams
    g, f = build_networks(cfg, data.d, data.K, streams)
    opt_g, opt_f = OptState(), OptState()
    g, f, mix = warmup(g, f, data, cfg, streams, opt_g, opt_f)
    return FlywheelState(g, f, mix, opt_g, opt_f, streams,
                         aux_em.feature_scale(data.features))


def run_cycle(state: FlywheelState, data: NoisyDataset, cfg: ExperimentConfig,
              evaluation: Optional[dict] = None):
    """Advance one flywheel cycle.

    ``data`` must not carry true labels. ``evaluation`` optionally holds
    ``train`` (with truth), ``test``, and ``gt_T`` for metrics.
    Returns ``(state, CycleMetrics, matrices)`` where ``matrices`` maps
    ``"T"``/``"Tc"`` to the estimates (absent under ``no_aux``).
    """
    if data.true_labels is not None:
        raise ValueError("training data must not carry true labels")
    X, y, K = data.features, data.noisy_labels, data.K
    s = state.streams
    mcfg = cfg.main
    g, f, mix = state.g, state.f, state.mix
    extra = {}
    matrices = {}

    clean_prob = main_em.e_step(g, data, mix)
    if mcfg.mode == "reweight":
        gamma = main_em.update_gamma(clean_prob)
        g, state.opt_g, loss_g = main_em.train_main(
            g, X, y, mcfg, cfg.opt_main, s.main, state.opt_g, clean_prob)
        new_mix = MixtureState(gamma, mix.epsilons)
        infer = g
    else:
        class_post, f_outs = aux_em.aux_e_step(f, data, clean_prob, cfg.aux, s.aug,
                                               state.scale)
        f, state.opt_f, loss_f = aux_em.train_aux(
            f, data, class_post, cfg.aux, cfg.opt_aux, s.aux, state.opt_f, s.aug,
            state.scale)
        Tc = aux_em.estimate_Tc(clean_prob, f_outs, y)
        T = aux_em.estimate_T(class_post, y)
        matrices = {"T": T, "Tc": Tc}
        if mcfg.epsilon_mode == "adaptive":
            eps = aux_em.epsilon_update(predict_proba(f, X), Tc, y)
        else:
            eps = mix.epsilons
        resampled = aux_em.resample_labels(f, X)
        gamma = main_em.update_gamma(clean_prob)
        g, state.opt_g, loss_g = main_em.train_main(
            g, X, resampled, mcfg, cfg.opt_main, s.main, state.opt_g)
        new_mix = MixtureState(gamma, eps)
        state.resampled = resampled
        infer = f
        extra.update(loss_aux=loss_f, tc_flagged_rows=list(Tc.flagged_rows),
                     t_flagged_rows=list(T.flagged_rows))

    extra.update(
        loss_main=loss_g,
        mean_clean_prob=float(np.mean(clean_prob)),
        m_step_objective=main_em.m_step_objective(
            g, data, MixtureState(gamma, mix.epsilons), clean_prob),
        eps_mean=_exact_mean(new_mix.epsilons),
        eps_min=float(np.min(new_mix.epsilons)),
        eps_max=float(np.max(new_mix.epsilons)),
    )
    extra["m_step_objective_finite"] = math.isfinite(extra["m_step_objective"])
    if not extra["m_step_objective_finite"]:
        extra["m_step_objective"] = None

    state.g, state.f, state.mix = g, f, new_mix
    state.cycle += 1

    auc = refurb = test_acc = t_l1 = math.nan
    if evaluation is not None:
        train_full = evaluation.get("train")
        if train_full is not None and train_full.true_labels is not None:
            end_prob = main_em.e_step(g, data, new_mix)
            auc = selection_auc(end_prob, train_full.is_clean())
            refurb = refurbishment_accuracy(infer, train_full)
            if matrices:
                gt_T = evaluation.get("gt_T") or ground_truth_T(train_full)
                gt_Tc = evaluation.get("gt_Tc") or ground_truth_Tc(train_full)
                t_l1 = t_estimation_error(matrices["Tc"], gt_T)
                extra["t_all_row_l1"] = t_estimation_error(matrices["T"], gt_T)
                extra["tc_corrupt_row_l1"] = t_estimation_error(matrices["Tc"], gt_Tc)
        if evaluation.get("test") is not None:
            test_acc = test_accuracy(infer, evaluation["test"])
    extra["auc_defined"] = not math.isnan(auc)
    metrics = CycleMetrics(
        cycle=state.cycle, gamma=new_mix.gamma, selection_auc=auc, refurb_acc=refurb,
        test_acc=test_acc, t_row_l1=t_l1,
        mix_ll=main_em.mixture_log_likelihood(g, data, new_mix), extra=extra)
    return state, metrics, matrices


def _exact_mean(v) -> float:
    # offset by the minimum so a constant vector reports its value exactly
    lo = float(np.min(v))
    return lo + math.fsum(np.asarray(v) - lo) / len(v)


def build_networks(cfg: ExperimentConfig, d: int, K: int, streams: Streams):
    net = cfg.network
    g = init_classifier(net.arch, d, K, net.hidden, streams.init_g)
    f = init_classifier(net.arch, d, K, net.hidden, streams.init_f)
    return g, f


# ---------------------------------------------------------------- output


def write_matrix_csv(path, T) -> None:
    E = T.entries if hasattr(T, "entries") else np.asarray(T)
    K = E.shape[0]
    lines = ["true\\observed," + ",".join(str(k + 1) for k in range(K))]
    for y in range(K):
        lines.append(str(y + 1) + "," + ",".join("%.17g" % v for v in E[y]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = Path(path).read_text().strip().splitlines()[1:]
    return np.array([[float(v) for v in r.split(",")[1:]] for r in rows])


def _summarize(records, cfg):
    keys = ("test_acc", "selection_auc", "refurb_acc", "t_row_l1", "gamma", "mix_ll")
    final = records[-1]
    summary = {"cycles": len(records), "seed": cfg.seed,
               "ablations": list(cfg.ablations), "final": {}, "best": {}}
    for k in keys:
        vals = [r[k] for r in records if r.get(k) is not None]
        summary["final"][k] = final.get(k)
        if vals:
            summary["best"][k] = min(vals) if k == "t_row_l1" else max(vals)
    return summary


def run_experiment(cfg: ExperimentConfig, output_dir=None, data=None) -> dict:
    """Run warm-up plus ``cfg.cycles`` cycles and write every artifact.

    Files written to the output directory: ``config.yaml`` (resolved config),
    ``metrics.jsonl`` (one record per cycle), ``matrices/`` (T and T_c CSV per
    cycle), ``checkpoints/{g,f}.ckpt``, ``summary.json``, and optional SVGs.
    An aborted run leaves a ``PARTIAL_RUN`` marker with the error.

    ``data`` may supply a prepared ``(train, test)`` pair.
    """
    cfg = resolve_ablations(cfg)
    out = Path(output_dir or cfg.output_dir or default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    (out / "matrices").mkdir(exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    marker = out / PARTIAL_MARKER
    if marker.exists():
        marker.unlink()
    (out / "config.yaml").write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))

    metrics_path = out / "metrics.jsonl"
    records = []
    try:
        streams = Streams(cfg.seed)
        train, test = prepare_data(cfg, streams) if data is None else data
        hidden = train.hide_truth()
        evaluation = {"train": train, "test": test}
        if train.true_labels is not None:
            evaluation["gt_T"] = ground_truth_T(train)
            evaluation["gt_Tc"] = ground_truth_Tc(train)
            write_matrix_csv(out / "matrices" / "T_ground_truth.csv", evaluation["gt_T"])
        state = start(cfg, hidden, streams)
        with open(metrics_path, "w") as fh:
            for _ in range(cfg.cycles):
                state, m, mats = run_cycle(state, hidden, cfg, evaluation)
                rec = m.to_record()
                records.append(rec)
                fh.write(json.dumps(rec) + "\n")
                for name, T in mats.items():
                    write_matrix_csv(out / "matrices" / f"{name}_cycle_{state.cycle:04d}.csv", T)
                log.info("cycle %d gamma=%.4f auc=%s test=%s", state.cycle, m.gamma,
                         rec["selection_auc"], rec["test_acc"])
        save_checkpoint(out / "checkpoints" / "g.ckpt", state.g)
        save_checkpoint(out / "checkpoints" / "f.ckpt", state.f)
    except Exception as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\ncycles completed: {len(records)}\n")
        raise
    summary = _summarize(records, cfg)
    summary["inference_network"] = "g" if "no_aux" in cfg.ablations else "f"
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if cfg.plots:
        from .plots import write_plots
        write_plots(out, records)
    return summary


def reference_accuracy(cfg: ExperimentConfig, train: NoisyDataset, test: NoisyDataset,
                       epochs: Optional[int] = None) -> float:
    """Test accuracy of a network trained with plain CE on the true labels.

    Uses the auxiliary network's architecture, initialization, and optimizer,
    for ``warmup_epochs + cycles`` epochs unless ``epochs`` is given.
    """
    if train.true_labels is None:
        raise ValueError("reference training needs true labels")
    streams = Streams(cfg.seed)
    _, f = build_networks(cfg, train.d, train.K, streams)
    epochs = cfg.warmup_epochs + cfg.cycles if epochs is None else epochs
    st = OptState()
    for _ in range(epochs):
        f, _ = _ce_epoch(f, train.features, train.true_labels, cfg.opt_aux, st,
                         streams.warmup)
    return test_accuracy(f, test)


def variant_config(cfg: ExperimentConfig, variant: str, seed: int) -> ExperimentConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    abl = () if variant == "full" else (variant,)
    base = dataclasses.replace(cfg.main, mode="resample", epsilon_mode="adaptive")
    return resolve_ablations(dataclasses.replace(cfg, main=base, ablations=abl, seed=seed))


def ablate(cfg: ExperimentConfig, seeds, variants=VARIANTS, output_dir=None) -> dict:
    """Run each variant on each seed; report mean and std of final test accuracy."""
    out = Path(output_dir or cfg.output_dir or default_output_dir("ablate"))
    table = {}
    for v in variants:
        accs = []
        for s in seeds:
            summary = run_experiment(variant_config(cfg, v, s), out / v / f"seed_{s}")
            accs.append(summary["final"]["test_acc"])
        table[v] = {"test_acc": accs, "mean": float(np.mean(accs)),
                    "std": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0}
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(table, indent=2) + "\n")
    lines = ["variant,mean_test_acc,std_test_acc"]
    lines += [f"{v},{r['mean']:.6f},{r['std']:.6f}" for v, r in table.items()]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return table


__all__ = [
    "ABLATIONS", "VARIANTS", "ConfigError", "DataConfig", "ExperimentConfig",
    "FlywheelState", "NetworkConfig", "NumericalAbort", "Streams", "ablate",
    "config_from_dict", "config_to_dict", "initial_gamma", "load_config",
    "prepare_data", "reference_accuracy", "run_cycle", "run_experiment", "start",
    "warmup",
]
