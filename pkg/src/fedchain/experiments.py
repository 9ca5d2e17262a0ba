"""Scripted desk-scale experiment runs, their reports, and report writers.

Four experiments, each a multi-seed sweep over the simulator plus a
sequential centralized baseline where called for:

* benchmark:    centralized training (7 epochs per iteration) vs the
                7-trainer / 3-validator decentralized system.
* ratio_sweep:  every trainers:validators split of 10 agents, best split
                and convergence iteration per split.
* scoring:      reward-penalty policy on vs uniform trust, with per-trainer
                noise sigma_i = 0.0545 * i.
* sync_schemes: BSP / SSP / BAP(1.0) / BAP(0.6) for a fixed round budget
                and again for a fixed virtual-time budget.

Reports are plain data; writing CSVs and figures happens in `write_*`
helpers so reruns stay bit-identical per (config, seeds).
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace

from . import learner, simulation
from .config import SimConfig, StopRounds, StopTime, SyntheticSpec
from .learner import LearnerConfig
from .metrics import MetricsLog
from .netsim import NodeBehavior

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
NOISE_COEFF = 0.0545            # per-trainer-index noise stddev slope
EXP3_PACES = (1.0, 1.1, 1.25, 1.4, 1.6, 3.0)


def base_config(seed: int, **overrides) -> SimConfig:
    """Shared experiment defaults; overrides are per-experiment setup."""
    cfg = SimConfig(seed=seed,
                    synthetic=SyntheticSpec(),
                    scheme="BSP", period=100.0,
                    step_time=5.0,
                    stop=StopRounds(30))
    return replace(cfg, **overrides)


def _median(values):
    return statistics.median(values)


# -- benchmark: centralized vs decentralized -----------------------------------------

def centralized_series(cfg: SimConfig, iterations: int = 30,
                       epochs_per_iteration: int = 7) -> list:
    """Sequential baseline: one learner, the whole training pool."""
    master = simulation.build_master_dataset(cfg)
    train, _val, evalset = simulation.split_pools(master, cfg)
    lcfg = LearnerConfig(model_arch=cfg.model_arch, hidden_size=cfg.hidden_size,
                         learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                         l2=cfg.l2, init_scale=cfg.init_scale, seed=cfg.seed)
    params = learner.init_params(lcfg, train.d, train.n_classes)
    spe = learner.steps_per_epoch(train.n, cfg.batch_size)
    accs = []
    for it in range(iterations):
        for ep in range(epochs_per_iteration):
            upd = learner.compute_gradient_steps(params, train, lcfg, spe,
                                                 round_id=it, segment=ep)
            params = params + upd.delta
        accs.append(learner.evaluate(params, evalset, lcfg))
    return accs


@dataclass
class BenchmarkReport:
    seeds: tuple
    centralized: dict           # seed -> list of 30 accuracies
    decentralized: dict         # seed -> MetricsLog
    iterations: int = 30

    def final_gap(self, seed) -> float:
        return (self.decentralized[seed].final_accuracy()
                - self.centralized[seed][-1])

    def median_abs_final_gap(self) -> float:
        return _median([abs(self.final_gap(s)) for s in self.seeds])


def run_benchmark(seeds=DEFAULT_SEEDS, iterations: int = 30) -> BenchmarkReport:
    central, decentral = {}, {}
    for seed in seeds:
        cfg = base_config(seed, n_trainers=7, n_validators=3,
                          stop=StopRounds(iterations))
        central[seed] = centralized_series(cfg, iterations=iterations)
        decentral[seed] = simulation.run(cfg)
    return BenchmarkReport(seeds=tuple(seeds), centralized=central,
                           decentralized=decentral, iterations=iterations)


# -- experiment 1: trainers-to-validators ratio ----------------------------------------

@dataclass
class SweepRow:
    trainers: int
    validators: int
    max_accuracy: float         # median over seeds
    argmax_iteration: int       # median over seeds, 1-based
    per_seed: dict = field(default_factory=dict)


@dataclass
class RatioSweepReport:
    n_agents: int
    seeds: tuple
    rows: list                  # SweepRow per split, ascending trainers

    def best_split(self) -> SweepRow:
        return max(self.rows, key=lambda r: r.max_accuracy)

    def row_for(self, trainers: int) -> SweepRow:
        return next(r for r in self.rows if r.trainers == trainers)


def run_ratio_sweep(seeds=DEFAULT_SEEDS, n_agents: int = 10,
                    rounds: int = 30) -> RatioSweepReport:
    """All t + v = n_agents splits under an all-trainers-submit barrier."""
    rows = []
    for t in range(1, n_agents):
        v = n_agents - t
        per_seed = {}
        for seed in seeds:
            cfg = base_config(seed, n_trainers=t, n_validators=v,
                              scheme="BAP", majority_ratio=1.0,
                              stop=StopRounds(rounds))
            log = simulation.run(cfg)
            per_seed[seed] = log.max_accuracy()
        rows.append(SweepRow(
            trainers=t, validators=v,
            max_accuracy=_median([a for a, _ in per_seed.values()]),
            argmax_iteration=int(_median([it for _, it in per_seed.values()])),
            per_seed=per_seed))
    return RatioSweepReport(n_agents=n_agents, seeds=tuple(seeds), rows=rows)


# -- experiment 2: reward-penalty policy ------------------------------------------------

def noisy_behaviors(n_trainers: int, coeff: float = NOISE_COEFF) -> tuple:
    """sigma_i = coeff * trainer index; trainer 0 stays clean."""
    return tuple(NodeBehavior(profile="noisy", sigma=coeff * i) if i else NodeBehavior()
                 for i in range(n_trainers))


@dataclass
class ScoringReport:
    seeds: tuple
    scoring: dict               # seed -> MetricsLog (policy on)
    uniform: dict               # seed -> MetricsLog (control)

    def phi_series(self, seed, trainer_id) -> list:
        return [row.phi[trainer_id] for row in self.scoring[seed].rows]

    def seeds_where_scoring_wins(self) -> list:
        return [s for s in self.seeds
                if self.scoring[s].final_accuracy() >= self.uniform[s].final_accuracy()]


def run_scoring(seeds=DEFAULT_SEEDS, rounds: int = 30) -> ScoringReport:
    scoring, uniform = {}, {}
    for seed in seeds:
        common = dict(n_trainers=6, n_validators=3,
                      behaviors=noisy_behaviors(6),
                      accept_tolerance=1.0,     # threshold reduced so noise reaches the model
                      period=200.0,             # ample period: every trainer submits each round
                      stop=StopRounds(rounds))
        scoring[seed] = simulation.run(base_config(seed, scoring_enabled=True, **common))
        uniform[seed] = simulation.run(base_config(seed, scoring_enabled=False, **common))
    return ScoringReport(seeds=tuple(seeds), scoring=scoring, uniform=uniform)


# -- experiment 3: synchronization schemes ------------------------------------------------

SCHEME_CONFIGS = (
    ("BSP", dict(scheme="BSP")),
    ("SSP", dict(scheme="SSP", max_extension_steps=6)),
    ("BAP_1.0", dict(scheme="BAP", majority_ratio=1.0)),
    ("BAP_0.6", dict(scheme="BAP", majority_ratio=0.6)),
)


@dataclass
class SyncSchemesReport:
    seeds: tuple
    fixed_rounds: dict          # scheme -> {seed: MetricsLog}
    fixed_time: dict            # scheme -> {seed: MetricsLog}
    rounds: int
    duration: float

    def median_accuracy_at_end(self, scheme) -> float:
        return _median([log.final_accuracy() for log in self.fixed_rounds[scheme].values()])

    def median_rounds_completed(self, scheme) -> float:
        return _median([log.rounds_completed() for log in self.fixed_time[scheme].values()])


def run_sync_schemes(seeds=DEFAULT_SEEDS, rounds: int = 30,
                     duration: float = 2400.0) -> SyncSchemesReport:
    """Four configurations, each for a round budget and a time budget.

    Paces span 1x-3x; the period is set so most (paces up to 1.6x) but not
    all trainers finish one 16-step job inside it: job = 16 * 3.75 = 60
    virtual units at pace 1, against a period of 100.
    """
    behaviors = tuple(NodeBehavior(pace_multiplier=p) for p in EXP3_PACES)
    fixed_rounds = {name: {} for name, _ in SCHEME_CONFIGS}
    fixed_time = {name: {} for name, _ in SCHEME_CONFIGS}
    for name, overrides in SCHEME_CONFIGS:
        for seed in seeds:
            common = dict(n_trainers=6, n_validators=3, behaviors=behaviors,
                          scoring_enabled=False,      # uniform trust policy
                          accept_tolerance=1.0, steps_per_round=16,
                          step_time=3.75, period=100.0,
                          # slow ramp from a seeded random start, so accuracy
                          # at a fixed round count reflects utilized steps
                          learning_rate=0.015, init_scale=1.0, **overrides)
            fixed_rounds[name][seed] = simulation.run(
                base_config(seed, stop=StopRounds(rounds), **common))
            fixed_time[name][seed] = simulation.run(
                base_config(seed, stop=StopTime(duration), **common))
    return SyncSchemesReport(seeds=tuple(seeds), fixed_rounds=fixed_rounds,
                             fixed_time=fixed_time, rounds=rounds, duration=duration)


# -- report writers: CSVs plus figures in one output directory ---------------------------

def _series_median(series_per_seed) -> list:
    """Per-index median across equally long series."""
    length = min(len(s) for s in series_per_seed)
    return [_median([s[i] for s in series_per_seed]) for i in range(length)]


def _write(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def write_benchmark(report: BenchmarkReport, out_dir, render_figures: bool = True):
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["seed,centralized_final,decentralized_final,gap"]
    for s in report.seeds:
        c = report.centralized[s][-1]
        d = report.decentralized[s].final_accuracy()
        lines.append(f"{s},{c!r},{d!r},{d - c!r}")
        report.decentralized[s].write_csv(out / f"benchmark_decentralized_seed{s}.csv")
        rows = "\n".join(f"{i + 1},{a!r}" for i, a in enumerate(report.centralized[s]))
        _write(out / f"benchmark_centralized_seed{s}.csv", "iteration,accuracy\n" + rows + "\n")
    lines.append(f"median_abs_gap,,,{report.median_abs_final_gap()!r}")
    _write(out / "benchmark_summary.csv", "\n".join(lines) + "\n")
    if render_figures:
        from . import figures
        figures.accuracy_figure(
            {"centralized": _series_median([report.centralized[s] for s in report.seeds]),
             "decentralized": _series_median(
                 [report.decentralized[s].accuracies() for s in report.seeds])},
            out / "benchmark.png",
            "centralized vs decentralized (median of seeds)", xlabel="iteration")


def write_ratio_sweep(report: RatioSweepReport, out_dir, render_figures: bool = True):
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["trainers,validators,median_max_accuracy,median_argmax_iteration"]
    for row in report.rows:
        lines.append(f"{row.trainers},{row.validators},{row.max_accuracy!r},{row.argmax_iteration}")
    best = report.best_split()
    lines.append(f"best_split,{best.trainers}:{best.validators},,")
    _write(out / "ratio_sweep_summary.csv", "\n".join(lines) + "\n")
    if render_figures:
        from . import figures
        figures.sweep_figure(report.rows, out / "ratio_sweep.png")


def write_scoring(report: ScoringReport, out_dir, render_figures: bool = True):
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in report.seeds:
        report.scoring[s].write_csv(out / f"scoring_policy_seed{s}.csv")
        report.uniform[s].write_csv(out / f"scoring_uniform_seed{s}.csv")
    lines = ["seed,final_scoring,final_uniform"]
    for s in report.seeds:
        lines.append(f"{s},{report.scoring[s].final_accuracy()!r},"
                     f"{report.uniform[s].final_accuracy()!r}")
    _write(out / "scoring_summary.csv", "\n".join(lines) + "\n")
    if render_figures:
        from . import figures
        figures.accuracy_figure(
            {"scoring": _series_median([report.scoring[s].accuracies() for s in report.seeds]),
             "uniform": _series_median([report.uniform[s].accuracies() for s in report.seeds])},
            out / "scoring_accuracy.png", "reward-penalty policy vs uniform trust")
        first = report.seeds[0]
        n = report.scoring[first].n_trainers
        figures.trust_figure(
            {tid: report.phi_series(first, tid) for tid in range(n)},
            out / "scoring_trust.png", f"trust trajectories (seed {first})")


def write_sync_schemes(report: SyncSchemesReport, out_dir, render_figures: bool = True):
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in report.fixed_rounds:
        safe = name.replace(".", "")
        for s in report.seeds:
            report.fixed_rounds[name][s].write_csv(out / f"sync_{safe}_rounds_seed{s}.csv")
            report.fixed_time[name][s].write_csv(out / f"sync_{safe}_time_seed{s}.csv")
    lines = ["scheme,median_accuracy_at_round_budget,median_rounds_in_time_budget"]
    for name in report.fixed_rounds:
        lines.append(f"{name},{report.median_accuracy_at_end(name)!r},"
                     f"{report.median_rounds_completed(name)!r}")
    _write(out / "sync_schemes_summary.csv", "\n".join(lines) + "\n")
    if render_figures:
        from . import figures
        figures.accuracy_figure(
            {name: _series_median([log.accuracies() for log in report.fixed_rounds[name].values()])
             for name in report.fixed_rounds},
            out / "sync_fixed_rounds.png",
            f"accuracy across {report.rounds} rounds (median of seeds)")
        figures.bar_figure(
            list(report.fixed_time), 
            [report.median_rounds_completed(n) for n in report.fixed_time],
            out / "sync_fixed_time.png",
            f"rounds completed in {report.duration} virtual time units",
            "rounds completed (median of seeds)")


EXPERIMENTS = {
    "benchmark": (run_benchmark, write_benchmark),
    "ratio_sweep": (run_ratio_sweep, write_ratio_sweep),
    "scoring": (run_scoring, write_scoring),
    "sync_schemes": (run_sync_schemes, write_sync_schemes),
}
