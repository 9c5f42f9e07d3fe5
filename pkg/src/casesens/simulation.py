"""Monte Carlo power of broad, narrow and combined sensitivity analyses.

Studies are drawn conditionally on the case labels: each set's first
subject is the broad case, exposed with probability ``p_b`` (Bayes' rule);
the ``J - 1`` referents are exposed independently with the referent
exposure probability; and the case is narrow with probability ``eta_T`` if
exposed, ``eta_C`` otherwise.

Every replicate draws from its own generator seeded with ``[seed, rep]``,
so results do not depend on how replicates are spread over threads.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence, Union

import numpy as np
import pandas as pd

from .bounds import SensitivityParams
from .errors import ParameterError
from .inference import pvalue_bounds
from .power import (
    FavorableModel,
    case_exposure_prob,
    design_sensitivity,
    expected_narrow_sets,
    referent_exposure_prob,
)
from .study import Study

__all__ = [
    "SimConfig",
    "SimResult",
    "draw_sets",
    "generate_study",
    "simulate_power",
    "power_sweep",
    "write_power_table",
    "table2_configs",
    "synthetic_study",
    "TABLE2_BLOCKS",
    "TABLE2_MODELS",
]


@dataclass(frozen=True)
class SimConfig:
    model: FavorableModel
    I: int  # noqa: E741
    reps: int = 3000
    seed: int = 0
    alpha: float = 0.05
    gamma: float = 1.0
    theta: float = 1.0
    method: Literal["exact", "normal"] = "normal"
    theta_sense: str = "upper_only"

    def __post_init__(self):
        if int(self.I) != self.I or self.I < 1:
            raise ParameterError(f"I must be a positive integer, got {self.I}")
        if int(self.reps) != self.reps or self.reps < 1:
            raise ParameterError(f"reps must be a positive integer, got {self.reps}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ParameterError(f"seed must be a nonnegative integer, got {self.seed}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.method not in ("exact", "normal"):
            raise ParameterError(f"method must be 'exact' or 'normal', got {self.method!r}")
        self.model.require_narrow()
        object.__setattr__(self, "I", int(self.I))
        object.__setattr__(self, "reps", int(self.reps))
        object.__setattr__(self, "seed", int(self.seed))
        # validates gamma, theta and theta_sense together
        SensitivityParams(self.gamma, self.theta, self.theta_sense)


@dataclass(frozen=True)
class SimResult:
    """Rejection rates over ``reps`` simulated studies.

    ``zero_narrow_reps`` counts replicates without any narrow-case set;
    they are counted as narrow non-rejections, never resampled.
    """

    power_broad: float
    power_narrow: float
    power_combined: float
    mean_narrow_sets: float
    reps: int
    zero_narrow_reps: int = 0

    @staticmethod
    def _se(p, n):
        return math.sqrt(p * (1.0 - p) / n)

    @property
    def se_broad(self) -> float:
        return self._se(self.power_broad, self.reps)

    @property
    def se_narrow(self) -> float:
        return self._se(self.power_narrow, self.reps)

    @property
    def se_combined(self) -> float:
        return self._se(self.power_combined, self.reps)

    def to_dict(self) -> dict:
        return {
            "power_broad": self.power_broad,
            "power_narrow": self.power_narrow,
            "power_combined": self.power_combined,
            "mc_stderr_broad": self.se_broad,
            "mc_stderr_narrow": self.se_narrow,
            "mc_stderr_combined": self.se_combined,
            "mean_narrow_sets": self.mean_narrow_sets,
            "reps": self.reps,
            "zero_narrow_reps": self.zero_narrow_reps,
        }


def draw_sets(model: FavorableModel, n: int, rng: np.random.Generator):
    """Draw ``n`` matched sets; returns ``(m, y, narrow)`` integer arrays."""
    model.require_narrow()
    y = (rng.random(n) < case_exposure_prob(model, "broad")).astype(np.int64)
    m = y + rng.binomial(model.J - 1, referent_exposure_prob(model), n)
    narrow = (rng.random(n) < np.where(y == 1, model.eta_T, model.eta_C)).astype(np.int64)
    return m, y, narrow


def generate_study(model: FavorableModel, I: int, rng: np.random.Generator) -> Study:  # noqa: E741
    m, y, narrow = draw_sets(model, I, rng)
    return Study(np.arange(1, I + 1), np.full(I, model.J), m, y, narrow)


def _one_rep(cfg: SimConfig, params: SensitivityParams, rep: int):
    rng = np.random.default_rng([cfg.seed, rep])
    m, y, narrow = draw_sets(cfg.model, cfg.I, rng)
    J = np.full(cfg.I, cfg.model.J)
    pb = pvalue_bounds(m, J, y, cfg.gamma, cfg.gamma, method=cfg.method).upper
    keep = narrow == 1
    n_narrow = int(keep.sum())
    if n_narrow:
        pn = pvalue_bounds(m[keep], J[keep], y[keep], params.gamma_lower, params.gamma_upper,
                           method=cfg.method).upper
    else:
        pn = 1.0
    return pb, pn, n_narrow


def simulate_power(cfg: SimConfig, workers: int = 1) -> SimResult:
    """Estimate power of the three tests under ``cfg``.

    The broad test rejects when its worst-case p-value is at most
    ``alpha``, the narrow test likewise under ``(gamma, theta)``, and the
    combined test when either worst-case p-value is at most ``alpha / 2``.
    """
    params = SensitivityParams(cfg.gamma, cfg.theta, cfg.theta_sense)
    out = np.empty((cfg.reps, 3))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for rep, row in enumerate(pool.map(lambda r: _one_rep(cfg, params, r), range(cfg.reps))):
                out[rep] = row
    else:
        for rep in range(cfg.reps):
            out[rep] = _one_rep(cfg, params, rep)
    pb, pn, nn = out[:, 0], out[:, 1], out[:, 2]
    return SimResult(
        power_broad=float(np.mean(pb <= cfg.alpha)),
        power_narrow=float(np.mean(pn <= cfg.alpha)),
        power_combined=float(np.mean(np.minimum(pb, pn) <= cfg.alpha / 2)),
        mean_narrow_sets=float(nn.mean()),
        reps=cfg.reps,
        zero_narrow_reps=int(np.count_nonzero(nn == 0)),
    )


TABLE_COLUMNS = ["gamma", "theta", "I", "b_C", "b_T", "eta_C", "eta_T", "E_narrow",
                 "ds_broad", "ds_narrow", "power_broad", "power_narrow", "power_combined",
                 "zero_narrow_reps"]


def power_sweep(configs: Sequence[SimConfig], workers: int = 1) -> pd.DataFrame:
    """One row per configuration, powers as proportions."""
    configs = list(configs)
    if not configs:
        raise ParameterError("power_sweep needs at least one configuration")
    rows = []
    for cfg in configs:
        res = simulate_power(cfg, workers)
        mdl = cfg.model
        rows.append({
            "gamma": cfg.gamma, "theta": cfg.theta, "I": cfg.I,
            "b_C": mdl.b_C, "b_T": mdl.b_T, "eta_C": mdl.eta_C, "eta_T": mdl.eta_T,
            "E_narrow": expected_narrow_sets(mdl, cfg.I),
            "ds_broad": design_sensitivity(mdl),
            "ds_narrow": design_sensitivity(mdl, cfg.theta, "narrow"),
            "power_broad": res.power_broad, "power_narrow": res.power_narrow,
            "power_combined": res.power_combined, "zero_narrow_reps": res.zero_narrow_reps,
        })
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def write_power_table(table: pd.DataFrame, dest: Union[str, os.PathLike, io.TextIOBase]) -> None:
    """CSV in the published layout: powers in percent with one decimal."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_power_table(table, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in table.itertuples(index=False):
        w.writerow([f"{r.gamma:g}", f"{r.theta:g}", r.I, f"{r.b_C:.2f}", f"{r.b_T:.2f}",
                    f"{r.eta_C:.2f}", f"{r.eta_T:.2f}", int(math.floor(r.E_narrow + 0.5)),
                    f"{r.ds_broad:.1f}", f"{r.ds_narrow:.1f}", f"{100 * r.power_broad:.1f}",
                    f"{100 * r.power_narrow:.1f}", f"{100 * r.power_combined:.1f}",
                    r.zero_narrow_reps])


# (gamma, theta, I) blocks and (b_C, b_T, eta_C, eta_T) models of the
# standard power table; J = 6, pi = 1/3.
TABLE2_BLOCKS = [(g, t, i) for g, i in ((1.0, 18), (3.0, 559), (3.5, 3785)) for t in (1.0, 1.5, 2.0)]
TABLE2_MODELS = [(bc, bt, ec, et) for bc, bt in ((0.01, 0.03), (0.10, 0.30))
                 for ec, et in ((0.80, 0.85), (0.15, 0.20), (0.15, 0.30))]


def table2_configs(reps: int = 3000, seed: int = 1, method: str = "normal") -> list[SimConfig]:
    out = []
    for g, t, i in TABLE2_BLOCKS:
        for bc, bt, ec, et in TABLE2_MODELS:
            model = FavorableModel(1 / 3, bt, bc, et, ec, 6)
            out.append(SimConfig(model, i, reps, seed, 0.05, g, t, method))
    return out


def synthetic_study(I: int = 809, J: int = 6, case_exposure: float = 0.676,  # noqa: E741
                    referent_exposure: float = 0.384, narrow_sets: int = 620,
                    narrow_case_exposure: float = 0.715, seed: int = 0) -> Study:
    """A study with prescribed marginals, for demonstrations and checks.

    Exposed case counts, exposed referent counts and the number of narrow
    sets are fixed at the rounded targets; which sets receive them is
    random.  Among narrow sets, a share ``narrow_case_exposure`` of cases
    is exposed, as far as the exposed and unexposed case counts allow.
    """
    if I < 1 or J < 2 or not 0 <= narrow_sets <= I:
        raise ParameterError("need I >= 1, J >= 2 and 0 <= narrow_sets <= I")
    for name, v in (("case_exposure", case_exposure), ("referent_exposure", referent_exposure),
                    ("narrow_case_exposure", narrow_case_exposure)):
        if not 0.0 <= v <= 1.0:
            raise ParameterError(f"{name} must lie in [0, 1], got {v}")
    rng = np.random.default_rng(seed)
    n_exp = int(round(case_exposure * I))
    y = np.zeros(I, dtype=np.int64)
    y[rng.permutation(I)[:n_exp]] = 1

    n_ref = I * (J - 1)
    ref = np.zeros(n_ref, dtype=np.int64)
    ref[rng.permutation(n_ref)[: int(round(referent_exposure * n_ref))]] = 1
    m = y + ref.reshape(I, J - 1).sum(axis=1)

    want = int(round(narrow_case_exposure * narrow_sets))
    exp_idx = np.flatnonzero(y == 1)
    une_idx = np.flatnonzero(y == 0)
    k_exp = min(want, exp_idx.size, narrow_sets)
    k_exp = max(k_exp, narrow_sets - une_idx.size)
    narrow = np.zeros(I, dtype=np.int64)
    narrow[rng.choice(exp_idx, k_exp, replace=False)] = 1
    narrow[rng.choice(une_idx, narrow_sets - k_exp, replace=False)] = 1
    return Study(np.arange(1, I + 1), np.full(I, J), m, y, narrow)
