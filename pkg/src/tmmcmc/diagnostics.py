"""Chain quality diagnostics.

Integrated autocorrelation time with a self-consistent truncation window,
effective sample size, and the efficiency table comparing methods by
ESS per step, per target evaluation, and per second.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .mcmc import ChainResult


def _autocorrelations(series: np.ndarray) -> np.ndarray:
    """Normalized autocovariance with the biased 1/N convention, via FFT."""
    x = np.asarray(series, dtype=float)
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[:n] / n
    if acov[0] <= 0.0:
        raise ValueError("series has zero variance")
    return acov / acov[0]


def integrated_autocorrelation(series: np.ndarray, window_factor: float = 6.0) -> float:
    """Autocorrelation time normalized so an independent series gives 1.

    The running sum ``0.5 + sum_{t<=W} rho(t)`` is truncated at the first
    lag ``W >= window_factor * sum``; the reported value doubles it, i.e.
    ``1 + 2 sum rho``.
    """
    series = np.asarray(series, dtype=float)
    if series.size < 100:
        raise ValueError("need at least 100 points to estimate the autocorrelation time")
    rho = _autocorrelations(series)
    half = 0.5
    for t in range(1, series.size):
        half += rho[t]
        if t >= window_factor * half:
            break
    return 2.0 * half


def effective_sample_size(series: np.ndarray) -> float:
    """Number of effectively independent points: N over the autocorrelation
    time, the latter floored at 1 so the ESS never exceeds N."""
    series = np.asarray(series, dtype=float)
    tau = max(integrated_autocorrelation(series), 1.0)
    return series.size / tau


@dataclass
class EssReport:
    """Per-chain efficiency summary."""

    autocorr_times: np.ndarray
    min_ess: float
    ess_per_eval: float
    ess_per_second: float
    acceptance_rate: float
    stage_acceptance: dict[int, float]
    n_steps: int
    total_evals: int
    duration_seconds: float

    @property
    def tau_max(self) -> float:
        return float(np.max(self.autocorr_times))

    def to_record(self) -> dict:
        return {
            "autocorr_times": [float(v) for v in self.autocorr_times],
            "tau_max": self.tau_max,
            "min_ess": self.min_ess,
            "ess_per_eval": self.ess_per_eval,
            "ess_per_second": self.ess_per_second,
            "acceptance_rate": self.acceptance_rate,
            "stage_acceptance": {str(k): v for k, v in self.stage_acceptance.items()},
            "n_steps": self.n_steps,
            "total_evals": self.total_evals,
            "duration_seconds": self.duration_seconds,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "EssReport":
        return cls(
            autocorr_times=np.asarray(rec["autocorr_times"], dtype=float),
            min_ess=rec["min_ess"],
            ess_per_eval=rec["ess_per_eval"],
            ess_per_second=rec["ess_per_second"],
            acceptance_rate=rec["acceptance_rate"],
            stage_acceptance={int(k): v for k, v in rec["stage_acceptance"].items()},
            n_steps=rec["n_steps"],
            total_evals=rec["total_evals"],
            duration_seconds=rec["duration_seconds"],
        )


def ess_report(result: ChainResult) -> EssReport:
    """Summarize one chain: autocorrelation times from post-burn-in samples,
    costs (evaluations, seconds) from the whole run including burn-in."""
    kept = result.post_burn_in()
    taus = np.array([integrated_autocorrelation(kept[:, d]) for d in range(result.dim)])
    min_ess = kept.shape[0] / max(float(taus.max()), 1.0)
    stages = sorted(set(result.accept_stage[result.accept_stage > 0].tolist())) or [1]
    stage_acc = {int(s): result.acceptance_rate(stage=int(s)) for s in stages}
    return EssReport(
        autocorr_times=taus,
        min_ess=min_ess,
        ess_per_eval=min_ess / max(result.total_evals, 1),
        ess_per_second=min_ess / max(result.duration_seconds, 1e-12),
        acceptance_rate=result.acceptance_rate(),
        stage_acceptance=stage_acc,
        n_steps=result.n_steps,
        total_evals=result.total_evals,
        duration_seconds=result.duration_seconds,
    )


@dataclass
class MethodSummary:
    """Replicate-averaged efficiency of one method."""

    name: str
    tau_max: float
    sigma_tau: float
    min_ess: float
    ess_per_second: float
    ess_per_eval: float
    rel_ess_per_second: float = math.nan
    rel_ess_per_eval: float = math.nan
    n_replicates: int = 1

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "tau_max": self.tau_max,
            "sigma_tau": self.sigma_tau,
            "min_ess": self.min_ess,
            "ess_per_second": self.ess_per_second,
            "ess_per_eval": self.ess_per_eval,
            "rel_ess_per_second": self.rel_ess_per_second,
            "rel_ess_per_eval": self.rel_ess_per_eval,
            "n_replicates": self.n_replicates,
        }


@dataclass
class EfficiencyTable:
    rows: list[MethodSummary]
    baseline: str

    def to_records(self) -> list[dict]:
        return [row.to_record() for row in self.rows]

    def to_json(self) -> str:
        return json.dumps({"baseline": self.baseline, "methods": self.to_records()}, indent=2)

    def to_text(self) -> str:
        headers = [
            "method", "tau_max", "sigma_tau", "ESS", "ESS/sec", "ESS/eval",
            "Rel ESS/sec", "Rel ESS/eval",
        ]
        body = []
        for row in self.rows:
            body.append(
                [
                    row.name,
                    f"{row.tau_max:.1f}",
                    f"{row.sigma_tau:.1f}",
                    f"{row.min_ess:.0f}",
                    f"{row.ess_per_second:.2e}",
                    f"{row.ess_per_eval:.2e}",
                    f"{row.rel_ess_per_second:.2f}",
                    f"{row.rel_ess_per_eval:.2f}",
                ]
            )
        widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(headers)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        lines.append("  ".join("-" * w for w in widths))
        for r in body:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)


def _summaries_from_reports(name: str, reports: list[EssReport]) -> MethodSummary:
    taus = np.array([rep.tau_max for rep in reports])
    return MethodSummary(
        name=name,
        tau_max=float(taus.mean()),
        sigma_tau=float(taus.std(ddof=1)) if len(taus) > 1 else 0.0,
        min_ess=float(np.mean([rep.min_ess for rep in reports])),
        ess_per_second=float(np.mean([rep.ess_per_second for rep in reports])),
        ess_per_eval=float(np.mean([rep.ess_per_eval for rep in reports])),
        n_replicates=len(reports),
    )


def efficiency_table(
    results: list[tuple[str, ChainResult]] | dict[str, list[EssReport]],
    baseline: str | None = None,
) -> EfficiencyTable:
    """Replicate-aware comparison table.

    ``results`` is either ``(name, ChainResult)`` pairs (several pairs may
    share a name, forming replicates) or a mapping from method name to
    precomputed reports. Relative columns are measured against ``baseline``
    (default: the first method).
    """
    grouped: dict[str, list[EssReport]] = {}
    if isinstance(results, dict):
        grouped = {k: list(v) for k, v in results.items()}
    else:
        if not results:
            raise ValueError("need at least one result")
        for name, res in results:
            grouped.setdefault(name, []).append(ess_report(res))
    names = list(grouped)
    baseline = baseline or names[0]
    if baseline not in grouped:
        raise ValueError(f"baseline {baseline!r} not among methods {names}")
    rows = [_summaries_from_reports(name, reps) for name, reps in grouped.items()]
    base = next(r for r in rows if r.name == baseline)
    for row in rows:
        row.rel_ess_per_second = row.ess_per_second / base.ess_per_second
        row.rel_ess_per_eval = row.ess_per_eval / base.ess_per_eval
    return EfficiencyTable(rows=rows, baseline=baseline)
